//! Smallest homogeneous class size meeting a risk threshold.

use serde::Serialize;

use crate::analytic::single_risk;
use crate::recursive::{multi_patient_risk, RecursionState};
use crate::scenario::{AttackScenario, ClassSizeDistribution};
use crate::{Backend, Error, Probability, Result};

/// Common ceiling on single-patient re-identification probability.
pub const SINGLE_PATIENT_CEILING: f64 = 0.33;
/// Stricter band often quoted for released health data.
pub const STRICT_BAND: (f64, f64) = (0.05, 0.09);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakSpec {
    Absolute(u64),
    /// Fraction of the dataset, in `(0, 1]`.
    Fraction(f64),
}

impl LeakSpec {
    /// Leak size against a population of `population`, clamped to `1..=population`.
    pub fn resolve(&self, population: u64) -> u64 {
        let l = match *self {
            LeakSpec::Absolute(l) => l,
            LeakSpec::Fraction(f) => (f * population as f64).round() as u64,
        };
        l.clamp(1, population)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Analytic,
    Recursive { targets: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRequest {
    pub dataset_size: u64,
    pub leak: LeakSpec,
    pub threshold: f64,
    pub solver: Solver,
    pub backend: Backend,
}

impl CalibrationRequest {
    pub fn analytic(dataset_size: u64, leak: LeakSpec, threshold: f64) -> Self {
        Self {
            dataset_size,
            leak,
            threshold,
            solver: Solver::Analytic,
            backend: Backend::Log,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.dataset_size;
        if d == 0 {
            return Err(Error::domain("dataset size must be positive"));
        }
        match self.leak {
            LeakSpec::Absolute(l) if l == 0 || l > d => {
                return Err(Error::domain(format!("leak size {l} must lie in 1..={d}")));
            }
            LeakSpec::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::domain(format!("leak fraction {f} must lie in (0, 1]")));
            }
            _ => {}
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::domain(format!("threshold {} must lie in (0, 1]", self.threshold)));
        }
        if let Solver::Recursive { targets } = self.solver {
            if targets == 0 || targets > self.leak.resolve(d) {
                return Err(Error::domain(format!("target count {targets} must lie in 1..=L")));
            }
        }
        Ok(())
    }
}

/// Homogeneous scenario for a `k` that need not divide `D`: the model uses
/// `D' = k * floor(D/k)` patients and a leak of `min(L, D')`.
pub fn relaxed_scenario(dataset_size: u64, leak: LeakSpec, k: u64) -> Result<(AttackScenario, bool)> {
    if k == 0 || k > dataset_size {
        return Err(Error::domain(format!("class size {k} must lie in 1..={dataset_size}")));
    }
    let d = k * (dataset_size / k);
    let l = match leak {
        LeakSpec::Absolute(l) => l.min(d),
        fraction => fraction.resolve(d),
    };
    Ok((AttackScenario::homogeneous(d, l, k)?, d != dataset_size))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub k: u64,
    /// `D'` actually modelled.
    pub dataset_size: u64,
    pub leak_size: u64,
    pub probability: Probability,
    /// True when `k` does not divide the requested `D`.
    pub relaxed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub k_min: u64,
    pub probability: Probability,
    /// Every `k` evaluated, ascending, ending at `k_min`.
    pub trace: Vec<ScanPoint>,
}

/// Linear scan `k = 1, 2, ...` up to `D`, stopping at the first `k` whose
/// risk is at most the threshold.
pub fn calibrate_k(request: &CalibrationRequest) -> Result<Calibration> {
    request.validate()?;
    let mut trace: Vec<ScanPoint> = Vec::new();
    for k in 1..=request.dataset_size {
        let (scenario, relaxed) = relaxed_scenario(request.dataset_size, request.leak, k)?;
        let probability = evaluate(&scenario, request.solver, request.backend)?;
        let hit = meets(&probability, request.threshold);
        trace.push(ScanPoint {
            k,
            dataset_size: scenario.dataset_size(),
            leak_size: scenario.leak_size(),
            probability: probability.clone(),
            relaxed,
        });
        if hit {
            return Ok(Calibration {
                k_min: k,
                probability,
                trace,
            });
        }
    }
    let best = trace
        .iter()
        .min_by(|a, b| a.probability.value().total_cmp(&b.probability.value()))
        .expect("scan visits k = 1");
    Err(Error::Unreachable {
        threshold: request.threshold,
        best: best.probability.value(),
        best_k: best.k,
    })
}

/// `P <= threshold`, allowing a few ulps of rounding in floating-point results.
fn meets(probability: &Probability, threshold: f64) -> bool {
    match probability {
        Probability::Exact(_) => probability.value() <= threshold,
        Probability::Real(p) => *p <= threshold * (1.0 + 4.0 * f64::EPSILON),
    }
}

fn evaluate(scenario: &AttackScenario, solver: Solver, backend: Backend) -> Result<Probability> {
    match solver {
        Solver::Analytic => single_risk(scenario, backend),
        Solver::Recursive { targets } => {
            if targets > scenario.leak_size() {
                return Ok(Probability::zero(backend.resolve(scenario.dataset_size())));
            }
            let k = scenario.homogeneous_k().expect("relaxed scenarios are homogeneous");
            let dist = ClassSizeDistribution::homogeneous(k, scenario.dataset_size() / k);
            multi_patient_risk(&RecursionState::new(dist, scenario.leak_size(), targets)?, backend)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceiling_at_four_thousand_leaked() {
        let cal = calibrate_k(&CalibrationRequest::analytic(10_000, LeakSpec::Absolute(4_000), SINGLE_PATIENT_CEILING)).unwrap();
        assert_eq!(cal.k_min, 2);
        assert!((cal.probability.value() - 0.3200).abs() < 5e-5);
        assert_eq!(cal.trace.len(), 2);
        assert!(cal.trace[0].probability.value() > 0.33);
    }

    #[test]
    fn strict_band_needs_twenty() {
        let cal = calibrate_k(&CalibrationRequest::analytic(10_000, LeakSpec::Fraction(0.4), STRICT_BAND.0)).unwrap();
        assert_eq!(cal.k_min, 20);
        let p19 = cal.trace[18].probability.value();
        assert!(p19 > 0.05 && (p19 - 0.0526).abs() < 1e-4);
        assert!(cal.trace.iter().any(|p| p.relaxed));
    }

    #[test]
    fn single_leak_needs_no_grouping() {
        let cal = calibrate_k(&CalibrationRequest::analytic(777, LeakSpec::Absolute(1), 1.0 / 777.0)).unwrap();
        assert_eq!(cal.k_min, 1);
    }

    #[test]
    fn unreachable_threshold_reports_best() {
        match calibrate_k(&CalibrationRequest::analytic(12, LeakSpec::Absolute(12), 0.01)) {
            Err(Error::Unreachable { best, best_k: 12, .. }) => assert!((best - 1.0 / 12.0).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recursive_solver_matches_analytic_for_one_target() {
        let mut req = CalibrationRequest::analytic(60, LeakSpec::Absolute(30), 0.1);
        req.backend = Backend::Exact;
        let a = calibrate_k(&req).unwrap();
        req.solver = Solver::Recursive { targets: 1 };
        let r = calibrate_k(&req).unwrap();
        assert_eq!(a, r);
    }

    #[test]
    fn invalid_requests() {
        assert!(calibrate_k(&CalibrationRequest::analytic(10, LeakSpec::Absolute(11), 0.3)).is_err());
        assert!(calibrate_k(&CalibrationRequest::analytic(10, LeakSpec::Fraction(0.0), 0.3)).is_err());
        assert!(calibrate_k(&CalibrationRequest::analytic(10, LeakSpec::Absolute(5), 0.0)).is_err());
        let mut req = CalibrationRequest::analytic(10, LeakSpec::Absolute(5), 0.3);
        req.solver = Solver::Recursive { targets: 6 };
        assert!(calibrate_k(&req).unwrap_err().is_domain_violation());
    }

    #[test]
    fn relaxation() {
        let (s, relaxed) = relaxed_scenario(10, LeakSpec::Absolute(10), 3).unwrap();
        assert!(relaxed);
        assert_eq!((s.dataset_size(), s.leak_size()), (9, 9));
        let (s, relaxed) = relaxed_scenario(10, LeakSpec::Fraction(0.5), 5).unwrap();
        assert!(!relaxed);
        assert_eq!(s.leak_size(), 5);
    }
}
