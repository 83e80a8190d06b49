//! Long-format data for the risk figures and the class-distribution comparison.
//!
//! Rows are emitted in a fixed order (series, then x) regardless of how the
//! points were scheduled.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::analytic::single_risk;
use crate::calibrate::{relaxed_scenario, LeakSpec};
use crate::execution::{map_indexed, Execution};
use crate::recursive::{RecursionState, RecursiveSolver};
use crate::scenario::ClassSizeDistribution;
use crate::simulation::{simulate_multi, simulate_single, RiskEstimate, SimulationConfig};
use crate::{Backend, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureId {
    Fig2,
    Fig3a,
    Fig3b,
    Fig4a,
    Fig4b,
    Fig5,
}

impl FigureId {
    pub const ALL: [FigureId; 6] = [
        FigureId::Fig2,
        FigureId::Fig3a,
        FigureId::Fig3b,
        FigureId::Fig4a,
        FigureId::Fig4b,
        FigureId::Fig5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FigureId::Fig2 => "fig2",
            FigureId::Fig3a => "fig3a",
            FigureId::Fig3b => "fig3b",
            FigureId::Fig4a => "fig4a",
            FigureId::Fig4b => "fig4b",
            FigureId::Fig5 => "fig5",
        }
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigureId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownFigure(s.to_owned()))
    }
}

/// Overrides for a figure's defaults; `None` keeps the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FigureParams {
    pub dataset_size: Option<u64>,
    pub leak_sizes: Option<Vec<u64>>,
    pub ks: Option<Vec<u64>>,
    pub targets: Option<Vec<u64>>,
    pub trials: Option<u64>,
    pub samples: Option<usize>,
    pub std_dev: Option<f64>,
    /// Skip the Monte Carlo series.
    pub analytic_only: bool,
    pub backend: Backend,
    #[serde(skip)]
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
    /// `ln y` for probability rows; absent for histogram frequencies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ln_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FigureRow {
    fn exact(series: String, x: f64, y: f64, ln_y: f64) -> Self {
        Self {
            series,
            x,
            y,
            ln_y: Some(ln_y),
            ci_low: None,
            ci_high: None,
            trials: None,
            seed: None,
        }
    }

    fn simulated(series: String, x: f64, est: &RiskEstimate) -> Self {
        Self {
            series,
            x,
            y: est.mean,
            ln_y: Some(est.mean.ln()),
            ci_low: Some(est.ci95_low),
            ci_high: Some(est.ci95_high),
            trials: Some(est.trials),
            seed: Some(est.seed),
        }
    }
}

/// Independent per-point seed (SplitMix64 of `seed` and `index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const DEFAULT_D: u64 = 10_000;

fn range(start: u64, end: u64, step: u64) -> Vec<u64> {
    (start..=end).step_by(step as usize).collect()
}

/// Regenerates the data behind one figure.
pub fn figure_data(id: FigureId, params: &FigureParams, seed: u64) -> Result<Vec<FigureRow>> {
    let d = params.dataset_size.unwrap_or(DEFAULT_D);
    let trials = params.trials.unwrap_or(1_000);
    let p = params;
    match id {
        FigureId::Fig2 => {
            let ls = p.leak_sizes.clone().unwrap_or_else(|| range(1_000, 4_000.min(d), 500));
            let ks = p.ks.clone().unwrap_or_else(|| vec![1, 2, 5, 10, 15, 20]);
            single_grid(d, &ls, &ks, trials, seed, p, GridAxis::Leak, &[])
        }
        FigureId::Fig3a => {
            let ls = p.leak_sizes.clone().unwrap_or_else(|| vec![4_000.min(d)]);
            let ks = p.ks.clone().unwrap_or_else(|| (1..=20).collect());
            single_grid(d, &ls, &ks, trials, seed, p, GridAxis::ClassSize, &[1, 10, 20])
        }
        FigureId::Fig3b => {
            let ls = p.leak_sizes.clone().unwrap_or_else(|| range(1_000, 4_000.min(d), 1_000));
            let ks = p.ks.clone().unwrap_or_else(|| vec![5]);
            let hist: Vec<u64> = ls.clone();
            single_grid(d, &ls, &ks, trials, seed, p, GridAxis::Leak, &hist)
        }
        FigureId::Fig4a => {
            let ls = p.leak_sizes.clone().unwrap_or_else(|| vec![d]);
            let ks = p.ks.clone().unwrap_or_else(|| vec![5, 10, 15, 20]);
            let ns = p.targets.clone().unwrap_or_else(|| (1..=15).collect());
            multi_grid(d, &ls, &ks, &ns, trials, seed, p, GridAxis::Targets)
        }
        FigureId::Fig4b => {
            let ls = p.leak_sizes.clone().unwrap_or_else(|| range(1_000.min(d), d, 1_000));
            let ks = p.ks.clone().unwrap_or_else(|| vec![5]);
            let ns = p.targets.clone().unwrap_or_else(|| vec![5, 10, 15]);
            let analytic_only = FigureParams {
                analytic_only: true,
                ..p.clone()
            };
            multi_grid(d, &ls, &ks, &ns, trials, seed, &analytic_only, GridAxis::Leak)
        }
        FigureId::Fig5 => {
            let k_min = p.ks.as_ref().and_then(|ks| ks.first().copied()).unwrap_or(5);
            let n_max = p.targets.as_ref().and_then(|ns| ns.iter().max().copied()).unwrap_or(10);
            let opts = CompareOptions {
                std_dev: p.std_dev,
                backend: p.backend,
                execution: p.execution,
            };
            Ok(compare_class_distributions(d, k_min, p.samples.unwrap_or(20), n_max, seed, &opts)?.rows)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GridAxis {
    Leak,
    ClassSize,
    Targets,
}

#[derive(Clone, Copy)]
struct GridPoint {
    k: u64,
    l: u64,
    n: u64,
    index: u64,
}

fn grid_points(ks: &[u64], ls: &[u64], ns: &[u64]) -> Vec<GridPoint> {
    let mut ks = ks.to_vec();
    let mut ls = ls.to_vec();
    let mut ns = ns.to_vec();
    for v in [&mut ks, &mut ls, &mut ns] {
        v.sort_unstable();
        v.dedup();
    }
    let mut out = Vec::new();
    for &k in &ks {
        for &l in &ls {
            for &n in &ns {
                out.push(GridPoint {
                    k,
                    l,
                    n,
                    index: out.len() as u64,
                });
            }
        }
    }
    out
}

fn wrap(point: &GridPoint) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::GridPoint {
        k: point.k,
        leak_size: point.l,
        source: Box::new(e),
    }
}

fn axis_label(axis: GridAxis, pt: &GridPoint) -> (String, f64) {
    match axis {
        GridAxis::Leak => (format!("k={}", pt.k), pt.l as f64),
        GridAxis::ClassSize => (format!("L={}", pt.l), pt.k as f64),
        GridAxis::Targets => (format!("k={}", pt.k), pt.n as f64),
    }
}

/// Analytic and simulated single-patient risk on a `(k, L)` grid, plus
/// risk histograms for the points whose `k` (class-size axis) or `L` (leak
/// axis) is listed in `histograms`.
#[allow(clippy::too_many_arguments)]
fn single_grid(
    d: u64,
    ls: &[u64],
    ks: &[u64],
    trials: u64,
    seed: u64,
    p: &FigureParams,
    axis: GridAxis,
    histograms: &[u64],
) -> Result<Vec<FigureRow>> {
    let points = grid_points(ks, ls, &[1]);
    let results = map_indexed(points.len(), p.execution, |i| -> Result<_> {
        let pt = &points[i];
        let (scenario, _) = relaxed_scenario(d, LeakSpec::Absolute(pt.l), pt.k).map_err(wrap(pt))?;
        let exact = single_risk(&scenario, p.backend).map_err(wrap(pt))?;
        let want_hist = match axis {
            GridAxis::ClassSize => histograms.contains(&pt.k),
            _ => histograms.contains(&pt.l),
        };
        let sim = if p.analytic_only {
            None
        } else {
            let cfg = SimulationConfig::new(trials, derive_seed(seed, pt.index)).with_histogram(want_hist);
            Some(simulate_single(&scenario, &cfg).map_err(wrap(pt))?)
        };
        Ok((exact, sim))
    });
    let results: Vec<_> = results.into_iter().collect::<Result<_>>()?;

    let mut analytic = Vec::new();
    let mut simulated = Vec::new();
    let mut hist_rows = Vec::new();
    for (pt, (exact, sim)) in points.iter().zip(&results) {
        let (series, x) = axis_label(axis, pt);
        analytic.push(FigureRow::exact(format!("analytic {series}"), x, exact.value(), exact.ln()));
        if let Some(est) = sim {
            simulated.push(FigureRow::simulated(format!("simulated {series}"), x, est));
            for bin in est.histogram.iter().flatten() {
                hist_rows.push(FigureRow {
                    series: format!("histogram k={} L={}", pt.k, pt.l),
                    x: if bin.low == bin.high { bin.low } else { f64::NAN },
                    y: bin.frequency,
                    ln_y: None,
                    ci_low: None,
                    ci_high: None,
                    trials: Some(est.trials),
                    seed: Some(est.seed),
                });
            }
        }
    }
    Ok(sort_rows(analytic.into_iter().chain(simulated).chain(hist_rows).collect()))
}

/// Recursive (and, unless disabled, simulated) multi-patient risk on a
/// `(k, L, n)` grid. The x axis is `n` or `L`; other axes go in the label.
#[allow(clippy::too_many_arguments)]
fn multi_grid(
    d: u64,
    ls: &[u64],
    ks: &[u64],
    ns: &[u64],
    trials: u64,
    seed: u64,
    p: &FigureParams,
    axis: GridAxis,
) -> Result<Vec<FigureRow>> {
    let points = grid_points(ks, ls, ns);
    let results = map_indexed(points.len(), p.execution, |i| -> Result<_> {
        let pt = &points[i];
        let (scenario, _) = relaxed_scenario(d, LeakSpec::Absolute(pt.l), pt.k).map_err(wrap(pt))?;
        let dist = scenario.distribution();
        let state = RecursionState::new(dist, scenario.leak_size(), pt.n).map_err(wrap(pt))?;
        let exact = RecursiveSolver::new(p.backend).probability(&state).map_err(wrap(pt))?;
        let sim = if p.analytic_only {
            None
        } else {
            let cfg = SimulationConfig::new(trials, derive_seed(seed, pt.index));
            Some(simulate_multi(&scenario, pt.n, &cfg).map_err(wrap(pt))?)
        };
        Ok((exact, sim))
    });
    let results: Vec<_> = results.into_iter().collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (pt, (exact, sim)) in points.iter().zip(&results) {
        let (series, x) = match axis {
            GridAxis::Leak => (format!("k={} n={}", pt.k, pt.n), pt.l as f64),
            _ => (format!("k={} L={}", pt.k, pt.l), pt.n as f64),
        };
        rows.push(FigureRow::exact(format!("recursive {series}"), x, exact.value(), exact.ln()));
        if let Some(est) = sim {
            rows.push(FigureRow::simulated(format!("simulated {series}"), x, est));
        }
    }
    Ok(sort_rows(rows))
}

/// Stable sort by series label, then `x`; histogram residual bins (NaN x) last.
fn sort_rows(mut rows: Vec<FigureRow>) -> Vec<FigureRow> {
    rows.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.total_cmp(&b.x)));
    rows
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CompareOptions {
    /// Spread of the truncated normal; defaults to `k_min / 2`.
    pub std_dev: Option<f64>,
    pub backend: Backend,
    #[serde(skip)]
    pub execution: Execution,
}

/// A point where a sampled heterogeneous curve exceeds the homogeneous one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dominance {
    pub sample: usize,
    pub n: u64,
    pub homogeneous: f64,
    pub heterogeneous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub homogeneous: Vec<f64>,
    /// `heterogeneous[s][n-1]`.
    pub heterogeneous: Vec<Vec<f64>>,
    pub distributions: Vec<ClassSizeDistribution>,
    pub violations: Vec<Dominance>,
    pub rows: Vec<FigureRow>,
}

/// Relative slack before a heterogeneous value counts as exceeding the homogeneous one.
const DOMINANCE_TOLERANCE: f64 = 1e-12;
const MAX_REDRAWS: usize = 64;

/// Samples class-size histograms covering exactly `D` patients, sizes drawn
/// from a normal with mean `k_min` truncated below at `k_min`.
///
/// The last class takes whatever remains when a draw would overshoot. A draw
/// leaving a remainder in `(0, k_min)` is redrawn, and after
/// 64 failed redraws the remainder is absorbed into the current class.
pub fn sample_class_sizes(dataset_size: u64, k_min: u64, std_dev: f64, rng: &mut impl Rng) -> Result<ClassSizeDistribution> {
    if k_min == 0 || dataset_size < k_min {
        return Err(Error::domain(format!("cannot fill {dataset_size} patients with classes of at least {k_min}")));
    }
    if !(std_dev >= 0.0 && std_dev.is_finite()) {
        return Err(Error::domain(format!("standard deviation {std_dev} must be finite and non-negative")));
    }
    let normal = Normal::new(k_min as f64, std_dev).map_err(|e| Error::domain(e.to_string()))?;
    let mut draw = || loop {
        let x: f64 = normal.sample(rng);
        if x >= k_min as f64 {
            return (x.round() as u64).max(k_min);
        }
    };
    let mut sizes = Vec::new();
    let mut remaining = dataset_size;
    while remaining > 0 {
        let mut size = draw();
        let mut tries = 0;
        while remaining > size && remaining - size < k_min {
            tries += 1;
            if tries >= MAX_REDRAWS {
                size = remaining;
                break;
            }
            size = draw();
        }
        let size = size.min(remaining);
        sizes.push(size);
        remaining -= size;
    }
    Ok(ClassSizeDistribution::from_class_sizes(sizes))
}

/// Multi-patient risk at `L = D` for `n = 1..=n_max`: a homogeneous
/// `k_min` baseline against `samples` sampled heterogeneous histograms.
pub fn compare_class_distributions(
    dataset_size: u64,
    k_min: u64,
    samples: usize,
    n_max: u64,
    seed: u64,
    opts: &CompareOptions,
) -> Result<Comparison> {
    if samples == 0 {
        return Err(Error::domain("at least one sample is required"));
    }
    if k_min == 0 || dataset_size < k_min {
        return Err(Error::domain(format!("dataset size {dataset_size} is below k_min {k_min}")));
    }
    let std_dev = opts.std_dev.unwrap_or(k_min as f64 / 2.0);
    let base_d = k_min * (dataset_size / k_min);
    let baseline = ClassSizeDistribution::homogeneous(k_min, base_d / k_min);

    let mut distributions = vec![baseline];
    for s in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64));
        distributions.push(sample_class_sizes(dataset_size, k_min, std_dev, &mut rng)?);
    }
    let curves = map_indexed(distributions.len(), opts.execution, |i| curve(&distributions[i], n_max, opts.backend));
    let mut curves: Vec<Vec<f64>> = curves.into_iter().collect::<Result<_>>()?;
    let homogeneous = curves.remove(0);
    distributions.remove(0);

    let mut violations = Vec::new();
    let mut rows = Vec::new();
    for (n, &h) in homogeneous.iter().enumerate() {
        rows.push(FigureRow::exact("homogeneous".into(), (n + 1) as f64, h, h.ln()));
    }
    for (s, het) in curves.iter().enumerate() {
        for (n, (&y, &h)) in het.iter().zip(&homogeneous).enumerate() {
            if y > h * (1.0 + DOMINANCE_TOLERANCE) {
                violations.push(Dominance {
                    sample: s,
                    n: n as u64 + 1,
                    homogeneous: h,
                    heterogeneous: y,
                });
            }
            rows.push(FigureRow::exact(format!("sample {s:03}"), (n + 1) as f64, y, y.ln()));
        }
    }
    Ok(Comparison {
        homogeneous,
        heterogeneous: curves,
        distributions,
        violations,
        rows,
    })
}

fn curve(dist: &ClassSizeDistribution, n_max: u64, backend: Backend) -> Result<Vec<f64>> {
    let d = dist.implied_population();
    let mut solver = RecursiveSolver::new(backend);
    (1..=n_max)
        .map(|n| {
            if n > d {
                return Ok(0.0);
            }
            Ok(solver.probability(&RecursionState::new(dist.clone(), d, n)?)?.value())
        })
        .collect()
}
