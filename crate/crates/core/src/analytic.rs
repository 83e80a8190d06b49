//! Single-patient re-identification probability for homogeneous classes.
//!
//! A target in a class of `k` patients is identified when it is leaked and
//! the adversary picks it among the `h` leaked classmates (itself included).
//! Averaging over all `D` patients gives
//!
//! ```text
//! P = (1/k) * sum_{h=1..k} C(k,h) C(D-k, L-h) / C(D,L)
//!   = (1/k) * (1 - C(D-k, L) / C(D, L))
//! ```
//!
//! The second form is [`single_risk_closed`]; both are kept so that each can
//! check the other.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::combinatorics::{hypergeom_ln_pmf, ln_one_minus_ratio, hypergeom_pmf_exact, log_sum_exp, CompensatedSum};
use crate::execution::{map_indexed, Execution};
use crate::recursive::{multi_patient_risk, RecursionState};
use crate::scenario::{AttackScenario, ClassStructure};
use crate::{Backend, Error, Probability, Result};

/// Probability that one uniformly chosen patient is re-identified.
///
/// Heterogeneous scenarios are delegated to the recursive solver with a
/// single target.
pub fn single_risk(scenario: &AttackScenario, backend: Backend) -> Result<Probability> {
    let k = match scenario.classes() {
        ClassStructure::Homogeneous { k } => *k,
        ClassStructure::Heterogeneous(dist) => {
            let state = RecursionState::new(dist.clone(), scenario.leak_size(), 1)?;
            return multi_patient_risk(&state, backend);
        }
    };
    let (d, l) = (scenario.dataset_size(), scenario.leak_size());
    Ok(match backend.resolve(d) {
        Backend::Exact => {
            let sum: BigRational = (1..=k).map(|h| hypergeom_pmf_exact(k, d, l, h)).sum();
            Probability::Exact(sum / BigInt::from(k))
        }
        _ => {
            let logs: Vec<f64> = (1..=k).map(|h| hypergeom_ln_pmf(k, d, l, h)).collect();
            Probability::real(log_sum_exp(&logs).exp() / k as f64)
        }
    })
}

/// `(1/k) (1 - prod_{i<k} (D-L-i)/(D-i))`, the complement form of [`single_risk`].
pub fn single_risk_closed(scenario: &AttackScenario, backend: Backend) -> Result<Probability> {
    let Some(k) = scenario.homogeneous_k() else {
        return Err(Error::domain("closed form requires homogeneous classes"));
    };
    let (d, l) = (scenario.dataset_size(), scenario.leak_size());
    Ok(match backend.resolve(d) {
        Backend::Exact => {
            let mut none_leaked = BigRational::one();
            for i in 0..k {
                if d - l <= i {
                    none_leaked = BigRational::zero();
                    break;
                }
                none_leaked *= BigRational::new((d - l - i).into(), (d - i).into());
            }
            Probability::Exact((BigRational::one() - none_leaked) / BigInt::from(k))
        }
        _ => {
            // 1 - prod (1 - L/(D-i)) = -expm1(sum ln(1 - L/(D-i)))
            let log_none: CompensatedSum = (0..k).map(|i| ln_one_minus_ratio(l.min(d - i), d - i)).collect();
            Probability::real(-log_none.total().exp_m1() / k as f64)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: u64,
    pub leak_size: u64,
    pub probability: Probability,
}

/// [`single_risk`] over a `(k, L)` grid at fixed `D`.
///
/// Rows come out ordered by `k`, then `L`, both ascending; duplicate grid
/// values are collapsed. A failing point is reported with its coordinates.
pub fn risk_sweep(
    dataset_size: u64,
    leak_sizes: &[u64],
    ks: &[u64],
    backend: Backend,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut ls = leak_sizes.to_vec();
    ls.sort_unstable();
    ls.dedup();
    let grid: Vec<(u64, u64)> = ks.iter().flat_map(|&k| ls.iter().map(move |&l| (k, l))).collect();
    map_indexed(grid.len(), exec, |i| {
        let (k, l) = grid[i];
        AttackScenario::homogeneous(dataset_size, l, k)
            .and_then(|s| single_risk(&s, backend))
            .map(|probability| SweepRow {
                k,
                leak_size: l,
                probability,
            })
            .map_err(|e| Error::GridPoint {
                k,
                leak_size: l,
                source: Box::new(e),
            })
    })
    .into_iter()
    .collect()
}
