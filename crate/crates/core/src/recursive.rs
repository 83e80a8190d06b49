//! Probability that `n` patients are all re-identified in one attack.
//!
//! The first target lies in a class of size `k` with probability
//! `k * a_k / D`, is leaked with probability `L / D`, has `j` leaked
//! classmates with hypergeometric probability over the remaining `D - 1`
//! patients, and is then picked with probability `1 / (j + 1)`. After an
//! identification the state moves to `(a', L - 1, D - 1, n - 1)` where one
//! size-`k` class became a size-`k - 1` class, and the per-branch
//! probabilities are multiplied down the tree.
//!
//! Sub-results are memoized on `(a, L, n)`; `D` is implied by `a`.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::combinatorics::{hypergeom_ln_pmf, hypergeom_pmf_exact, CompensatedSum};
use crate::scenario::ClassSizeDistribution;
use crate::{Backend, Error, Probability, Result};

/// Solver state: class histogram, leak still unexplained, targets still to identify.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct RecursionState {
    pub distribution: ClassSizeDistribution,
    pub leak_remaining: u64,
    pub targets_remaining: u64,
}

impl RecursionState {
    pub fn new(distribution: ClassSizeDistribution, leak_remaining: u64, targets_remaining: u64) -> Result<Self> {
        let d = distribution.implied_population();
        if leak_remaining > d {
            return Err(Error::domain(format!(
                "leak size {leak_remaining} exceeds the {d} patients in the class histogram"
            )));
        }
        if targets_remaining > leak_remaining {
            return Err(Error::domain(format!(
                "cannot identify {targets_remaining} patients from a leak of {leak_remaining}"
            )));
        }
        Ok(Self {
            distribution,
            leak_remaining,
            targets_remaining,
        })
    }

    pub fn population(&self) -> u64 {
        self.distribution.implied_population()
    }
}

/// One cell of the triangular event array: the first target is in a class
/// of size `class_size` and `others_leaked` of its classmates were leaked.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstPatientTerm {
    pub class_size: u64,
    pub others_leaked: u64,
    pub probability: Probability,
}

/// All `(k, j)` terms for the next identification, `j` running over `0..k`
/// (structural zeros included). Their sum is the single-target risk.
pub fn first_patient_terms(state: &RecursionState, backend: Backend) -> Result<Vec<FirstPatientTerm>> {
    let d = state.population();
    let l = state.leak_remaining;
    if l == 0 || d == 0 {
        return Err(Error::domain("first-patient terms need a nonempty leak and population"));
    }
    let exact = backend.resolve(d) == Backend::Exact;
    let a = &state.distribution;
    let mut out = Vec::new();
    for k in a.occupied_sizes() {
        for j in 0..k {
            let probability = if exact {
                Probability::Exact(<BigRational as Weight>::term(k, j, l, d, a.count(k)))
            } else {
                Probability::real(<f64 as Weight>::term(k, j, l, d, a.count(k)))
            };
            out.push(FirstPatientTerm {
                class_size: k,
                others_leaked: j,
                probability,
            });
        }
    }
    Ok(out)
}

/// `a_k -= 1, a_{k-1} += 1`.
pub fn apply_identification(distribution: &ClassSizeDistribution, k: u64) -> Result<ClassSizeDistribution> {
    distribution.apply_identification(k)
}

/// Probability that `state.targets_remaining` uniformly chosen distinct
/// patients are all re-identified. Uses a fresh memo table.
pub fn multi_patient_risk(state: &RecursionState, backend: Backend) -> Result<Probability> {
    RecursiveSolver::new(backend).probability(state)
}

type MemoKey = (Vec<u64>, u64, u64);

/// Memoizing solver. Reuse one instance to share sub-results across queries
/// (e.g. successive `n` for the same histogram and leak).
#[derive(Debug, Default)]
pub struct RecursiveSolver {
    backend: Backend,
    memoize: bool,
    real: HashMap<MemoKey, (u64, f64)>,
    exact: HashMap<MemoKey, (u64, BigRational)>,
}

impl RecursiveSolver {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            memoize: true,
            ..Default::default()
        }
    }

    /// Plain recursion; exponential, for cross-checking small cases.
    pub fn without_memo(backend: Backend) -> Self {
        Self {
            backend,
            memoize: false,
            ..Default::default()
        }
    }

    pub fn memo_len(&self) -> usize {
        self.real.len() + self.exact.len()
    }

    pub fn probability(&mut self, state: &RecursionState) -> Result<Probability> {
        // Revalidate: fields are public.
        let state = RecursionState::new(
            state.distribution.clone(),
            state.leak_remaining,
            state.targets_remaining,
        )?;
        let (a, l, n) = (&state.distribution, state.leak_remaining, state.targets_remaining);
        Ok(match self.backend.resolve(state.population()) {
            Backend::Exact => Probability::Exact(solve(&mut self.exact, self.memoize, a, l, n)),
            _ => Probability::real(solve(&mut self.real, self.memoize, a, l, n)),
        })
    }
}

fn solve<W: Weight>(
    memo: &mut HashMap<MemoKey, (u64, W)>,
    memoize: bool,
    a: &ClassSizeDistribution,
    l: u64,
    n: u64,
) -> W {
    if n == 0 {
        return W::one();
    }
    let d = a.implied_population();
    debug_assert!(n <= l && l <= d, "invalid state n={n} L={l} D={d}");
    let key = (a.canonical_counts(), l, n);
    if memoize {
        if let Some((stored_d, p)) = memo.get(&key) {
            assert_eq!(*stored_d, d, "memo key does not determine the population");
            return p.clone();
        }
    }
    let mut parts = Vec::new();
    for k in a.occupied_sizes() {
        for j in 0..k.min(l) {
            let term = W::term(k, j, l, d, a.count(k));
            if term.is_zero() {
                continue;
            }
            let next = a.apply_identification(k).expect("size k is occupied");
            let child = solve(memo, memoize, &next, l - 1, n - 1);
            parts.push(term.mul(&child));
        }
    }
    let p = W::sum(parts);
    if memoize {
        memo.insert(key, (d, p.clone()));
    }
    p
}

/// Arithmetic the recursion needs; implemented for `f64` and exact rationals.
trait Weight: Clone {
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn mul(&self, other: &Self) -> Self;
    fn sum(parts: Vec<Self>) -> Self;
    /// `1/(j+1) * L/D * C(k-1,j) C(D-k, L-1-j) / C(D-1, L-1) * k a_k / D`.
    fn term(k: u64, j: u64, l: u64, d: u64, a_k: u64) -> Self;
}

impl Weight for f64 {
    fn one() -> Self {
        1.0
    }

    fn is_zero(&self) -> bool {
        *self == 0.0
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn sum(parts: Vec<Self>) -> Self {
        parts.into_iter().collect::<CompensatedSum>().total()
    }

    fn term(k: u64, j: u64, l: u64, d: u64, a_k: u64) -> Self {
        let ln_pmf = hypergeom_ln_pmf(k - 1, d - 1, l - 1, j);
        if ln_pmf == f64::NEG_INFINITY {
            return 0.0;
        }
        let leaked = l as f64 / d as f64;
        let in_size_k = (k * a_k) as f64 / d as f64;
        ln_pmf.exp() * leaked * in_size_k / (j + 1) as f64
    }
}

impl Weight for BigRational {
    fn one() -> Self {
        One::one()
    }

    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn sum(parts: Vec<Self>) -> Self {
        parts.into_iter().sum()
    }

    fn term(k: u64, j: u64, l: u64, d: u64, a_k: u64) -> Self {
        let pmf = hypergeom_pmf_exact(k - 1, d - 1, l - 1, j);
        if Zero::is_zero(&pmf) {
            return pmf;
        }
        let num = BigInt::from(l) * BigInt::from(k) * BigInt::from(a_k);
        let den = BigInt::from(j + 1) * BigInt::from(d) * BigInt::from(d);
        pmf * BigRational::new(num, den)
    }
}
