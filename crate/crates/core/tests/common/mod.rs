//! Brute-force oracles. These enumerate leaks and target orderings directly
//! and share no code with the library's solvers.
#![allow(dead_code)]

use num_bigint::{BigInt, BigUint};
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};

pub type Q = Ratio<i128>;

/// Patient `p` belongs to class `p / k`.
pub fn homogeneous_labels(d: usize, k: usize) -> Vec<usize> {
    (0..d).map(|p| p / k).collect()
}

/// `counts[i]` classes of size `i`, laid out consecutively.
pub fn labels_from_counts(counts: &[u64]) -> Vec<usize> {
    let mut labels = Vec::new();
    let mut class = 0;
    for (size, &a) in counts.iter().enumerate() {
        for _ in 0..a {
            if size > 0 {
                labels.extend(std::iter::repeat_n(class, size));
                class += 1;
            }
        }
    }
    labels
}

/// Every size-`l` subset of `0..d` as a bitmask.
pub fn leaks(d: usize, l: usize) -> impl Iterator<Item = u32> {
    (0u32..1 << d).filter(move |m| m.count_ones() as usize == l)
}

fn class_counts(labels: &[usize], mask: u32) -> Vec<i128> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0i128; classes];
    for (p, &c) in labels.iter().enumerate() {
        if mask >> p & 1 == 1 {
            counts[c] += 1;
        }
    }
    counts
}

/// Expected mean over all patients of the per-patient risk (0 if unleaked,
/// else 1/leaked classmates), averaged over all equiprobable leaks.
pub fn brute_single(labels: &[usize], l: usize) -> Q {
    let d = labels.len();
    let mut total = Q::zero();
    let mut count = 0i128;
    for mask in leaks(d, l) {
        let counts = class_counts(labels, mask);
        for (p, &c) in labels.iter().enumerate() {
            if mask >> p & 1 == 1 {
                total += Q::new(1, counts[c]);
            }
        }
        count += 1;
    }
    total / Q::from(count * d as i128)
}

/// Expected product of sequential identification probabilities for `n`
/// distinct targets drawn in order from the whole population, averaged over
/// all leaks of size `l`.
pub fn brute_multi(labels: &[usize], l: usize, n: usize) -> Q {
    let d = labels.len();
    let mut total = Q::zero();
    let mut sequences = 0i128;
    for mask in leaks(d, l) {
        let mut counts = class_counts(labels, mask);
        let (sum, seqs) = orderings(labels, mask, &mut counts, 0, n);
        total += sum;
        sequences += seqs;
    }
    total / Q::from(sequences)
}

fn orderings(labels: &[usize], leaked: u32, counts: &mut [i128], used: u32, n: usize) -> (Q, i128) {
    if n == 0 {
        return (Q::from(1), 1);
    }
    let mut sum = Q::zero();
    let mut seqs = 0;
    for t in 0..labels.len() {
        if used >> t & 1 == 1 {
            continue;
        }
        if leaked >> t & 1 == 0 {
            // Still counts as a sequence; contributes zero.
            seqs += orderings_count(labels.len() - used.count_ones() as usize - 1, n - 1);
            continue;
        }
        let c = labels[t];
        let factor = Q::new(1, counts[c]);
        counts[c] -= 1;
        let (s, k) = orderings(labels, leaked & !(1 << t), counts, used | 1 << t, n - 1);
        counts[c] += 1;
        sum += factor * s;
        seqs += k;
    }
    (sum, seqs)
}

fn orderings_count(available: usize, n: usize) -> i128 {
    (0..n).map(|i| (available - i) as i128).product()
}

pub fn to_big(q: Q) -> BigRational {
    BigRational::new(BigInt::from(*q.numer()), BigInt::from(*q.denom()))
}

pub fn binomial_big(n: u64, r: u64) -> BigUint {
    if r > n {
        return BigUint::zero();
    }
    let mut acc = BigUint::from(1u32);
    for i in 0..r {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Natural log of a big integer from its leading 64 bits.
pub fn ln_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    let shift = bits.saturating_sub(64);
    let top = (x >> shift).to_u64().unwrap() as f64;
    top.ln() + shift as f64 * std::f64::consts::LN_2
}
