//! Binomial and hypergeometric primitives.
//!
//! Two backends are offered. The exact backend works in unbounded rationals
//! and is what the small-instance oracles compare against. The log backend
//! works in `f64`, evaluating hypergeometric masses as products of ratios so
//! that `D = 10_000`-scale inputs neither overflow nor lose relative accuracy.

use std::fmt;
use std::sync::OnceLock;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize, Serializer};

use crate::{Error, Result};

/// Largest population for which [`Backend::Auto`] picks exact arithmetic.
pub const EXACT_AUTO_LIMIT: u64 = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Exact for populations up to [`EXACT_AUTO_LIMIT`], log-space above.
    #[default]
    Auto,
    Exact,
    Log,
}

impl Backend {
    /// Resolves `Auto` against a population size. Never returns `Auto`.
    pub fn resolve(self, population: u64) -> Backend {
        match self {
            Backend::Auto if population <= EXACT_AUTO_LIMIT => Backend::Exact,
            Backend::Auto => Backend::Log,
            other => other,
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Auto => "auto",
            Backend::Exact => "exact",
            Backend::Log => "log",
        })
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Backend::Auto),
            "exact" => Ok(Backend::Exact),
            "log" => Ok(Backend::Log),
            other => Err(Error::domain(format!("unknown backend `{other}`"))),
        }
    }
}

/// A probability carried either as a reduced rational or as an `f64`.
#[derive(Debug, Clone, PartialEq)]
pub enum Probability {
    Exact(BigRational),
    Real(f64),
}

impl Probability {
    pub fn zero(backend: Backend) -> Self {
        match backend {
            Backend::Exact => Probability::Exact(BigRational::zero()),
            _ => Probability::Real(0.0),
        }
    }

    pub fn one(backend: Backend) -> Self {
        match backend {
            Backend::Exact => Probability::Exact(BigRational::one()),
            _ => Probability::Real(1.0),
        }
    }

    /// Exact `num/den`.
    pub fn ratio(num: u64, den: u64) -> Self {
        Probability::Exact(BigRational::new(num.into(), den.into()))
    }

    /// Wraps an `f64`, absorbing rounding overshoot just outside `[0, 1]`.
    pub fn real(value: f64) -> Self {
        debug_assert!(
            (-1e-12..=1.0 + 1e-12).contains(&value),
            "probability {value} out of range"
        );
        Probability::Real(value.clamp(0.0, 1.0))
    }

    pub fn backend(&self) -> Backend {
        match self {
            Probability::Exact(_) => Backend::Exact,
            Probability::Real(_) => Backend::Log,
        }
    }

    /// Nearest `f64` (correctly rounded for the exact backend).
    pub fn value(&self) -> f64 {
        match self {
            Probability::Exact(r) => r.to_f64().unwrap_or(0.0),
            Probability::Real(v) => *v,
        }
    }

    /// Natural logarithm; `-inf` for zero. Does not underflow for tiny exact values.
    pub fn ln(&self) -> f64 {
        match self {
            Probability::Exact(r) if r.is_zero() => f64::NEG_INFINITY,
            Probability::Exact(r) => ln_biguint(r.numer().magnitude()) - ln_biguint(r.denom().magnitude()),
            Probability::Real(v) => v.ln(),
        }
    }

    pub fn as_exact(&self) -> Option<&BigRational> {
        match self {
            Probability::Exact(r) => Some(r),
            Probability::Real(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Probability::Exact(r) => r.is_zero(),
            Probability::Real(v) => *v == 0.0,
        }
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Probability::Exact(r) => write!(f, "{r}"),
            Probability::Real(v) => write!(f, "{v}"),
        }
    }
}

/// Serialized as `{"value", "ln", "exact"?}`; `ln` is `null` for zero.
impl Serialize for Probability {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let ln = self.ln();
        let exact = self.as_exact().map(|r| r.to_string());
        let mut s = serializer.serialize_struct("Probability", 3)?;
        s.serialize_field("value", &self.value())?;
        s.serialize_field("ln", &ln.is_finite().then_some(ln))?;
        if let Some(exact) = exact {
            s.serialize_field("exact", &exact)?;
        }
        s.end()
    }
}

/// `ln x` for an arbitrary-size positive integer, from its top 64 bits.
fn ln_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 64 {
        return x.to_u64().map_or(f64::NEG_INFINITY, |v| (v as f64).ln());
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64().unwrap_or(u64::MAX);
    (top as f64).ln() + shift as f64 * std::f64::consts::LN_2
}

/// Validated `(D, L, k, h)` for a hypergeometric query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CountingParams {
    pub population: u64,
    pub draws: u64,
    pub class_size: u64,
    pub overlap: u64,
}

impl CountingParams {
    pub fn new(population: u64, draws: u64, class_size: u64, overlap: u64) -> Result<Self> {
        if draws > population {
            return Err(Error::domain(format!("draws {draws} exceed population {population}")));
        }
        if class_size == 0 || class_size > population {
            return Err(Error::domain(format!(
                "class size {class_size} must lie in 1..={population}"
            )));
        }
        if overlap > class_size.min(draws) {
            return Err(Error::domain(format!(
                "overlap {overlap} exceeds min(class size {class_size}, draws {draws})"
            )));
        }
        Ok(Self {
            population,
            draws,
            class_size,
            overlap,
        })
    }

    pub fn pmf(&self, backend: Backend) -> Probability {
        hypergeom_pmf(self.class_size, self.population, self.draws, self.overlap, backend)
    }
}

/// `C(n, r)`, and 0 for `r < 0` or `r > n`.
pub fn binomial_exact(n: u64, r: i64) -> BigUint {
    match u64::try_from(r) {
        Ok(r) if r <= n => binomial_biguint(n, r),
        _ => BigUint::zero(),
    }
}

fn binomial_biguint(n: u64, r: u64) -> BigUint {
    let r = r.min(n - r);
    let mut acc = BigUint::one();
    // acc = C(n - r + i, i) after step i, always an integer.
    for i in 1..=r {
        acc *= n - r + i;
        acc /= i;
    }
    acc
}

/// `ln C(n, r)`, and `-inf` for `r < 0` or `r > n`.
pub fn binomial_log(n: u64, r: i64) -> f64 {
    let r = match u64::try_from(r) {
        Ok(r) if r <= n => r,
        _ => return f64::NEG_INFINITY,
    };
    let small = r.min(n - r);
    if small == 0 {
        return 0.0;
    }
    if small <= 1024 {
        // ln C(n, s) = sum_{i=1..s} ln(1 + (n - s)/i); every term is nonnegative.
        let rest = (n - small) as f64;
        let mut sum = CompensatedSum::default();
        for i in 1..=small {
            sum.add((rest / i as f64).ln_1p());
        }
        return sum.total();
    }
    ln_factorial(n) - ln_factorial(r) - ln_factorial(n - r)
}

/// `ln n!`: compensated table below 256, Stirling series above.
pub fn ln_factorial(n: u64) -> f64 {
    const TABLE: usize = 256;
    static LN_FACT: OnceLock<Vec<f64>> = OnceLock::new();
    let table = LN_FACT.get_or_init(|| {
        let mut out = Vec::with_capacity(TABLE);
        let mut sum = CompensatedSum::default();
        out.push(0.0);
        for i in 1..TABLE {
            sum.add((i as f64).ln());
            out.push(sum.total());
        }
        out
    });
    if (n as usize) < TABLE {
        return table[n as usize];
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    (x + 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

/// Hypergeometric mass `C(k,h) C(D-k, L-h) / C(D,L)`: the chance that a
/// uniform leak of `L` out of `D` contains exactly `h` members of a fixed
/// class of size `k`. Zero outside the support, including when `k > D` or
/// `L > D`.
pub fn hypergeom_pmf(class_size: u64, population: u64, draws: u64, overlap: u64, backend: Backend) -> Probability {
    match backend.resolve(population) {
        Backend::Exact => Probability::Exact(hypergeom_pmf_exact(class_size, population, draws, overlap)),
        _ => Probability::real(hypergeom_ln_pmf(class_size, population, draws, overlap).exp()),
    }
}

fn in_support(k: u64, d: u64, l: u64, h: u64) -> bool {
    k <= d && l <= d && h <= k && h <= l && l - h <= d - k
}

/// Exact mass straight from the binomial definition.
pub fn hypergeom_pmf_exact(class_size: u64, population: u64, draws: u64, overlap: u64) -> BigRational {
    let (k, d, l, h) = (class_size, population, draws, overlap);
    if !in_support(k, d, l, h) {
        return BigRational::zero();
    }
    let num = binomial_biguint(k, h) * binomial_biguint(d - k, l - h);
    let den = binomial_biguint(d, l);
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// `ln` of the hypergeometric mass, `-inf` outside the support.
///
/// Uses the exchangeability of class size and draw count to work with
/// `s = min(k, L)` factors:
/// `C(s,h) * prod_{i<h} (b-i)/(D-i) * prod_{i<s-h} (D-b-i)/(D-h-i)`
/// where `b = max(k, L)`. Each ratio lies in `(0, 1]` and enters through
/// `ln_1p`, so the relative error grows only linearly in `s`.
pub fn hypergeom_ln_pmf(class_size: u64, population: u64, draws: u64, overlap: u64) -> f64 {
    let (k, d, l, h) = (class_size, population, draws, overlap);
    if !in_support(k, d, l, h) {
        return f64::NEG_INFINITY;
    }
    let (small, big) = if k <= l { (k, l) } else { (l, k) };
    let mut sum = CompensatedSum::default();
    sum.add(binomial_log(small, h as i64));
    for i in 0..h {
        // (big - i)/(d - i) = 1 - (d - big)/(d - i)
        sum.add(ln_one_minus_ratio(d - big, d - i));
    }
    for i in 0..small - h {
        // (d - big - i)/(d - h - i) = 1 - (big - h)/(d - h - i)
        sum.add(ln_one_minus_ratio(big - h, d - h - i));
    }
    sum.total()
}

/// `ln(1 - a/b)` for `0 <= a <= b`, `b > 0`.
///
/// Near `a/b = 1` the subtraction is done in integers first; `ln_1p` of a
/// rounded ratio close to -1 would lose most of its digits.
pub(crate) fn ln_one_minus_ratio(a: u64, b: u64) -> f64 {
    if a == 0 {
        0.0
    } else if a == b {
        f64::NEG_INFINITY
    } else if 2 * a <= b {
        (-(a as f64) / b as f64).ln_1p()
    } else {
        ((b - a) as f64 / b as f64).ln()
    }
}

/// `ln(sum_i exp(x_i))`, shifted by the maximum and summed with compensation.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = CompensatedSum::default();
    for &t in terms {
        sum.add((t - max).exp());
    }
    max + sum.total().ln()
}

/// Neumaier's improved Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Relative difference `|a - b| / max(|a|, |b|)`, 0 when both are 0.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
