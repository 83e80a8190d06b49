//! Monte Carlo leak attacks.
//!
//! Each trial draws a uniform leak of `L` whole patient histories and scores
//! patients by the adversary's chance of picking them out: a leaked patient
//! whose class has `m` leaked members scores `1/m`, everyone else scores 0.
//!
//! Trial `t` draws from a ChaCha8 stream selected by `(seed, t)`, so results
//! do not depend on how trials are spread over threads. Per-trial values are
//! collected in trial order and reduced sequentially.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::combinatorics::CompensatedSum;
use crate::execution::{map_indexed_with, Execution};
use crate::scenario::AttackScenario;
use crate::{Error, Result};

/// `z` for a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

/// Stream reserved for bootstrap resampling; trial streams are `0..trials`.
const BOOTSTRAP_STREAM: u64 = u64::MAX;

/// The RNG for trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Patients `0..D` with their class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Population {
    class_of: Vec<u32>,
    class_sizes: Vec<u32>,
}

impl Population {
    /// Classes laid out contiguously in ascending size order.
    pub fn from_scenario(scenario: &AttackScenario) -> Self {
        let dist = scenario.distribution();
        let mut class_of = Vec::with_capacity(scenario.dataset_size() as usize);
        let mut class_sizes = Vec::with_capacity(dist.class_count() as usize);
        for (class, size) in dist.class_sizes().enumerate() {
            class_sizes.push(size as u32);
            class_of.extend(std::iter::repeat_n(class as u32, size as usize));
        }
        Self { class_of, class_sizes }
    }

    /// `labels[p]` is the class of patient `p`; labels must be `0..C` dense.
    pub fn from_class_labels(labels: &[usize]) -> Result<Self> {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut class_sizes = vec![0u32; classes];
        for &c in labels {
            class_sizes[c] += 1;
        }
        if let Some(c) = class_sizes.iter().position(|&s| s == 0) {
            return Err(Error::domain(format!("class label {c} has no patients")));
        }
        Ok(Self {
            class_of: labels.iter().map(|&c| c as u32).collect(),
            class_sizes,
        })
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn class_of(&self, patient: usize) -> usize {
        self.class_of[patient] as usize
    }

    pub fn class_size(&self, class: usize) -> usize {
        self.class_sizes[class] as usize
    }

    pub fn class_count(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn max_class_size(&self) -> usize {
        self.class_sizes.iter().copied().max().unwrap_or(0) as usize
    }
}

/// A concrete leak: which patients, and how many leaked members each class has.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakSample {
    leaked: Vec<u32>,
    class_leak_counts: Vec<u32>,
}

impl LeakSample {
    /// Builds a leak from explicit patient indices.
    pub fn from_patients(population: &Population, patients: &[usize]) -> Result<Self> {
        let mut leaked: Vec<u32> = patients.iter().map(|&p| p as u32).collect();
        leaked.sort_unstable();
        leaked.dedup();
        if leaked.len() != patients.len() {
            return Err(Error::domain("leaked patients must be distinct"));
        }
        if leaked.last().is_some_and(|&p| p as usize >= population.len()) {
            return Err(Error::domain("leaked patient outside the population"));
        }
        let mut class_leak_counts = vec![0u32; population.class_count()];
        for &p in &leaked {
            class_leak_counts[population.class_of(p as usize)] += 1;
        }
        Ok(Self {
            leaked,
            class_leak_counts,
        })
    }

    /// Leaked patient indices, ascending.
    pub fn leaked(&self) -> &[u32] {
        &self.leaked
    }

    pub fn len(&self) -> usize {
        self.leaked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaked.is_empty()
    }

    pub fn contains(&self, patient: usize) -> bool {
        self.leaked.binary_search(&(patient as u32)).is_ok()
    }

    pub fn class_leak_count(&self, class: usize) -> usize {
        self.class_leak_counts[class] as usize
    }
}

/// Uniform size-`leak_size` subset of the population via a partial Fisher-Yates shuffle.
pub fn sample_leak<R: Rng + ?Sized>(population: &Population, leak_size: u64, rng: &mut R) -> Result<LeakSample> {
    let d = population.len();
    if leak_size == 0 || leak_size as usize > d {
        return Err(Error::domain(format!("leak size {leak_size} must lie in 1..={d}")));
    }
    let mut indices: Vec<u32> = (0..d as u32).collect();
    let (chosen, _) = indices.partial_shuffle(rng, leak_size as usize);
    let patients: Vec<usize> = chosen.iter().map(|&p| p as usize).collect();
    LeakSample::from_patients(population, &patients)
}

/// Per-patient risk: 0 if not leaked, else `1 / (leaked members of its class)`.
pub fn assign_risks(leak: &LeakSample, population: &Population) -> Vec<f64> {
    (0..population.len())
        .map(|p| {
            if leak.contains(p) {
                1.0 / leak.class_leak_count(population.class_of(p)) as f64
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum CiMethod {
    /// `mean +/- 1.96 SE`.
    #[default]
    Normal,
    /// Percentile bootstrap over trial values.
    Bootstrap { resamples: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationConfig {
    pub trials: u64,
    pub seed: u64,
    pub execution: Execution,
    pub ci: CiMethod,
    /// Collect the pooled per-patient risk histogram (single-patient runs only).
    pub histogram: bool,
}

impl SimulationConfig {
    pub fn new(trials: u64, seed: u64) -> Self {
        Self {
            trials,
            seed,
            execution: Execution::default(),
            ci: CiMethod::default(),
            histogram: false,
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_histogram(mut self, histogram: bool) -> Self {
        self.histogram = histogram;
        self
    }

    pub fn with_ci(mut self, ci: CiMethod) -> Self {
        self.ci = ci;
        self
    }
}

/// One histogram bin. Exact-value bins have `low == high`; the trailing
/// residual bin spans `[0, 1]` and catches anything else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub trials: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Vec<HistogramBin>>,
}

impl RiskEstimate {
    /// `|mean - expected| / SE`; infinite when SE is 0 and they differ.
    pub fn z_score(&self, expected: f64) -> f64 {
        let diff = (self.mean - expected).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.standard_error
        }
    }
}

struct Scratch {
    indices: Vec<u32>,
    counts: Vec<u32>,
    in_leak: Vec<bool>,
}

impl Scratch {
    fn new(population: &Population) -> Self {
        Self {
            indices: Vec::with_capacity(population.len()),
            counts: vec![0; population.class_count()],
            in_leak: vec![false; population.len()],
        }
    }

    /// Draws a leak into `indices[..L]` and fills `counts`. Leaves scratch
    /// dirty; call [`Scratch::clear`] afterwards.
    fn draw(&mut self, population: &Population, leak_size: usize, rng: &mut ChaCha8Rng) {
        self.indices.clear();
        self.indices.extend(0..population.len() as u32);
        let (chosen, _) = self.indices.partial_shuffle(rng, leak_size);
        for &p in chosen.iter() {
            self.counts[population.class_of(p as usize)] += 1;
            self.in_leak[p as usize] = true;
        }
    }

    fn leaked(&self, leak_size: usize) -> &[u32] {
        &self.indices[self.indices.len() - leak_size..]
    }

    fn clear(&mut self, population: &Population, leak_size: usize) {
        let start = self.indices.len() - leak_size;
        for &p in &self.indices[start..] {
            self.counts[population.class_of(p as usize)] = 0;
            self.in_leak[p as usize] = false;
        }
    }
}

struct TrialOutcome {
    value: f64,
    /// `bins[0]`: patients at risk 0; `bins[m]`: patients at risk `1/m`.
    bins: Option<Vec<u64>>,
}

/// Single-patient attack: per trial, the mean risk over all `D` patients.
///
/// Unleaked patients count with risk 0, so each nonempty leaked class adds
/// exactly 1 to the trial total.
pub fn simulate_single(scenario: &AttackScenario, config: &SimulationConfig) -> Result<RiskEstimate> {
    check_trials(config)?;
    let population = Population::from_scenario(scenario);
    let d = population.len();
    let l = scenario.leak_size() as usize;
    let kmax = population.max_class_size();
    let outcomes = map_indexed_with(
        config.trials as usize,
        config.execution,
        || Scratch::new(&population),
        |scratch, t| {
            let mut rng = trial_rng(config.seed, t as u64);
            scratch.draw(&population, l, &mut rng);
            let mut nonempty = 0u64;
            let mut bins = config.histogram.then(|| vec![0u64; kmax + 1]);
            for (class, &c) in scratch.counts.iter().enumerate() {
                if c > 0 {
                    nonempty += 1;
                    if let Some(bins) = bins.as_mut() {
                        bins[c as usize] += c as u64;
                    }
                }
                debug_assert!(c as usize <= population.class_size(class));
            }
            if let Some(bins) = bins.as_mut() {
                bins[0] = (d - l) as u64;
            }
            scratch.clear(&population, l);
            TrialOutcome {
                value: nonempty as f64 / d as f64,
                bins,
            }
        },
    );
    let mut estimate = summarize(outcomes.iter().map(|o| o.value).collect(), config);
    if config.histogram {
        let mut totals = vec![0u64; kmax + 1];
        for o in &outcomes {
            for (t, b) in totals.iter_mut().zip(o.bins.as_deref().unwrap_or(&[])) {
                *t += b;
            }
        }
        estimate.histogram = Some(histogram_bins(&totals, d as u64 * config.trials));
    }
    Ok(estimate)
}

/// Multi-patient attack: per trial, draw a leak and `n` distinct targets
/// uniformly from all `D` patients; multiply each target's current risk,
/// then remove it from the leak so its leaked classmates become easier to
/// single out. An unleaked target zeroes the product.
pub fn simulate_multi(scenario: &AttackScenario, targets: u64, config: &SimulationConfig) -> Result<RiskEstimate> {
    check_trials(config)?;
    let d = scenario.dataset_size();
    if targets == 0 || targets > d {
        return Err(Error::domain(format!("target count {targets} must lie in 1..={d}")));
    }
    let population = Population::from_scenario(scenario);
    let l = scenario.leak_size() as usize;
    let values = map_indexed_with(
        config.trials as usize,
        config.execution,
        || Scratch::new(&population),
        |scratch, t| {
            let mut rng = trial_rng(config.seed, t as u64);
            scratch.draw(&population, l, &mut rng);
            let chosen = index::sample(&mut rng, population.len(), targets as usize);
            let mut product = 1.0;
            for target in chosen.iter() {
                if !scratch.in_leak[target] {
                    product = 0.0;
                    break;
                }
                let class = population.class_of(target);
                product /= scratch.counts[class] as f64;
                scratch.counts[class] -= 1;
                scratch.in_leak[target] = false;
            }
            scratch.clear(&population, l);
            product
        },
    );
    Ok(summarize(values, config))
}

/// Samples the leak of one seeded trial, for inspection and tests.
pub fn trial_leak(scenario: &AttackScenario, seed: u64, trial: u64) -> Result<LeakSample> {
    let population = Population::from_scenario(scenario);
    let mut scratch = Scratch::new(&population);
    let l = scenario.leak_size() as usize;
    scratch.draw(&population, l, &mut trial_rng(seed, trial));
    let patients: Vec<usize> = scratch.leaked(l).iter().map(|&p| p as usize).collect();
    LeakSample::from_patients(&population, &patients)
}

fn check_trials(config: &SimulationConfig) -> Result<()> {
    if config.trials == 0 {
        return Err(Error::domain("at least one trial is required"));
    }
    if let CiMethod::Bootstrap { resamples: 0 } = config.ci {
        return Err(Error::domain("bootstrap needs at least one resample"));
    }
    Ok(())
}

/// Mean, standard error and 95% interval of per-trial values.
fn summarize(values: Vec<f64>, config: &SimulationConfig) -> RiskEstimate {
    let n = values.len() as f64;
    let mean = mean_of(&values);
    let sq: CompensatedSum = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let variance = if values.len() > 1 { sq.total() / (n - 1.0) } else { 0.0 };
    let standard_error = (variance / n).sqrt();
    let (low, high) = match config.ci {
        CiMethod::Normal => (mean - Z_95 * standard_error, mean + Z_95 * standard_error),
        CiMethod::Bootstrap { resamples } => bootstrap_interval(&values, resamples, config.seed),
    };
    RiskEstimate {
        mean,
        standard_error,
        ci95_low: low.min(mean),
        ci95_high: high.max(mean),
        trials: config.trials,
        seed: config.seed,
        histogram: None,
    }
}

/// `x_0 + mean(x_i - x_0)`: exact when all values coincide.
fn mean_of(values: &[f64]) -> f64 {
    let base = values[0];
    let dev: CompensatedSum = values.iter().map(|v| v - base).collect();
    base + dev.total() / values.len() as f64
}

fn bootstrap_interval(values: &[f64], resamples: u32, seed: u64) -> (f64, f64) {
    let mut rng = trial_rng(seed, BOOTSTRAP_STREAM);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let s: CompensatedSum = (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).collect();
            s.total() / values.len() as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    (at(0.025), at(0.975))
}

/// Bins `{0} ∪ {1/m : m = kmax..1}` ascending, then the residual bin.
fn histogram_bins(counts: &[u64], total: u64) -> Vec<HistogramBin> {
    let freq = |c: u64| c as f64 / total as f64;
    let mut bins = vec![HistogramBin {
        low: 0.0,
        high: 0.0,
        frequency: freq(counts[0]),
    }];
    for m in (1..counts.len()).rev() {
        let v = 1.0 / m as f64;
        bins.push(HistogramBin {
            low: v,
            high: v,
            frequency: freq(counts[m]),
        });
    }
    let residual = total - counts.iter().sum::<u64>();
    bins.push(HistogramBin {
        low: 0.0,
        high: 1.0,
        frequency: freq(residual),
    });
    bins
}
