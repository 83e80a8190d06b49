//! Attack scenarios and class-size histograms.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Histogram of equivalence-class sizes: `counts[i]` classes hold exactly `i`
/// patients. `counts[0]` may be nonzero after identifications empty a class;
/// such classes hold nobody and never receive weight.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassSizeDistribution {
    counts: Vec<u64>,
}

impl ClassSizeDistribution {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    /// `classes` classes of size `k`.
    pub fn homogeneous(k: u64, classes: u64) -> Self {
        let mut counts = vec![0; k as usize + 1];
        counts[k as usize] = classes;
        Self { counts }
    }

    pub fn from_class_sizes<I: IntoIterator<Item = u64>>(sizes: I) -> Self {
        let mut counts: Vec<u64> = Vec::new();
        for size in sizes {
            let idx = size as usize;
            if counts.len() <= idx {
                counts.resize(idx + 1, 0);
            }
            counts[idx] += 1;
        }
        Self { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, size: u64) -> u64 {
        self.counts.get(size as usize).copied().unwrap_or(0)
    }

    /// Highest stored index `K` (its count may be zero).
    pub fn max_index(&self) -> u64 {
        self.counts.len().saturating_sub(1) as u64
    }

    /// `sum_i i * a_i`.
    pub fn implied_population(&self) -> u64 {
        self.counts.iter().enumerate().map(|(i, &a)| i as u64 * a).sum()
    }

    /// Number of classes holding at least one patient.
    pub fn class_count(&self) -> u64 {
        self.counts.iter().skip(1).sum()
    }

    pub fn largest_class(&self) -> Option<u64> {
        self.occupied_sizes().last()
    }

    pub fn smallest_class(&self) -> Option<u64> {
        self.occupied_sizes().next()
    }

    /// Class sizes `i >= 1` with `a_i > 0`, ascending.
    pub fn occupied_sizes(&self) -> impl DoubleEndedIterator<Item = u64> + '_ {
        self.counts
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &a)| a > 0)
            .map(|(i, _)| i as u64)
    }

    /// Every nonempty class size, one entry per class, ascending.
    pub fn class_sizes(&self) -> impl Iterator<Item = u64> + '_ {
        self.occupied_sizes()
            .flat_map(move |size| std::iter::repeat_n(size, self.count(size) as usize))
    }

    /// Removes one identified patient from a size-`k` class:
    /// `a_k -= 1`, `a_{k-1} += 1`.
    pub fn apply_identification(&self, k: u64) -> Result<Self> {
        if k == 0 || self.count(k) == 0 {
            return Err(Error::domain(format!("no class of size {k} to identify from")));
        }
        let mut counts = self.counts.clone();
        counts[k as usize] -= 1;
        counts[k as usize - 1] += 1;
        Ok(Self { counts })
    }

    /// Counts for sizes `1..` with trailing zeros trimmed.
    pub(crate) fn canonical_counts(&self) -> Vec<u64> {
        let end = self.counts.iter().rposition(|&a| a > 0).map_or(0, |i| i + 1);
        self.counts.get(1..end.max(1)).map(<[u64]>::to_vec).unwrap_or_default()
    }
}

impl fmt::Display for ClassSizeDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.counts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassStructure {
    /// Every class holds exactly `k` patients.
    Homogeneous { k: u64 },
    Heterogeneous(ClassSizeDistribution),
}

/// A population of `D` patients, a leak of `L` whole histories, and the
/// equivalence-class layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackScenario {
    dataset_size: u64,
    leak_size: u64,
    classes: ClassStructure,
}

impl AttackScenario {
    pub fn new(dataset_size: u64, leak_size: u64, classes: ClassStructure) -> Result<Self> {
        if dataset_size == 0 {
            return Err(Error::domain("dataset size must be positive"));
        }
        if leak_size == 0 || leak_size > dataset_size {
            return Err(Error::domain(format!(
                "leak size {leak_size} must lie in 1..={dataset_size}"
            )));
        }
        match &classes {
            ClassStructure::Homogeneous { k } => {
                if *k == 0 {
                    return Err(Error::domain("class size k must be positive"));
                }
                if !dataset_size.is_multiple_of(*k) {
                    return Err(Error::domain(format!(
                        "class size {k} does not divide dataset size {dataset_size}"
                    )));
                }
            }
            ClassStructure::Heterogeneous(dist) => {
                let implied = dist.implied_population();
                if implied != dataset_size {
                    return Err(Error::domain(format!(
                        "class sizes cover {implied} patients, dataset has {dataset_size}"
                    )));
                }
            }
        }
        Ok(Self {
            dataset_size,
            leak_size,
            classes,
        })
    }

    pub fn homogeneous(dataset_size: u64, leak_size: u64, k: u64) -> Result<Self> {
        Self::new(dataset_size, leak_size, ClassStructure::Homogeneous { k })
    }

    /// Dataset size is taken from the distribution.
    pub fn heterogeneous(leak_size: u64, distribution: ClassSizeDistribution) -> Result<Self> {
        let d = distribution.implied_population();
        Self::new(d, leak_size, ClassStructure::Heterogeneous(distribution))
    }

    pub fn dataset_size(&self) -> u64 {
        self.dataset_size
    }

    pub fn leak_size(&self) -> u64 {
        self.leak_size
    }

    pub fn classes(&self) -> &ClassStructure {
        &self.classes
    }

    pub fn homogeneous_k(&self) -> Option<u64> {
        match self.classes {
            ClassStructure::Homogeneous { k } => Some(k),
            ClassStructure::Heterogeneous(_) => None,
        }
    }

    /// The class-size histogram, materialized for homogeneous scenarios.
    pub fn distribution(&self) -> ClassSizeDistribution {
        match &self.classes {
            ClassStructure::Homogeneous { k } => ClassSizeDistribution::homogeneous(*k, self.dataset_size / k),
            ClassStructure::Heterogeneous(dist) => dist.clone(),
        }
    }

    pub fn max_class_size(&self) -> u64 {
        match &self.classes {
            ClassStructure::Homogeneous { k } => *k,
            ClassStructure::Heterogeneous(dist) => dist.largest_class().unwrap_or(0),
        }
    }

    /// Same classes, different leak size.
    pub fn with_leak_size(&self, leak_size: u64) -> Result<Self> {
        Self::new(self.dataset_size, leak_size, self.classes.clone())
    }
}
