//! Stratified train/validation/test splits.
//!
//! Per class, samples are sorted by id and shuffled with the split seed; every
//! subset is then a per-class prefix of what remains after the test set:
//! validation ⊂ fraction-train ⊂ full-train, and the test set is the same for
//! both split names.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::VideoSample;
use crate::error::{Error, IoContext, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Fraction,
    Full,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Fraction => "fraction",
            SplitName::Full => "full",
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fraction" => Ok(SplitName::Fraction),
            "full" => Ok(SplitName::Full),
            other => Err(Error::InvalidInput(format!("unknown split {other:?} (expected fraction or full)"))),
        }
    }
}

/// Subset sizes. `fraction_train` counts the validation videos it contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub test: usize,
    pub full_train: usize,
    pub fraction_train: usize,
    pub validation: usize,
}

impl SplitSizes {
    pub const CANONICAL_TOTAL: usize = 2000;
    pub const CANONICAL: SplitSizes = SplitSizes {
        test: 400,
        full_train: 1600,
        fraction_train: 500,
        validation: 125,
    };

    /// Sizes for a manifest of `total` videos: canonical when there are at
    /// least 2000, otherwise scaled by `total / 2000` if allowed.
    pub fn for_total(total: usize, allow_scaling: bool) -> Result<(Self, bool)> {
        if total >= Self::CANONICAL_TOTAL {
            return Ok((Self::CANONICAL, false));
        }
        if !allow_scaling {
            return Err(Error::Size(format!(
                "manifest has {total} videos but the canonical splits need {}; enable split scaling to use proportional sizes",
                Self::CANONICAL_TOTAL
            )));
        }
        let s = total as f64 / Self::CANONICAL_TOTAL as f64;
        let c = Self::CANONICAL;
        let test = (c.test as f64 * s).round() as usize;
        let sizes = SplitSizes {
            test,
            full_train: total - test,
            fraction_train: (c.fraction_train as f64 * s).round() as usize,
            validation: (c.validation as f64 * s).round() as usize,
        };
        if sizes.test == 0 || sizes.fraction_train == 0 || sizes.validation >= sizes.fraction_train {
            return Err(Error::Size(format!("manifest of {total} videos is too small to split")));
        }
        Ok((sizes, true))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Allow manifests under 2000 videos, scaling every subset proportionally.
    pub allow_scaling: bool,
    /// Hold out a validation set inside the fraction-train set.
    pub validation: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            allow_scaling: false,
            validation: true,
        }
    }
}

/// Pairwise disjoint train / validation / test lists. For the fraction split
/// with validation, `train ∪ validation` is the 500-video training-fraction set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub split_name: SplitName,
    pub seed: u64,
    pub sizes: SplitSizes,
    /// True when the sizes were scaled down from the canonical ones.
    pub scaled: bool,
    pub train: Vec<VideoSample>,
    pub validation: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
}

/// Per-class counts `[NonViolent, Violent]`.
pub fn class_counts(samples: &[VideoSample]) -> [usize; 2] {
    let mut c = [0; 2];
    samples.iter().for_each(|s| c[s.label.index()] += 1);
    c
}

impl DatasetSplit {
    /// Videos seen by training in any role (train plus validation).
    pub fn training_pool(&self) -> Vec<&VideoSample> {
        self.train.iter().chain(&self.validation).collect()
    }

    pub fn class_counts(&self) -> [[usize; 2]; 3] {
        [class_counts(&self.train), class_counts(&self.validation), class_counts(&self.test)]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Per-class sizes of an `n`-element stratified draw from `counts`
/// (largest-remainder apportionment).
fn quota(n: usize, counts: [usize; 2]) -> [usize; 2] {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return [0, 0];
    }
    let mut q = [n * counts[0] / total, n * counts[1] / total];
    let rem = [n * counts[0] % total, n * counts[1] % total];
    let mut missing = n - q[0] - q[1];
    // Larger remainder first; ties go to the larger class, then class 1.
    let mut order = [0, 1];
    order.sort_by_key(|&k| (std::cmp::Reverse(rem[k]), std::cmp::Reverse(counts[k]), std::cmp::Reverse(k)));
    for k in order {
        if missing > 0 && q[k] < counts[k] {
            q[k] += 1;
            missing -= 1;
        }
    }
    q
}

pub fn split_dataset(manifest: &[VideoSample], split_name: SplitName, seed: u64, options: SplitOptions) -> Result<DatasetSplit> {
    let (sizes, scaled) = SplitSizes::for_total(manifest.len(), options.allow_scaling)?;
    let mut by_class: [Vec<VideoSample>; 2] = [Vec::new(), Vec::new()];
    for s in manifest {
        by_class[s.label.index()].push(s.clone());
    }
    let mut rng = seed::rng(seed::derive_seed(seed, seed::SPLIT));
    for class in &mut by_class {
        class.sort_by(|a, b| a.id.cmp(&b.id));
        class.shuffle(&mut rng);
    }
    let counts = [by_class[0].len(), by_class[1].len()];
    let test_q = quota(sizes.test, counts);
    let pool = [counts[0] - test_q[0], counts[1] - test_q[1]];
    let full_q = quota(sizes.full_train.min(pool[0] + pool[1]), pool);
    let frac_q = quota(sizes.fraction_train.min(full_q[0] + full_q[1]), full_q);
    let val_q = if options.validation && split_name == SplitName::Fraction {
        quota(sizes.validation, frac_q)
    } else {
        [0, 0]
    };

    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..2 {
        let class = &by_class[k];
        test.extend_from_slice(&class[..test_q[k]]);
        let rest = &class[test_q[k]..];
        match split_name {
            SplitName::Full => train.extend_from_slice(&rest[..full_q[k]]),
            SplitName::Fraction => {
                validation.extend_from_slice(&rest[..val_q[k]]);
                train.extend_from_slice(&rest[val_q[k]..frac_q[k]]);
            }
        }
    }
    for list in [&mut train, &mut validation, &mut test] {
        list.sort_by(|a, b| a.id.cmp(&b.id));
    }
    if train.is_empty() {
        return Err(Error::Size("split leaves no training videos".into()));
    }
    Ok(DatasetSplit {
        split_name,
        seed,
        sizes,
        scaled,
        train,
        validation,
        test,
    })
}
