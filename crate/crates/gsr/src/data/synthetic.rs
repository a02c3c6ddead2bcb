use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{rng_from_seed, EmbeddingDataset};
use crate::error::{GsrError, Result};

/// Gaussian class × attribute mixture with a spurious shortcut.
///
/// Group `g` encodes class `y = g / A` and attribute `a = g % A`, where
/// `A = n_per_group.len() / n_classes`. Each sample is isotropic Gaussian
/// (std `noise_std`) around a mean whose core coordinates carry the class,
/// whose spurious coordinates carry the attribute, and whose noise
/// coordinates are zero. Columns are ordered core, spurious, noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_per_group: Vec<usize>,
    pub d_core: usize,
    pub d_spurious: usize,
    pub d_noise: usize,
    pub core_gap: f64,
    pub spurious_gap: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Two classes, two attributes, 90% of samples in the two groups where
    /// class and attribute agree; the attribute is easier to read off than
    /// the class.
    fn default() -> Self {
        Self {
            n_classes: 2,
            n_per_group: vec![450, 50, 50, 450],
            d_core: 2,
            d_spurious: 2,
            d_noise: 4,
            core_gap: 2.0,
            spurious_gap: 4.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn n_groups(&self) -> usize {
        self.n_per_group.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.n_per_group.len() / self.n_classes.max(1)
    }

    pub fn dim(&self) -> usize {
        self.d_core + self.d_spurious + self.d_noise
    }

    /// Same distribution, different group sizes and seed.
    pub fn resized(&self, n_per_group: Vec<usize>, seed: u64) -> Self {
        Self {
            n_per_group,
            seed,
            ..self.clone()
        }
    }

    /// Same distribution with every group of size `per_group`.
    pub fn balanced(&self, per_group: usize, seed: u64) -> Self {
        self.resized(vec![per_group; self.n_groups()], seed)
    }

    /// Groups where class id equals attribute id.
    pub fn majority_groups(&self) -> Vec<usize> {
        let a = self.n_attributes();
        (0..self.n_groups()).filter(|g| g / a == g % a).collect()
    }

    pub fn minority_groups(&self) -> Vec<usize> {
        let a = self.n_attributes();
        (0..self.n_groups()).filter(|g| g / a != g % a).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(GsrError::config("n_classes", "need at least 2 classes"));
        }
        if self.n_per_group.is_empty() || !self.n_per_group.len().is_multiple_of(self.n_classes) {
            return Err(GsrError::config(
                "n_per_group",
                format!(
                    "length {} is not a positive multiple of n_classes = {}",
                    self.n_per_group.len(),
                    self.n_classes
                ),
            ));
        }
        if let Some(g) = self.n_per_group.iter().position(|&c| c == 0) {
            return Err(GsrError::config(
                "n_per_group",
                format!("group {g} has size 0"),
            ));
        }
        if self.d_core == 0 {
            return Err(GsrError::config("d_core", "must be at least 1"));
        }
        if !(self.core_gap > 0.0 && self.core_gap.is_finite()) {
            return Err(GsrError::config("core_gap", "must be positive"));
        }
        if !(self.spurious_gap >= 0.0 && self.spurious_gap.is_finite()) {
            return Err(GsrError::config("spurious_gap", "must be non-negative"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(GsrError::config("noise_std", "must be positive"));
        }
        Ok(())
    }
}

/// Sign of mean coordinate `j` for category `c` out of `count` categories:
/// binary categories use `−` for 0 and `+` for 1 on every coordinate,
/// otherwise coordinate `j` is `+` only for category `j mod count`.
fn mean_sign(j: usize, c: usize, count: usize) -> f64 {
    let positive = if count == 2 { c == 1 } else { j % count == c };
    if positive {
        1.0
    } else {
        -1.0
    }
}

/// Draws the mixture. Rows come out grouped (group 0 first), and the
/// stream is consumed row by row, column by column.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<EmbeddingDataset> {
    spec.validate()?;
    let n: usize = spec.n_per_group.iter().sum();
    let d = spec.dim();
    let k = spec.n_classes;
    let a = spec.n_attributes();
    let mut rng = rng_from_seed(spec.seed);
    let mut features = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    let mut row = 0;
    for (g, &size) in spec.n_per_group.iter().enumerate() {
        let (y, attr) = (g / a, g % a);
        let mean: Vec<f64> = (0..d)
            .map(|j| {
                if j < spec.d_core {
                    mean_sign(j, y, k) * spec.core_gap / 2.0
                } else if j < spec.d_core + spec.d_spurious {
                    mean_sign(j - spec.d_core, attr, a) * spec.spurious_gap / 2.0
                } else {
                    0.0
                }
            })
            .collect();
        for _ in 0..size {
            for (j, mu) in mean.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                features[(row, j)] = mu + spec.noise_std * z;
            }
            labels.push(y);
            groups.push(g);
            row += 1;
        }
    }
    EmbeddingDataset::new(features, labels, Some(groups), Some(k), Some(spec.n_groups()))
}
