use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{round_count, rng_from_seed, EmbeddingDataset};
use crate::error::{GsrError, Result};

/// Symmetric label corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub flip_fraction: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            flip_fraction: 0.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return Err(GsrError::config(
                "flip_fraction",
                format!("must lie in [0, 1], got {}", self.flip_fraction),
            ));
        }
        Ok(())
    }
}

/// Flips exactly `round(flip_fraction·n)` labels, each to a uniformly drawn
/// different class. Returns the corrupted dataset and the flipped row
/// indices in ascending order.
pub fn inject_label_noise(
    ds: &EmbeddingDataset,
    spec: &NoiseSpec,
) -> Result<(EmbeddingDataset, Vec<usize>)> {
    spec.validate()?;
    let k = ds.n_classes();
    if k < 2 {
        return Err(GsrError::config("n_classes", "label noise needs K >= 2"));
    }
    let n = ds.len();
    let count = round_count(spec.flip_fraction, n);
    if count == 0 {
        return Ok((ds.clone(), Vec::new()));
    }
    let mut rng = rng_from_seed(spec.seed);
    let mut flipped = index::sample(&mut rng, n, count).into_vec();
    flipped.sort_unstable();
    let mut labels = ds.labels().to_vec();
    for &i in &flipped {
        let draw = rng.random_range(0..k - 1);
        labels[i] = if draw >= labels[i] { draw + 1 } else { draw };
    }
    Ok((ds.with_labels(labels)?, flipped))
}
