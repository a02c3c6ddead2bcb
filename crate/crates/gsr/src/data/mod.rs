//! Datasets, deterministic splits, synthetic generation and label noise.
//!
//! Every random choice in this module draws from a ChaCha8 stream seeded
//! through [`rng_from_seed`], so partitions and generated data are the same
//! on every platform for a given seed.

mod dataset;
pub mod io;
mod noise;
mod split;
mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dataset::EmbeddingDataset;
pub use io::{load_embeddings, write_embeddings, Schema};
pub use noise::{inject_label_noise, NoiseSpec};
pub use split::{
    holdout_indices, split_holdout, split_target_val, target_val_indices, SplitIndices, SplitPlan,
};
pub use synthetic::{make_synthetic, SyntheticSpec};

/// The generator behind every split, draw and corruption.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `round(fraction · n)` with halves rounded away from zero.
pub fn round_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}
