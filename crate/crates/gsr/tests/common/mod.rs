#![allow(dead_code)]

use gsr::data::{rng_from_seed, EmbeddingDataset};
use gsr::linear_model::{ClassifierParams, SampleWeights};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Gaussian features, uniform labels, group ids cycling through `0..m`.
pub fn random_dataset(seed: u64, n: usize, d: usize, k: usize, m: usize) -> EmbeddingDataset {
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    let groups = (0..n).map(|i| i % m).collect();
    EmbeddingDataset::new(x, labels, Some(groups), Some(k), Some(m)).unwrap()
}

pub fn random_weights(seed: u64, n: usize) -> SampleWeights {
    let mut rng = rng_from_seed(seed);
    let w = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    SampleWeights::new(w).unwrap().normalized().unwrap()
}

pub fn random_psi(seed: u64, d: usize, k: usize, scale: f64) -> ClassifierParams {
    let mut rng = rng_from_seed(seed);
    ClassifierParams::new(DMatrix::from_fn(d, k, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
        .unwrap()
}

pub fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax().max(1e-300);
    (a - b).amax() / scale
}
