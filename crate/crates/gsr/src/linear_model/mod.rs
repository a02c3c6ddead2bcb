//! Weighted multinomial logistic regression on fixed embeddings.
//!
//! The inner objective is
//! `R(w, ψ) = Σᵢ wᵢ·CE(softmax(ψᵀxᵢ), yᵢ) + (λ/2)‖ψ‖²_F`, which is
//! λ-strongly convex in ψ for any nonnegative `w`. There is no implicit
//! bias; append a constant feature (see
//! [`EmbeddingDataset::with_bias_column`]) to get one.

mod lbfgs;
mod metrics;
mod objective;
mod params;
mod softmax;

pub use lbfgs::{minimize, LbfgsOutcome, LbfgsSettings};
pub use metrics::{
    arg_max, group_accuracies, group_risks, mean_accuracy, predict, worst_group_accuracy,
    worst_group_risk,
};
pub use objective::{
    data_hessian, hessian, logits, per_sample_gradients, per_sample_losses, probabilities,
    weighted_gradient, weighted_objective,
};
pub use params::{ClassifierParams, InnerSolveConfig, SampleWeights, SIMPLEX_TOL};
pub use softmax::{softmax, softmax_jacobian};

use crate::data::EmbeddingDataset;
use crate::error::Result;

/// Result of an inner fit with solver diagnostics.
#[derive(Debug, Clone)]
pub struct InnerFit {
    pub params: ClassifierParams,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Minimizes the weighted objective with L-BFGS, starting from `init`.
///
/// Succeeds only when `‖∇R‖_∞ ≤ cfg.grad_tol`.
pub fn fit_last_layer(
    ds: &EmbeddingDataset,
    w: &SampleWeights,
    cfg: &InnerSolveConfig,
    init: &ClassifierParams,
) -> Result<ClassifierParams> {
    fit_last_layer_detailed(ds, w, cfg, init).map(|fit| fit.params)
}

pub fn fit_last_layer_detailed(
    ds: &EmbeddingDataset,
    w: &SampleWeights,
    cfg: &InnerSolveConfig,
    init: &ClassifierParams,
) -> Result<InnerFit> {
    cfg.validate()?;
    objective::check_params(ds, init)?;
    objective::check_weights(ds, w)?;
    let (d, k) = (ds.dim(), ds.n_classes());
    let weights = w.as_slice();
    let eval = |flat: &nalgebra::DVector<f64>| {
        let psi = nalgebra::DMatrix::from_column_slice(d, k, flat.as_slice());
        objective::objective_and_gradient(ds, weights, &psi, cfg.l2_coeff)
    };
    let settings = LbfgsSettings {
        grad_tol: cfg.grad_tol,
        max_iters: cfg.max_iters,
        memory: cfg.memory,
        c1: cfg.wolfe_c1,
        c2: cfg.wolfe_c2,
    };
    let out = minimize(eval, init.to_vec(), &settings)?;
    Ok(InnerFit {
        params: ClassifierParams::from_vec(d, k, &out.x)?,
        objective: out.value,
        grad_norm: out.grad_norm,
        iterations: out.iterations,
    })
}
