use nalgebra::{DMatrix, DVector};

use super::softmax::{log_sum_exp, softmax_in_place};
use super::{ClassifierParams, InnerSolveConfig, SampleWeights};
use crate::data::EmbeddingDataset;
use crate::error::{GsrError, Result};

pub(crate) fn check_params(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<()> {
    if psi.dim() != ds.dim() || psi.n_classes() != ds.n_classes() {
        return Err(GsrError::DimensionMismatch(format!(
            "classifier is {}×{}, dataset has d = {}, K = {}",
            psi.dim(),
            psi.n_classes(),
            ds.dim(),
            ds.n_classes()
        )));
    }
    Ok(())
}

pub(crate) fn check_weights(ds: &EmbeddingDataset, w: &SampleWeights) -> Result<()> {
    if w.len() != ds.len() {
        return Err(GsrError::DimensionMismatch(format!(
            "{} weights for {} samples",
            w.len(),
            ds.len()
        )));
    }
    Ok(())
}

/// Logits `Xψ`, one row per sample.
pub fn logits(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<DMatrix<f64>> {
    check_params(ds, psi)?;
    Ok(ds.features() * psi.matrix())
}

/// Row-wise softmax of the logits.
pub fn probabilities(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<DMatrix<f64>> {
    let mut z = logits(ds, psi)?;
    let k = z.ncols();
    let mut buf = vec![0.0; k];
    for i in 0..z.nrows() {
        for c in 0..k {
            buf[c] = z[(i, c)];
        }
        softmax_in_place(&mut buf);
        for c in 0..k {
            z[(i, c)] = buf[c];
        }
    }
    Ok(z)
}

/// Unweighted cross-entropy of every sample.
pub fn per_sample_losses(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<Vec<f64>> {
    let z = logits(ds, psi)?;
    let k = z.ncols();
    let mut buf = vec![0.0; k];
    Ok(ds
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            for c in 0..k {
                buf[c] = z[(i, c)];
            }
            log_sum_exp(&buf) - buf[y]
        })
        .collect())
}

/// `Σᵢ wᵢ·CE(σ(ψᵀxᵢ), yᵢ) + (λ/2)‖ψ‖²_F`.
pub fn weighted_objective(
    ds: &EmbeddingDataset,
    w: &SampleWeights,
    psi: &ClassifierParams,
    cfg: &InnerSolveConfig,
) -> Result<f64> {
    check_weights(ds, w)?;
    let losses = per_sample_losses(ds, psi)?;
    let data: f64 = losses.iter().zip(w.as_slice()).map(|(l, w)| w * l).sum();
    Ok(data + 0.5 * cfg.l2_coeff * psi.frobenius_sq())
}

/// `P − U`: softmax probabilities minus one-hot labels.
fn residuals(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<DMatrix<f64>> {
    let mut r = probabilities(ds, psi)?;
    for (i, &y) in ds.labels().iter().enumerate() {
        r[(i, y)] -= 1.0;
    }
    Ok(r)
}

/// Unregularized per-sample gradients, one row per sample.
///
/// Row `i` is `vec(xᵢ (pᵢ − u(yᵢ))ᵀ)`: class block `k` holds
/// `(p_{ik} − [yᵢ = k])·xᵢ`.
pub fn per_sample_gradients(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<DMatrix<f64>> {
    let r = residuals(ds, psi)?;
    let (n, d, k) = (ds.len(), ds.dim(), ds.n_classes());
    let x = ds.features();
    let mut g = DMatrix::zeros(n, d * k);
    for i in 0..n {
        for c in 0..k {
            let rc = r[(i, c)];
            for j in 0..d {
                g[(i, c * d + j)] = rc * x[(i, j)];
            }
        }
    }
    Ok(g)
}

/// Gradient of [`weighted_objective`] in `vec(ψ)` layout:
/// `per_sample_gradientsᵀ·w + λ·vec(ψ)`.
pub fn weighted_gradient(
    ds: &EmbeddingDataset,
    w: &SampleWeights,
    psi: &ClassifierParams,
    cfg: &InnerSolveConfig,
) -> Result<DVector<f64>> {
    check_weights(ds, w)?;
    let mut r = residuals(ds, psi)?;
    for (i, wi) in w.as_slice().iter().enumerate() {
        r.row_mut(i).scale_mut(*wi);
    }
    let grad = ds.features().tr_mul(&r) + psi.matrix() * cfg.l2_coeff;
    Ok(DVector::from_column_slice(grad.as_slice()))
}

/// Objective value and gradient from one pass over the data.
pub(crate) fn objective_and_gradient(
    ds: &EmbeddingDataset,
    w: &[f64],
    psi: &DMatrix<f64>,
    l2: f64,
) -> (f64, DVector<f64>) {
    let z = ds.features() * psi;
    let k = z.ncols();
    let mut r = DMatrix::zeros(z.nrows(), k);
    let mut buf = vec![0.0; k];
    let mut value = 0.0;
    for (i, &y) in ds.labels().iter().enumerate() {
        for c in 0..k {
            buf[c] = z[(i, c)];
        }
        value += w[i] * (log_sum_exp(&buf) - buf[y]);
        softmax_in_place(&mut buf);
        buf[y] -= 1.0;
        for c in 0..k {
            r[(i, c)] = w[i] * buf[c];
        }
    }
    value += 0.5 * l2 * psi.norm_squared();
    let grad = ds.features().tr_mul(&r) + psi * l2;
    (value, DVector::from_column_slice(grad.as_slice()))
}

/// Data part of the Hessian (no λ term).
///
/// Block `(k, l)` is `Σᵢ wᵢ p_{ik}(δ_{kl} − p_{il}) xᵢxᵢᵀ`.
pub fn data_hessian(
    ds: &EmbeddingDataset,
    w: &SampleWeights,
    psi: &ClassifierParams,
) -> Result<DMatrix<f64>> {
    check_weights(ds, w)?;
    let p = probabilities(ds, psi)?;
    let (n, d, k) = (ds.len(), ds.dim(), ds.n_classes());
    let x = ds.features();
    let mut h = DMatrix::zeros(d * k, d * k);
    let mut scaled = DMatrix::zeros(n, d);
    for a in 0..k {
        for b in a..k {
            for i in 0..n {
                let delta = if a == b { 1.0 } else { 0.0 };
                let c = w.as_slice()[i] * p[(i, a)] * (delta - p[(i, b)]);
                for j in 0..d {
                    scaled[(i, j)] = c * x[(i, j)];
                }
            }
            let mut block = x.tr_mul(&scaled);
            if a == b {
                // the product is symmetric only up to rounding
                block = (&block + block.transpose()) * 0.5;
            }
            h.view_mut((a * d, b * d), (d, d)).copy_from(&block);
            if a != b {
                h.view_mut((b * d, a * d), (d, d)).copy_from(&block.transpose());
            }
        }
    }
    Ok(h)
}

/// Hessian of [`weighted_objective`] w.r.t. `vec(ψ)`: the data part plus `λI`.
pub fn hessian(
    ds: &EmbeddingDataset,
    w: &SampleWeights,
    psi: &ClassifierParams,
    cfg: &InnerSolveConfig,
) -> Result<DMatrix<f64>> {
    if !(cfg.l2_coeff > 0.0) {
        return Err(GsrError::config(
            "l2_coeff",
            format!("Hessian needs λ > 0, got {}", cfg.l2_coeff),
        ));
    }
    let mut h = data_hessian(ds, w, psi)?;
    for i in 0..h.nrows() {
        h[(i, i)] += cfg.l2_coeff;
    }
    Ok(h)
}
