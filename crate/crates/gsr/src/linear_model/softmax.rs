use nalgebra::{DMatrix, DVector};

use crate::error::{GsrError, Result};

/// Numerically stable softmax.
///
/// The maximum logit is subtracted before exponentiating, so large logits
/// cannot overflow.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(GsrError::Empty("softmax of zero logits".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(GsrError::NonFinite("softmax logits".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// `log Σ exp(z)`, max-shifted.
pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `diag(σ) − σσᵀ` for a probability vector σ: the Jacobian of softmax.
pub fn softmax_jacobian(p: &[f64]) -> DMatrix<f64> {
    let pv = DVector::from_column_slice(p);
    DMatrix::from_diagonal(&pv) - &pv * pv.transpose()
}
