//! Influence of upweighting each held-out sample on each target group's risk.
//!
//! With `ψ*` the minimizer of the weighted inner objective and `H` its
//! Hessian there, the total derivative of target group `g`'s mean loss
//! with respect to `wᵢ` is
//!
//! ```text
//! dR_g/dwᵢ = −∇R_g(ψ*)ᵀ H⁻¹ ∇ℓ(zᵢ; ψ*)
//! ```
//!
//! The table is assembled from three pieces: the `n × dK` per-sample
//! gradients of the held-out set, the `m × dK` per-group mean gradients of
//! the target set, and `m` solves against `H`. The Hessian-free variant
//! drops `H⁻¹`, which is the one-step truncated meta-gradient.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingDataset;
use crate::error::{GsrError, Result};
use crate::linear_model::{
    hessian, per_sample_gradients, weighted_gradient, ClassifierParams, InnerSolveConfig,
    SampleWeights,
};

/// Which meta-gradient produced a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceMethod {
    Exact,
    HessianFree,
}

impl InfluenceMethod {
    /// Short name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            InfluenceMethod::Exact => "GSR",
            InfluenceMethod::HessianFree => "GSR-HF",
        }
    }
}

impl std::str::FromStr for InfluenceMethod {
    type Err = GsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(InfluenceMethod::Exact),
            "hessian_free" | "hessian-free" | "hf" => Ok(InfluenceMethod::HessianFree),
            other => Err(GsrError::config(
                "method",
                format!("expected `exact` or `hessian_free`, got `{other}`"),
            )),
        }
    }
}

/// `scores[(i, g)]`: derivative of target group `g`'s risk w.r.t. `wᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceTable {
    pub scores: DMatrix<f64>,
    pub method: InfluenceMethod,
}

impl InfluenceTable {
    pub fn n_samples(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_groups(&self) -> usize {
        self.scores.ncols()
    }

    /// Delimited text, one row per held-out sample, one column per group.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("index");
        for g in 0..self.n_groups() {
            let _ = write!(out, ",group_{g}");
        }
        out.push('\n');
        for i in 0..self.n_samples() {
            let _ = write!(out, "{i}");
            for g in 0..self.n_groups() {
                let _ = write!(out, ",{:?}", self.scores[(i, g)]);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStrategy {
    /// Direct up to [`DIRECT_SOLVE_LIMIT`] parameters, iterative above.
    Auto,
    /// Cholesky factorization, reused across right-hand sides.
    Direct,
    /// Conjugate gradients, run to a relative residual.
    Iterative,
}

pub const DIRECT_SOLVE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HessianSolveConfig {
    pub strategy: SolveStrategy,
    /// Each solution must satisfy `‖H s − b‖ ≤ residual_tol·‖b‖`.
    pub residual_tol: f64,
    pub max_solve_iters: usize,
}

impl Default for HessianSolveConfig {
    fn default() -> Self {
        Self {
            strategy: SolveStrategy::Auto,
            residual_tol: 1e-10,
            max_solve_iters: 10_000,
        }
    }
}

impl HessianSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) {
            return Err(GsrError::config("residual_tol", "must be positive"));
        }
        Ok(())
    }
}

/// Mean unregularized gradient of each target group, one row per group.
pub fn target_group_gradients(
    target: &EmbeddingDataset,
    psi: &ClassifierParams,
) -> Result<DMatrix<f64>> {
    let groups = target.nonempty_group_indices()?;
    let per_sample = per_sample_gradients(target, psi)?;
    let mut out = DMatrix::zeros(groups.len(), per_sample.ncols());
    for (g, members) in groups.iter().enumerate() {
        let mut row = out.row_mut(g);
        for &i in members {
            row += per_sample.row(i);
        }
        row /= members.len() as f64;
    }
    Ok(out)
}

/// Solves `H sᵍ = bᵍ` for every row `bᵍ` of `rhs`; returns the `sᵍ` as rows.
pub fn hessian_solve(
    h: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    cfg: &HessianSolveConfig,
) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let p = h.nrows();
    if h.ncols() != p || rhs.ncols() != p {
        return Err(GsrError::DimensionMismatch(format!(
            "Hessian {}×{}, right-hand sides of length {}",
            h.nrows(),
            h.ncols(),
            rhs.ncols()
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(GsrError::Factorization("Hessian has non-finite entries".into()));
    }
    let strategy = match cfg.strategy {
        SolveStrategy::Auto if p <= DIRECT_SOLVE_LIMIT => SolveStrategy::Direct,
        SolveStrategy::Auto => SolveStrategy::Iterative,
        s => s,
    };
    let solution = match strategy {
        SolveStrategy::Direct => {
            let chol = Cholesky::new(h.clone()).ok_or_else(|| {
                GsrError::Factorization("Hessian is not positive definite (is λ > 0?)".into())
            })?;
            chol.solve(&rhs.transpose()).transpose()
        }
        _ => {
            let mut out = DMatrix::zeros(rhs.nrows(), p);
            for g in 0..rhs.nrows() {
                let b = rhs.row(g).transpose();
                let s = conjugate_gradient(h, &b, cfg)?;
                out.row_mut(g).copy_from(&s.transpose());
            }
            out
        }
    };
    for g in 0..rhs.nrows() {
        let b = rhs.row(g).transpose();
        let r = (h * solution.row(g).transpose() - &b).norm();
        if r > cfg.residual_tol * b.norm() {
            return Err(GsrError::SolveNotConverged {
                iters: 0,
                tol: cfg.residual_tol,
                residual: r / b.norm(),
            });
        }
    }
    Ok(solution)
}

fn conjugate_gradient(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    cfg: &HessianSolveConfig,
) -> Result<DVector<f64>> {
    let bnorm = b.norm();
    let mut x = DVector::zeros(b.len());
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    // the recursive residual drifts; stop a little below the target
    let target = 0.1 * cfg.residual_tol * bnorm;
    for _ in 0..cfg.max_solve_iters {
        if rs.sqrt() <= target {
            return Ok(x);
        }
        let hp = h * &p;
        let curvature = p.dot(&hp);
        if !(curvature > 0.0) {
            return Err(GsrError::Factorization(
                "non-positive curvature in conjugate gradients".into(),
            ));
        }
        let alpha = rs / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &hp, 1.0);
        let rs_new = r.norm_squared();
        p = &r + &p * (rs_new / rs);
        rs = rs_new;
    }
    let residual = (h * &x - b).norm() / bnorm;
    if residual <= cfg.residual_tol {
        return Ok(x);
    }
    Err(GsrError::SolveNotConverged {
        iters: cfg.max_solve_iters,
        tol: cfg.residual_tol,
        residual,
    })
}

/// `scores = −G S ᵀ` with `G` the per-sample gradients (`n × dK`) and `S`
/// the rows `H⁻¹∇R_g` (`m × dK`).
fn scores_from(sample_grads: &DMatrix<f64>, solved: &DMatrix<f64>) -> DMatrix<f64> {
    -(sample_grads * solved.transpose())
}

/// Exact influence table from precomputed pieces.
///
/// Exposed so callers can inject their own Hessian; the rows of a given
/// sample depend only on its gradient, `H` and the target gradients.
pub fn influence_from_parts(
    sample_grads: &DMatrix<f64>,
    target_grads: &DMatrix<f64>,
    h: &DMatrix<f64>,
    cfg: &HessianSolveConfig,
) -> Result<InfluenceTable> {
    let solved = hessian_solve(h, target_grads, cfg)?;
    Ok(InfluenceTable {
        scores: scores_from(sample_grads, &solved),
        method: InfluenceMethod::Exact,
    })
}

/// Exact influence of each held-out sample on each target group.
///
/// `psi_star` must be an inner optimum for `w`: its gradient ∞-norm may be
/// at most `10 × inner.grad_tol`.
pub fn influence_table(
    heldout: &EmbeddingDataset,
    target: &EmbeddingDataset,
    psi_star: &ClassifierParams,
    w: &SampleWeights,
    inner: &InnerSolveConfig,
    solve: &HessianSolveConfig,
) -> Result<InfluenceTable> {
    let grad_norm = weighted_gradient(heldout, w, psi_star, inner)?.amax();
    let limit = 10.0 * inner.grad_tol;
    if grad_norm > limit {
        return Err(GsrError::NotStationary { grad_norm, limit });
    }
    let h = hessian(heldout, w, psi_star, inner)?;
    let sample_grads = per_sample_gradients(heldout, psi_star)?;
    let target_grads = target_group_gradients(target, psi_star)?;
    influence_from_parts(&sample_grads, &target_grads, &h, solve)
}

/// One-step truncated meta-gradient: `scores[(i, g)] = −∇R_gᵀ ∇ℓ(zᵢ)`.
pub fn hessian_free_table(
    heldout: &EmbeddingDataset,
    target: &EmbeddingDataset,
    psi_star: &ClassifierParams,
) -> Result<InfluenceTable> {
    if heldout.dim() != target.dim() || heldout.n_classes() != target.n_classes() {
        return Err(GsrError::DimensionMismatch(
            "held-out and target sets differ in d or K".into(),
        ));
    }
    let sample_grads = per_sample_gradients(heldout, psi_star)?;
    let target_grads = target_group_gradients(target, psi_star)?;
    Ok(InfluenceTable {
        scores: scores_from(&sample_grads, &target_grads),
        method: InfluenceMethod::HessianFree,
    })
}

pub const GAMMA_SIMPLEX_TOL: f64 = 1e-9;

/// `ξ = scores·γ`, the γ-weighted combination of group columns.
pub fn aggregate_influence(table: &InfluenceTable, gamma: &[f64]) -> Result<Vec<f64>> {
    if gamma.len() != table.n_groups() {
        return Err(GsrError::DimensionMismatch(format!(
            "{} aggregation weights for {} groups",
            gamma.len(),
            table.n_groups()
        )));
    }
    let sum: f64 = gamma.iter().sum();
    if gamma.iter().any(|&g| !(g >= -GAMMA_SIMPLEX_TOL)) || (sum - 1.0).abs() > GAMMA_SIMPLEX_TOL {
        return Err(GsrError::OffSimplex(format!(
            "aggregation weights sum to {sum} or contain negatives"
        )));
    }
    let xi = &table.scores * DVector::from_column_slice(gamma);
    Ok(xi.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(p: usize, lambda: f64, seed: u64) -> DMatrix<f64> {
        let mut state = seed;
        let a = DMatrix::from_fn(p, p, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        &a * a.transpose() + DMatrix::identity(p, p) * lambda
    }

    #[test]
    fn scaled_identity_solve() {
        let h = DMatrix::identity(3, 3) * 0.5;
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0]);
        let s = hessian_solve(&h, &b, &HessianSolveConfig::default()).unwrap();
        assert!((s - &b / 0.5).amax() < 1e-15);
        let zero = DMatrix::zeros(2, 3);
        let cfg = HessianSolveConfig {
            strategy: SolveStrategy::Iterative,
            ..Default::default()
        };
        assert_eq!(hessian_solve(&h, &zero, &cfg).unwrap(), zero);
    }

    #[test]
    fn direct_and_iterative_agree() {
        let h = spd(12, 0.1, 7);
        let b = DMatrix::from_fn(3, 12, |i, j| ((i * 12 + j) as f64).sin());
        let direct = hessian_solve(&h, &b, &HessianSolveConfig::default()).unwrap();
        let cfg = HessianSolveConfig {
            strategy: SolveStrategy::Iterative,
            ..Default::default()
        };
        let cg = hessian_solve(&h, &b, &cfg).unwrap();
        assert!((direct - cg).amax() < 1e-6);
    }

    #[test]
    fn indefinite_hessian_fails_to_factor() {
        let mut h = DMatrix::identity(2, 2);
        h[(1, 1)] = -1.0;
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(matches!(
            hessian_solve(&h, &b, &HessianSolveConfig::default()),
            Err(GsrError::Factorization(_))
        ));
    }

    #[test]
    fn aggregation() {
        let table = InfluenceTable {
            scores: DMatrix::from_row_slice(2, 2, &[1.0, 3.0, -2.0, 4.0]),
            method: InfluenceMethod::Exact,
        };
        assert_eq!(aggregate_influence(&table, &[0.0, 1.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(aggregate_influence(&table, &[0.5, 0.5]).unwrap(), vec![2.0, 1.0]);
        assert!(aggregate_influence(&table, &[0.6, 0.6]).is_err());
        assert!(aggregate_influence(&table, &[1.0]).is_err());
    }

    #[test]
    fn table_dump_shape() {
        let table = InfluenceTable {
            scores: DMatrix::from_row_slice(2, 2, &[1.0, 3.0, -2.0, 0.5]),
            method: InfluenceMethod::Exact,
        };
        assert_eq!(table.to_delimited(), "index,group_0,group_1\n0,1.0,3.0\n1,-2.0,0.5\n");
    }

    #[test]
    fn method_parsing() {
        assert_eq!("exact".parse::<InfluenceMethod>().unwrap(), InfluenceMethod::Exact);
        assert_eq!(
            "hessian_free".parse::<InfluenceMethod>().unwrap().label(),
            "GSR-HF"
        );
        assert!("newton".parse::<InfluenceMethod>().is_err());
    }
}
