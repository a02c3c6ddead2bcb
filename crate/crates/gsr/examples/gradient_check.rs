//! Check the exact meta-gradient against finite-difference retraining on
//! small random instances, and show the Hessian-free table failing the
//! same check.
//!
//! cargo run --release --example gradient_check

use gsr::influence::{hessian_free_table, influence_table, HessianSolveConfig};
use gsr::linear_model::{ClassifierParams, InnerSolveConfig, SampleWeights};
use gsr::verify::{
    compare_tables, finite_diff_weight_gradient, hessian_spectral_check, jacobian_check,
    oracle_fit, random_instance, InstanceShape, ORACLE_GRAD_TOL,
};

fn main() -> gsr::Result<()> {
    let shape = InstanceShape {
        n_heldout: 12,
        n_target_per_group: 4,
        dim: 3,
        n_classes: 3,
        n_groups: 2,
        feature_scales: [1.0, 5.0],
    };
    for (seed, lambda) in [(0, 0.05), (1, 0.1), (2, 1.0)] {
        let inner = InnerSolveConfig::default().with_l2(lambda).with_grad_tol(ORACLE_GRAD_TOL);
        let (heldout, target) = random_instance(&shape, seed)?;
        let w = SampleWeights::uniform(heldout.len());
        let psi = oracle_fit(&heldout, &w, &inner, &ClassifierParams::zeros(shape.dim, shape.n_classes))?;

        let numeric = finite_diff_weight_gradient(&heldout, &target, &w, &inner, 1e-4)?;
        let exact = influence_table(&heldout, &target, &psi, &w, &inner, &HessianSolveConfig::default())?;
        let hf = hessian_free_table(&heldout, &target, &psi)?;
        let e = compare_tables(&exact.scores, &numeric, 1e-3)?;
        let h = compare_tables(&hf.scores, &numeric, 1e-3)?;
        let jac = jacobian_check(&heldout, &w, &psi, &inner, 1e-4)?;
        let spec = hessian_spectral_check(&heldout, &w, &psi, lambda)?;
        println!(
            "seed {seed}, lambda {lambda}: exact {:.2e} ({}), hessian-free {:.2e} ({}), jacobian {:.1e}, min eig {:.4} >= {lambda}: {}",
            e.max_rel_error,
            if e.passed { "pass" } else { "fail" },
            h.max_rel_error,
            if h.passed { "pass" } else { "fail" },
            jac.max_rel_error,
            spec.min_eigenvalue,
            spec.passed
        );
    }
    Ok(())
}
