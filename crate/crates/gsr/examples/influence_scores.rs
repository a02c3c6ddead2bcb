//! Exact and Hessian-free influence of held-out samples on each target
//! group's risk, and their γ-weighted aggregate.
//!
//! cargo run --release --example influence_scores

use gsr::data::{make_synthetic, split_target_val, SyntheticSpec};
use gsr::influence::{
    aggregate_influence, hessian_free_table, influence_table, HessianSolveConfig,
};
use gsr::linear_model::{fit_last_layer, group_risks, ClassifierParams, InnerSolveConfig, SampleWeights};
use gsr::reweight::gamma_update;

fn main() -> gsr::Result<()> {
    let spec = SyntheticSpec::default().resized(vec![90, 10, 10, 90], 0);
    let heldout = make_synthetic(&spec)?;
    let (target, _) = split_target_val(&make_synthetic(&spec.balanced(40, 1))?, 0)?;
    let inner = InnerSolveConfig::default();
    let w = SampleWeights::uniform(heldout.len());
    let psi = fit_last_layer(&heldout, &w, &inner, &ClassifierParams::zeros(heldout.dim(), 2))?;

    let exact = influence_table(&heldout, &target, &psi, &w, &inner, &HessianSolveConfig::default())?;
    let hf = hessian_free_table(&heldout, &target, &psi)?;

    let risks = group_risks(&target, &psi)?;
    let m = risks.len();
    let gamma = gamma_update(&vec![1.0 / m as f64; m], &risks, 0.1)?;
    println!("target risks {risks:.3?}\ngamma {gamma:.3?}");

    let xi = aggregate_influence(&exact, &gamma)?;
    let groups = heldout.require_groups()?;
    for g in 0..m {
        let members: Vec<f64> = (0..heldout.len()).filter(|&i| groups[i] == g).map(|i| xi[i]).collect();
        let mean = members.iter().sum::<f64>() / members.len() as f64;
        println!("held-out group {g}: mean aggregated influence {mean:+.4}");
    }
    let diff = (&exact.scores - &hf.scores).amax();
    println!("largest |exact - hessian-free| entry: {diff:.3}");
    println!("first rows of the exact table:");
    for line in exact.to_delimited().lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
