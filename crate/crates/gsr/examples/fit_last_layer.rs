//! Fit the regularized softmax last layer with uniform and group-balanced
//! weights and compare per-group test accuracy.
//!
//! cargo run --release --example fit_last_layer

use gsr::data::{make_synthetic, SyntheticSpec};
use gsr::linear_model::{
    fit_last_layer_detailed, group_accuracies, worst_group_accuracy, ClassifierParams,
    InnerSolveConfig, SampleWeights,
};
use gsr::verify::group_balanced_weights;

fn main() -> gsr::Result<()> {
    let spec = SyntheticSpec::default();
    let train = make_synthetic(&spec)?;
    let test = make_synthetic(&spec.balanced(1000, 99))?;
    let cfg = InnerSolveConfig::default();
    let zeros = ClassifierParams::zeros(train.dim(), train.n_classes());

    for (name, w) in [
        ("uniform", SampleWeights::uniform(train.len())),
        ("group-balanced", group_balanced_weights(&train)?),
    ] {
        let fit = fit_last_layer_detailed(&train, &w, &cfg, &zeros)?;
        let (wga, g) = worst_group_accuracy(&test, &fit.params)?;
        println!(
            "{name:>15}: objective {:.6}, {} L-BFGS iterations, gradient {:.1e}",
            fit.objective, fit.iterations, fit.grad_norm
        );
        let accs: Vec<String> = group_accuracies(&test, &fit.params)?
            .iter()
            .map(|a| format!("{a:.3}"))
            .collect();
        println!("{:>15}  group accuracies [{}], worst {wga:.3} (group {g})", "", accs.join(", "));
    }
    Ok(())
}
