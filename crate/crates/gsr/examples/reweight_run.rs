//! Full reweighting loop on the default spurious-correlation data, against
//! the uniform (ERM) and group-balanced baselines.
//!
//! cargo run --release --example reweight_run

use gsr::data::{make_synthetic, split_target_val, SyntheticSpec};
use gsr::linear_model::worst_group_accuracy;
use gsr::reweight::{gsr_run, GsrConfig};
use gsr::verify::{erm_baseline, group_balanced_baseline};

fn main() -> gsr::Result<()> {
    let spec = SyntheticSpec::default();
    let heldout = make_synthetic(&spec)?;
    let (target, validation) = split_target_val(&make_synthetic(&spec.balanced(100, 1))?, 0)?;
    let test = make_synthetic(&spec.balanced(1000, 2))?;
    let cfg = GsrConfig::default();

    let run = gsr_run(&heldout, &target, &validation, &cfg)?;
    let erm = erm_baseline(&heldout, &cfg.inner)?;
    let balanced = group_balanced_baseline(&heldout, &cfg.inner)?;

    let minority = spec.minority_groups();
    let minority_mass = |sums: &[f64]| minority.iter().map(|&g| sums[g]).sum::<f64>();
    println!("step  val wg-risk  val wg-acc  minority mass");
    for r in run.record.steps.iter().step_by(10) {
        println!(
            "{:>4}  {:>11.4}  {:>10.4}  {:>13.4}{}",
            r.step,
            r.val_wg_risk,
            r.val_wg_acc,
            minority_mass(&r.group_weight_sums),
            if r.selected { "  *" } else { "" }
        );
    }
    let sel = run.record.selected();
    println!(
        "selected step {}: minority mass {:.4} (initially {:.4})",
        sel.step,
        minority_mass(&sel.group_weight_sums),
        minority_mass(&run.record.steps[0].group_weight_sums)
    );
    for (name, psi) in [("ERM", &erm), ("group-balanced", &balanced), (run.record.summary.method.as_str(), &run.psi)] {
        println!("{name:>15}: test worst-group accuracy {:.3}", worst_group_accuracy(&test, psi)?.0);
    }
    Ok(())
}
