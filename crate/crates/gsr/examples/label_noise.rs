//! Reweighting with 40% of held-out labels flipped: flipped minority
//! samples end up with near-zero weight.
//!
//! cargo run --release --example label_noise

use gsr::data::{inject_label_noise, make_synthetic, split_target_val, NoiseSpec, SyntheticSpec};
use gsr::linear_model::worst_group_accuracy;
use gsr::reweight::{gsr_run, median, GsrConfig};

fn main() -> gsr::Result<()> {
    let spec = SyntheticSpec::default();
    let clean = make_synthetic(&spec)?;
    let (target, validation) = split_target_val(&make_synthetic(&spec.balanced(100, 1))?, 0)?;
    let test = make_synthetic(&spec.balanced(1000, 2))?;
    let (noisy, flipped) = inject_label_noise(&clean, &NoiseSpec { flip_fraction: 0.4, seed: 0 })?;
    let cfg = GsrConfig::default();

    let clean_run = gsr_run(&clean, &target, &validation, &cfg)?;
    let noisy_run = gsr_run(&noisy, &target, &validation, &cfg)?;
    println!(
        "test worst-group accuracy: clean {:.3}, 40% flipped {:.3}",
        worst_group_accuracy(&test, &clean_run.psi)?.0,
        worst_group_accuracy(&test, &noisy_run.psi)?.0
    );

    let groups = noisy.require_groups()?;
    let w = noisy_run.w.as_slice();
    for g in 0..spec.n_groups() {
        let (mut f, mut c) = (Vec::new(), Vec::new());
        for i in (0..noisy.len()).filter(|&i| groups[i] == g) {
            if flipped.binary_search(&i).is_ok() {
                f.push(w[i]);
            } else {
                c.push(w[i]);
            }
        }
        println!(
            "group {g}: {} flipped (median weight {:.2e}), {} clean (median weight {:.2e})",
            f.len(),
            median(&f),
            c.len(),
            median(&c)
        );
    }
    Ok(())
}
