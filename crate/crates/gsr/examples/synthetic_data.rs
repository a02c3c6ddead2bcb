//! Generate a spurious-correlation dataset, carve out held-out, target and
//! validation sets, and corrupt some labels.
//!
//! cargo run --example synthetic_data

use gsr::data::{
    inject_label_noise, make_synthetic, split_holdout, split_target_val, NoiseSpec, SplitPlan,
    SyntheticSpec,
};

fn main() -> gsr::Result<()> {
    let spec = SyntheticSpec::default();
    let train = make_synthetic(&spec)?;
    println!(
        "train: n = {}, d = {}, K = {}, m = {}, group sizes {:?}",
        train.len(),
        train.dim(),
        train.n_classes(),
        train.n_groups(),
        train.group_counts()?
    );
    println!("majority groups {:?}, minority groups {:?}", spec.majority_groups(), spec.minority_groups());

    let plan = SplitPlan {
        heldout_fraction: 0.2,
        seed: 7,
        stratify_by_group: true,
    };
    let (heldout, rest) = split_holdout(&train, &plan)?;
    println!("held-out {:?}, remaining {:?}", heldout.group_counts()?, rest.group_counts()?);

    let pool = make_synthetic(&spec.balanced(51, 1))?;
    let (target, validation) = split_target_val(&pool, 3)?;
    println!("target {:?}, validation {:?}", target.group_counts()?, validation.group_counts()?);

    let (noisy, flipped) = inject_label_noise(&heldout, &NoiseSpec { flip_fraction: 0.4, seed: 5 })?;
    let changed = (0..noisy.len()).filter(|&i| noisy.labels()[i] != heldout.labels()[i]).count();
    println!("flipped {} of {} held-out labels ({changed} changed)", flipped.len(), noisy.len());
    Ok(())
}
