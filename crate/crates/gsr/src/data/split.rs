use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{round_count, rng_from_seed, EmbeddingDataset};
use crate::error::{GsrError, Result};

/// How to carve the held-out set out of the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub heldout_fraction: f64,
    pub seed: u64,
    pub stratify_by_group: bool,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            heldout_fraction: 0.1,
            seed: 1,
            stratify_by_group: false,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let a = self.heldout_fraction;
        if !(a > 0.0 && a < 1.0) {
            return Err(GsrError::config(
                "heldout_fraction",
                format!("must lie in (0, 1), got {a}"),
            ));
        }
        Ok(())
    }
}

/// Index partition produced by a split, each side in ascending row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Splits off `round(α·n)` rows as the held-out set.
///
/// Returns `(heldout, remaining)`; both keep the input's row order.
pub fn split_holdout(
    ds: &EmbeddingDataset,
    plan: &SplitPlan,
) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    let idx = holdout_indices(ds, plan)?;
    Ok((ds.subset(&idx.first), ds.subset(&idx.second)))
}

/// The index partition behind [`split_holdout`].
///
/// Unstratified: one ChaCha8 shuffle of `0..n`, the first `round(α·n)`
/// positions are held out. Stratified: per-group quotas by largest
/// remainder (ties to the smaller group id), each group shuffled in
/// group-id order from the same stream.
pub fn holdout_indices(ds: &EmbeddingDataset, plan: &SplitPlan) -> Result<SplitIndices> {
    plan.validate()?;
    let n = ds.len();
    let take = round_count(plan.heldout_fraction, n);
    if take == 0 || take == n {
        return Err(GsrError::InvalidSplit(format!(
            "heldout_fraction {} on {n} rows gives an empty side",
            plan.heldout_fraction
        )));
    }
    let mut rng = rng_from_seed(plan.seed);
    let mut first = Vec::with_capacity(take);
    let mut second = Vec::with_capacity(n - take);

    if plan.stratify_by_group {
        let groups = ds.group_indices()?;
        if let Some(g) = groups.iter().position(Vec::is_empty) {
            return Err(GsrError::InvalidSplit(format!(
                "stratum for group {g} has no samples"
            )));
        }
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let quotas = apportion(&sizes, plan.heldout_fraction, take);
        for (mut members, quota) in groups.into_iter().zip(quotas) {
            members.shuffle(&mut rng);
            first.extend_from_slice(&members[..quota]);
            second.extend_from_slice(&members[quota..]);
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        first.extend_from_slice(&order[..take]);
        second.extend_from_slice(&order[take..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok(SplitIndices { first, second })
}

/// Largest-remainder apportionment of `total` across strata of `sizes`.
fn apportion(sizes: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&s| s as f64 * fraction).collect();
    let mut quotas: Vec<usize> = exact
        .iter()
        .zip(sizes)
        .map(|(&e, &s)| (e.floor() as usize).min(s))
        .collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(assigned);
    for &g in order.iter().cycle().take(sizes.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[g] < sizes[g] {
            quotas[g] += 1;
            remaining -= 1;
        }
    }
    quotas
}

/// Halves a group-labelled set into target and validation sets.
///
/// Each group is shuffled and split in half; an odd member goes alternately
/// to target and validation so the totals differ by at most one.
pub fn split_target_val(
    ds: &EmbeddingDataset,
    seed: u64,
) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    let idx = target_val_indices(ds, seed)?;
    Ok((ds.subset(&idx.first), ds.subset(&idx.second)))
}

pub fn target_val_indices(ds: &EmbeddingDataset, seed: u64) -> Result<SplitIndices> {
    let groups = ds.group_indices()?;
    if let Some(g) = groups.iter().position(|m| m.len() < 2) {
        return Err(GsrError::InvalidSplit(format!(
            "group {g} has {} sample(s); need at least 2 to split",
            groups[g].len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut odd_to_target = true;
    for mut members in groups {
        members.shuffle(&mut rng);
        let mut half = members.len() / 2;
        if members.len() % 2 == 1 {
            if odd_to_target {
                half += 1;
            }
            odd_to_target = !odd_to_target;
        }
        first.extend_from_slice(&members[..half]);
        second.extend_from_slice(&members[half..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok(SplitIndices { first, second })
}
