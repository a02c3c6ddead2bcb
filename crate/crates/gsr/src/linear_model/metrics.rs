use super::objective::{logits, per_sample_losses};
use super::ClassifierParams;
use crate::data::EmbeddingDataset;
use crate::error::Result;

/// Mean unregularized cross-entropy of each group.
pub fn group_risks(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<Vec<f64>> {
    let groups = ds.nonempty_group_indices()?;
    let losses = per_sample_losses(ds, psi)?;
    Ok(groups
        .iter()
        .map(|members| members.iter().map(|&i| losses[i]).sum::<f64>() / members.len() as f64)
        .collect())
}

/// Largest entry and its index; ties go to the smallest index.
pub fn arg_max(values: &[f64]) -> (f64, usize) {
    let mut best = (values[0], 0);
    for (g, &v) in values.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, g);
        }
    }
    best
}

/// `(max_g risk_g, argmax)`, ties broken by the smallest group id.
pub fn worst_group_risk(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<(f64, usize)> {
    Ok(arg_max(&group_risks(ds, psi)?))
}

/// Predicted class of every sample; tied logits resolve to the smallest class id.
pub fn predict(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<Vec<usize>> {
    let z = logits(ds, psi)?;
    Ok((0..z.nrows())
        .map(|i| {
            let row: Vec<f64> = z.row(i).iter().copied().collect();
            arg_max(&row).1
        })
        .collect())
}

pub fn group_accuracies(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<Vec<f64>> {
    let groups = ds.nonempty_group_indices()?;
    let pred = predict(ds, psi)?;
    let labels = ds.labels();
    Ok(groups
        .iter()
        .map(|members| {
            let hits = members.iter().filter(|&&i| pred[i] == labels[i]).count();
            hits as f64 / members.len() as f64
        })
        .collect())
}

/// `(min_g accuracy_g, argmin)`, ties broken by the smallest group id.
pub fn worst_group_accuracy(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<(f64, usize)> {
    let acc = group_accuracies(ds, psi)?;
    let mut best = (acc[0], 0);
    for (g, &a) in acc.iter().enumerate().skip(1) {
        if a < best.0 {
            best = (a, g);
        }
    }
    Ok(best)
}

/// Fraction of all samples classified correctly.
pub fn mean_accuracy(ds: &EmbeddingDataset, psi: &ClassifierParams) -> Result<f64> {
    let pred = predict(ds, psi)?;
    let hits = pred.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ds.len() as f64)
}
