use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GsrConfig;
use crate::error::{GsrError, Result};

/// One executed outer step.
///
/// `group_weight_sums` and `weight_quantiles` describe the weights the
/// step's classifier was fitted with, split by the held-out set's group
/// labels (empty when it has none). Quantiles are at 0, ¼, ½, ¾ and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub gamma: Vec<f64>,
    pub target_group_risks: Vec<f64>,
    pub val_wg_risk: f64,
    pub val_wg_acc: f64,
    pub group_weight_sums: Vec<f64>,
    pub selected: bool,
    pub outer_lr: f64,
    pub val_group_risks: Vec<f64>,
    pub val_group_accs: Vec<f64>,
    pub weight_quantiles: Vec<Vec<f64>>,
    pub xi_norm: f64,
    pub clipped: bool,
    /// The projected update was all zeros and was discarded.
    pub step_rejected: bool,
    pub inner_iterations: usize,
}

/// Closing line of a run's metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub steps: usize,
    pub selected_step: usize,
    pub best_score: f64,
    pub rejected_steps: usize,
    pub config: GsrConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub steps: Vec<StepRecord>,
    pub summary: RunSummary,
    /// Weights after the last outer step.
    pub final_weights: Vec<f64>,
    /// Weights the selected classifier was fitted with.
    pub selected_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: RunSummary,
}

impl RunRecord {
    pub fn selected(&self) -> &StepRecord {
        &self.steps[self.summary.selected_step - 1]
    }

    /// One JSON object per step, then `{"summary": {...}}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.steps {
            out.push_str(&serde_json::to_string(row).expect("step serializes"));
            out.push('\n');
        }
        let summary = SummaryLine {
            summary: self.summary.clone(),
        };
        out.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
        out.push('\n');
        out
    }
}

/// Steps and summary read back from a metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub steps: Vec<StepRecord>,
    pub summary: RunSummary,
}

pub fn parse_metrics(text: &str, path: &Path) -> Result<MetricsLog> {
    let bad = |line: usize, e: String| GsrError::Parse {
        path: path.to_path_buf(),
        reason: format!("line {}: {e}", line + 1),
    };
    let mut steps = Vec::new();
    let mut summary = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if summary.is_some() {
            return Err(bad(n, "content after the summary line".into()));
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(n, e.to_string()))?;
        if value.get("summary").is_some() {
            let s: SummaryLine = serde_json::from_value(value).map_err(|e| bad(n, e.to_string()))?;
            summary = Some(s.summary);
        } else {
            let row: StepRecord = serde_json::from_value(value).map_err(|e| bad(n, e.to_string()))?;
            if row.step != steps.len() + 1 {
                return Err(bad(n, format!("step {} out of sequence", row.step)));
            }
            steps.push(row);
        }
    }
    let summary = summary.ok_or_else(|| GsrError::Parse {
        path: path.to_path_buf(),
        reason: "missing summary line".into(),
    })?;
    if steps.len() != summary.steps {
        return Err(GsrError::Parse {
            path: path.to_path_buf(),
            reason: format!("{} step rows, summary says {}", steps.len(), summary.steps),
        });
    }
    Ok(MetricsLog { steps, summary })
}

pub fn read_metrics(path: &Path) -> Result<MetricsLog> {
    let text = fs::read_to_string(path).map_err(|e| GsrError::io(path, e))?;
    parse_metrics(&text, path)
}

/// `index,group,weight` rows; the group column is empty without group labels.
pub fn format_weights(weights: &[f64], groups: Option<&[usize]>) -> String {
    let mut out = String::from("index,group,weight\n");
    for (i, w) in weights.iter().enumerate() {
        let g = groups.map(|gs| gs[i].to_string()).unwrap_or_default();
        let _ = writeln!(out, "{i},{g},{w:?}");
    }
    out
}

/// Inverse of [`format_weights`].
pub fn parse_weights(text: &str, path: &Path) -> Result<(Vec<f64>, Option<Vec<usize>>)> {
    let bad = |row: usize, reason: String| GsrError::MalformedRow { row, reason };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut weights = Vec::new();
    let mut groups = Vec::new();
    let mut has_groups = true;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(row, e.to_string()))?;
        if rec.len() != 3 {
            return Err(bad(row, format!("{} fields, expected 3", rec.len())));
        }
        if rec[1].is_empty() {
            has_groups = false;
        } else {
            groups.push(rec[1].parse().map_err(|_| bad(row, "bad group".into()))?);
        }
        weights.push(rec[2].parse().map_err(|_| bad(row, "bad weight".into()))?);
    }
    if weights.is_empty() {
        return Err(GsrError::Parse {
            path: path.to_path_buf(),
            reason: "no weights".into(),
        });
    }
    Ok((weights, has_groups.then_some(groups)))
}

/// Quantiles at `qs` by linear interpolation between order statistics.
pub fn quantiles(values: &[f64], qs: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return vec![f64::NAN; qs.len()];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    qs.iter()
        .map(|q| {
            let pos = q * last;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    quantiles(values, &[0.5])[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolation() {
        let q = quantiles(&[4.0, 1.0, 3.0, 2.0], &[0.0, 0.5, 1.0]);
        assert_eq!(q, vec![1.0, 2.5, 4.0]);
        assert_eq!(median(&[5.0]), 5.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn weights_round_trip() {
        let text = format_weights(&[0.25, 0.75], Some(&[1, 0]));
        assert_eq!(text, "index,group,weight\n0,1,0.25\n1,0,0.75\n");
        let (w, g) = parse_weights(&text, Path::new("w.csv")).unwrap();
        assert_eq!(w, vec![0.25, 0.75]);
        assert_eq!(g, Some(vec![1, 0]));
        let (_, g) = parse_weights(&format_weights(&[1.0], None), Path::new("w.csv")).unwrap();
        assert_eq!(g, None);
    }

    #[test]
    fn corrupt_metrics_are_rejected() {
        let p = Path::new("metrics.jsonl");
        assert!(parse_metrics("", p).is_err());
        assert!(parse_metrics("{not json}\n", p).is_err());
    }
}
