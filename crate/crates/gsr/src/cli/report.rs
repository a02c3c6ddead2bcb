use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{create_dir, write_file, HELDOUT_SOURCE_FILE, METRICS_FILE, WEIGHTS_FILE};
use crate::error::{GsrError, Result};
use crate::reweight::{median, parse_weights, read_metrics, StepRecord};

/// Uniform bins over `[0, max final weight]`; the last bin is closed.
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub run_dir: PathBuf,
    /// Defaults to `<run_dir>/report`.
    pub out_dir: Option<PathBuf>,
    pub top_k: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            run_dir: PathBuf::from("runs/latest"),
            out_dir: None,
            top_k: 10,
        }
    }
}

/// Tables written by [`cmd_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub weight_sums: PathBuf,
    pub gamma: PathBuf,
    pub histograms: PathBuf,
    pub top_k: PathBuf,
    pub bottom_k: PathBuf,
    /// Present when the run corrupted labels.
    pub noise: Option<PathBuf>,
}

/// Counts of `values` in `bins` uniform bins over
/// `[0, max]`. Values above `max` land in the last bin.
pub fn weight_histogram(values: &[f64], max: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 {
        return counts;
    }
    for &v in values {
        let b = if max > 0.0 {
            ((v / max) * bins as f64).floor().max(0.0) as usize
        } else {
            0
        };
        counts[b.min(bins - 1)] += 1;
    }
    counts
}

fn per_step_table(steps: &[StepRecord], pick: impl Fn(&StepRecord) -> &[f64]) -> String {
    let width = steps.first().map_or(0, |s| pick(s).len());
    let mut out = String::from("step");
    for g in 0..width {
        let _ = write!(out, ",group_{g}");
    }
    out.push('\n');
    for s in steps {
        let _ = write!(out, "{}", s.step);
        for v in pick(s) {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

fn read_flipped(path: &Path, n: usize) -> Result<Option<Vec<bool>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| GsrError::io(path, e))?;
    let bad = |reason: String| GsrError::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut flipped = Vec::with_capacity(n);
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        flipped.push(rec.get(2) == Some("1"));
    }
    if flipped.len() != n {
        return Err(bad(format!("{} rows, weights file has {n}", flipped.len())));
    }
    Ok(flipped.iter().any(|&f| f).then_some(flipped))
}

/// Plot-ready tables from a run directory: per-step group weight sums,
/// γ trajectories, final per-group weight histograms, the `top_k`
/// heaviest and lightest samples and, for noisy runs, flipped-versus-clean
/// weight medians per group.
pub fn cmd_report(cfg: &ReportConfig) -> Result<ReportFiles> {
    let run = &cfg.run_dir;
    let log = read_metrics(&run.join(METRICS_FILE))?;
    if log.steps.is_empty() {
        return Err(GsrError::Parse {
            path: run.join(METRICS_FILE),
            reason: "no step records".into(),
        });
    }
    let wpath = run.join(WEIGHTS_FILE);
    let text = fs::read_to_string(&wpath).map_err(|e| GsrError::io(&wpath, e))?;
    let (weights, groups) = parse_weights(&text, &wpath)?;
    let flipped = read_flipped(&run.join(HELDOUT_SOURCE_FILE), weights.len())?;

    let out = cfg.out_dir.clone().unwrap_or_else(|| run.join("report"));
    create_dir(&out)?;
    let files = ReportFiles {
        weight_sums: out.join("weight_sums.csv"),
        gamma: out.join("gamma.csv"),
        histograms: out.join("histograms.csv"),
        top_k: out.join("top_k.csv"),
        bottom_k: out.join("bottom_k.csv"),
        noise: flipped.as_ref().map(|_| out.join("noise.csv")),
    };

    write_file(&files.weight_sums, per_step_table(&log.steps, |s| &s.group_weight_sums))?;
    write_file(&files.gamma, per_step_table(&log.steps, |s| &s.gamma))?;

    let group_of = |i: usize| groups.as_ref().map_or(0, |g| g[i]);
    let n_groups = (0..weights.len()).map(group_of).max().map_or(0, |g| g + 1);
    let max = weights.iter().copied().fold(0.0, f64::max);
    let width = max / HISTOGRAM_BINS as f64;
    let mut hist = String::from("group,bin,lower,upper,count\n");
    for g in 0..n_groups {
        let members: Vec<f64> = (0..weights.len())
            .filter(|&i| group_of(i) == g)
            .map(|i| weights[i])
            .collect();
        for (b, c) in weight_histogram(&members, max, HISTOGRAM_BINS).iter().enumerate() {
            let lo = width * b as f64;
            let _ = writeln!(hist, "{g},{b},{lo:?},{:?},{c}", lo + width);
        }
    }
    write_file(&files.histograms, hist)?;

    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let ranked = |idx: &mut dyn Iterator<Item = &usize>| {
        let mut t = String::from("rank,index,group,weight\n");
        for (r, &i) in idx.take(cfg.top_k).enumerate() {
            let _ = writeln!(t, "{},{i},{},{:?}", r + 1, group_of(i), weights[i]);
        }
        t
    };
    write_file(&files.top_k, ranked(&mut order.iter()))?;
    order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));
    write_file(&files.bottom_k, ranked(&mut order.iter()))?;

    if let (Some(flipped), Some(path)) = (&flipped, &files.noise) {
        let mut t = String::from("group,n_flipped,flipped_median,n_clean,clean_median\n");
        for g in 0..n_groups {
            let pick = |want: bool| -> Vec<f64> {
                (0..weights.len())
                    .filter(|&i| group_of(i) == g && flipped[i] == want)
                    .map(|i| weights[i])
                    .collect()
            };
            let (f, c) = (pick(true), pick(false));
            let _ = writeln!(
                t,
                "{g},{},{:?},{},{:?}",
                f.len(),
                median(&f),
                c.len(),
                median(&c)
            );
        }
        write_file(path, t)?;
    }
    Ok(files)
}
