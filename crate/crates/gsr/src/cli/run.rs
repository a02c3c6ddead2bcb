use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    create_dir, write_config, write_file, SynthConfig, CONFIG_FILE, HELDOUT_FILE,
    HELDOUT_SOURCE_FILE, INFLUENCE_FILE, METRICS_FILE, PSI_FILE, SELECTED_WEIGHTS_FILE,
    SUMMARY_FILE, TARGET_FILE, TEST_FILE, TRAIN_FILE, VALIDATION_FILE, WEIGHTS_FILE,
};
use crate::data::{
    holdout_indices, inject_label_noise, load_embeddings, write_embeddings, EmbeddingDataset,
    NoiseSpec, Schema, SplitPlan,
};
use crate::error::{GsrError, Result};
use crate::influence::{
    hessian_free_table, influence_table, HessianSolveConfig, InfluenceMethod, InfluenceTable,
};
use crate::linear_model::{
    group_accuracies, mean_accuracy, worst_group_accuracy, ClassifierParams, InnerSolveConfig,
    SampleWeights,
};
use crate::reweight::{format_weights, gsr_run, GsrConfig, GsrRun, OuterConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataFiles {
    pub train: PathBuf,
    pub target: PathBuf,
    pub validation: PathBuf,
    pub test: Option<PathBuf>,
}

impl Default for DataFiles {
    /// The layout `synth` writes into `data/`.
    fn default() -> Self {
        let dir = Path::new("data");
        Self {
            train: dir.join(TRAIN_FILE),
            target: dir.join(TARGET_FILE),
            validation: dir.join(VALIDATION_FILE),
            test: Some(dir.join(TEST_FILE)),
        }
    }
}

/// Where a run's data comes from: embedding files, or the synthetic
/// generator run in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Files(DataFiles),
    Synthetic(SynthConfig),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Files(DataFiles::default())
    }
}

/// Everything `run` needs. The held-out set reweighted by the loop is the
/// `split.heldout_fraction` share of the training file; the remainder is
/// the part a first stage would have trained the features on, and is not
/// used. `noise`, when set, corrupts held-out labels only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub split: SplitPlan,
    pub noise: Option<NoiseSpec>,
    pub inner: InnerSolveConfig,
    pub outer: OuterConfig,
    pub solve: HessianSolveConfig,
    pub method: InfluenceMethod,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Also write the influence table at the selected step.
    pub dump_influence: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            split: SplitPlan {
                heldout_fraction: 0.5,
                seed: 1,
                stratify_by_group: true,
            },
            noise: None,
            inner: InnerSolveConfig::default(),
            outer: OuterConfig::default(),
            solve: HessianSolveConfig::default(),
            method: InfluenceMethod::Exact,
            seed: 0,
            out_dir: PathBuf::from("runs/latest"),
            dump_influence: false,
        }
    }
}

impl RunConfig {
    pub fn gsr(&self) -> GsrConfig {
        GsrConfig {
            inner: self.inner,
            outer: self.outer,
            solve: self.solve,
            method: self.method,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.split.validate()?;
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        self.gsr().validate()
    }
}

/// Selected classifier on the test file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub worst_group_accuracy: f64,
    pub worst_group: usize,
    pub mean_accuracy: f64,
    pub group_accuracies: Vec<f64>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryFile {
    pub method: String,
    pub steps: usize,
    pub selected_step: usize,
    pub best_score: f64,
    pub rejected_steps: usize,
    pub n_heldout: usize,
    pub n_flipped: usize,
    pub test: Option<TestEvaluation>,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: GsrRun,
    pub heldout: EmbeddingDataset,
    /// Training-file rows of the held-out set, in held-out order.
    pub heldout_rows: Vec<usize>,
    /// Held-out positions whose labels were flipped.
    pub flipped: Vec<usize>,
    pub summary: RunSummaryFile,
}

type Loaded = (EmbeddingDataset, EmbeddingDataset, EmbeddingDataset, Option<EmbeddingDataset>);

fn load_data(source: &DataSource) -> Result<Loaded> {
    match source {
        DataSource::Files(f) => {
            let schema = Schema::default();
            let test = f
                .test
                .as_deref()
                .map(|p| load_embeddings(p, &schema))
                .transpose()?;
            Ok((
                load_embeddings(&f.train, &schema)?,
                load_embeddings(&f.target, &schema)?,
                load_embeddings(&f.validation, &schema)?,
                test,
            ))
        }
        DataSource::Synthetic(s) => s.generate(),
    }
}

/// Split, corrupt, reweight, evaluate, and write every artifact to
/// `cfg.out_dir`. Errors name the stage that failed.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    use GsrError as E;
    cfg.validate().map_err(E::at_stage("config"))?;
    create_dir(&cfg.out_dir).map_err(E::at_stage("output"))?;
    let (train, target, validation, test) = load_data(&cfg.data).map_err(E::at_stage("load"))?;

    let idx = holdout_indices(&train, &cfg.split).map_err(E::at_stage("split"))?;
    let heldout_rows = idx.first;
    let mut heldout = train.subset(&heldout_rows);
    let mut flipped = Vec::new();
    if let Some(noise) = &cfg.noise {
        (heldout, flipped) = inject_label_noise(&heldout, noise).map_err(E::at_stage("noise"))?;
    }

    let gsr = cfg.gsr();
    let run = gsr_run(&heldout, &target, &validation, &gsr).map_err(E::at_stage("reweight"))?;

    let test_eval = test
        .as_ref()
        .map(|t| evaluate(t, &run.psi))
        .transpose()
        .map_err(E::at_stage("evaluate"))?;

    let summary = RunSummaryFile {
        method: run.record.summary.method.clone(),
        steps: run.record.summary.steps,
        selected_step: run.record.summary.selected_step,
        best_score: run.record.summary.best_score,
        rejected_steps: run.record.summary.rejected_steps,
        n_heldout: heldout.len(),
        n_flipped: flipped.len(),
        test: test_eval,
        config: cfg.clone(),
    };

    let influence = if cfg.dump_influence {
        Some(selected_influence(&heldout, &target, &run, &gsr).map_err(E::at_stage("influence"))?)
    } else {
        None
    };
    let outcome = RunOutcome {
        run,
        heldout,
        heldout_rows,
        flipped,
        summary,
    };
    write_artifacts(cfg, &outcome, influence.as_ref()).map_err(E::at_stage("write"))?;
    Ok(outcome)
}

fn evaluate(test: &EmbeddingDataset, psi: &ClassifierParams) -> Result<TestEvaluation> {
    let (worst_group_accuracy, worst_group) = worst_group_accuracy(test, psi)?;
    Ok(TestEvaluation {
        worst_group_accuracy,
        worst_group,
        mean_accuracy: mean_accuracy(test, psi)?,
        group_accuracies: group_accuracies(test, psi)?,
    })
}

fn selected_influence(
    heldout: &EmbeddingDataset,
    target: &EmbeddingDataset,
    run: &GsrRun,
    cfg: &GsrConfig,
) -> Result<InfluenceTable> {
    let w = SampleWeights::new(run.record.selected_weights.clone())?;
    match cfg.method {
        InfluenceMethod::Exact => {
            influence_table(heldout, target, &run.psi, &w, &cfg.inner, &cfg.solve)
        }
        InfluenceMethod::HessianFree => hessian_free_table(heldout, target, &run.psi),
    }
}

fn write_artifacts(cfg: &RunConfig, out: &RunOutcome, influence: Option<&InfluenceTable>) -> Result<()> {
    let dir = &cfg.out_dir;
    let record = &out.run.record;
    let groups = out.heldout.groups();
    write_config(&dir.join(CONFIG_FILE), cfg)?;
    write_file(&dir.join(METRICS_FILE), record.to_jsonl())?;
    write_file(&dir.join(WEIGHTS_FILE), format_weights(&record.final_weights, groups))?;
    write_file(
        &dir.join(SELECTED_WEIGHTS_FILE),
        format_weights(&record.selected_weights, groups),
    )?;
    write_file(&dir.join(PSI_FILE), format_psi(&out.run.psi))?;
    write_embeddings(&dir.join(HELDOUT_FILE), &out.heldout)?;

    let mut source = String::from("index,train_row,flipped\n");
    for (i, row) in out.heldout_rows.iter().enumerate() {
        let flipped = out.flipped.binary_search(&i).is_ok();
        let _ = writeln!(source, "{i},{row},{}", u8::from(flipped));
    }
    write_file(&dir.join(HELDOUT_SOURCE_FILE), source)?;

    if let Some(table) = influence {
        write_file(&dir.join(INFLUENCE_FILE), table.to_delimited())?;
    }
    let json = serde_json::to_string_pretty(&out.summary).expect("summary serializes");
    write_file(&dir.join(SUMMARY_FILE), json + "\n")
}

/// `ψ` as delimited text: one row per feature, one column per class.
pub fn format_psi(psi: &ClassifierParams) -> String {
    let m = psi.matrix();
    let mut out = String::from("feature");
    for k in 0..m.ncols() {
        let _ = write!(out, ",class_{k}");
    }
    out.push('\n');
    for j in 0..m.nrows() {
        let _ = write!(out, "{j}");
        for k in 0..m.ncols() {
            let _ = write!(out, ",{:?}", m[(j, k)]);
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`format_psi`].
pub fn parse_psi(text: &str, path: &Path) -> Result<ClassifierParams> {
    let bad = |reason: String| GsrError::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let k = reader.headers().map_err(|e| bad(e.to_string()))?.len().saturating_sub(1);
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for field in rec.iter().skip(1) {
            values.push(field.parse::<f64>().map_err(|e| bad(format!("row {rows}: {e}")))?);
        }
        rows += 1;
    }
    if rows == 0 || k == 0 {
        return Err(bad("no coefficients".into()));
    }
    ClassifierParams::new(DMatrix::from_row_slice(rows, k, &values))
}
