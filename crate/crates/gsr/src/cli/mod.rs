//! Drivers behind the `gsr` binary: `synth`, `run`, `gradcheck`, `report`.
//!
//! Each command takes a config struct that can be read from a TOML file
//! (missing keys take their defaults), then overridden field by field.
//! Every command writes its resolved config next to its outputs.

mod gradcheck;
mod report;
mod run;
mod synth;

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{GsrError, Result};

pub use gradcheck::{cmd_gradcheck, GradcheckConfig, GradcheckSummary};
pub use report::{cmd_report, weight_histogram, ReportConfig, ReportFiles, HISTOGRAM_BINS};
pub use run::{
    cmd_run, format_psi, parse_psi, DataFiles, DataSource, RunConfig, RunOutcome, RunSummaryFile,
    TestEvaluation,
};
pub use synth::{cmd_synth, SynthConfig, SynthOutput};

pub const TRAIN_FILE: &str = "train.csv";
pub const TARGET_FILE: &str = "target.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const TEST_FILE: &str = "test.csv";

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const SELECTED_WEIGHTS_FILE: &str = "selected_weights.csv";
pub const PSI_FILE: &str = "psi.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const HELDOUT_FILE: &str = "heldout.csv";
pub const HELDOUT_SOURCE_FILE: &str = "heldout_source.csv";
pub const INFLUENCE_FILE: &str = "influence.csv";

/// Reads a TOML config; `None` gives the defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| GsrError::io(path, e))?;
    toml::from_str(&text).map_err(|e| GsrError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_config<T: Serialize>(path: &Path, cfg: &T) -> Result<()> {
    let text = toml::to_string(cfg).map_err(|e| GsrError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_file(path, text)
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| GsrError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| GsrError::io(path, e))
}
