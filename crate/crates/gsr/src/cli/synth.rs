use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{create_dir, write_config, CONFIG_FILE, TARGET_FILE, TEST_FILE, TRAIN_FILE, VALIDATION_FILE};
use crate::data::{make_synthetic, split_target_val, write_embeddings, EmbeddingDataset, SyntheticSpec};
use crate::error::{GsrError, Result};

/// What `synth` generates.
///
/// The training file follows `spec`. Target and validation are the two
/// halves of a group-balanced pool of `eval_per_group` samples per group,
/// drawn with seed `spec.seed + 1`; the test file has `test_per_group`
/// per group, seed `spec.seed + 2`. Set `test_per_group = 0` to skip it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub spec: SyntheticSpec,
    pub eval_per_group: usize,
    pub test_per_group: usize,
    pub split_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            spec: SyntheticSpec::default(),
            eval_per_group: 100,
            test_per_group: 1000,
            split_seed: 0,
            out_dir: PathBuf::from("data"),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.eval_per_group < 2 {
            return Err(GsrError::config(
                "eval_per_group",
                "need at least 2 samples per group to fill target and validation",
            ));
        }
        Ok(())
    }

    /// Generates the datasets in memory: `(train, target, validation, test)`.
    pub fn generate(
        &self,
    ) -> Result<(EmbeddingDataset, EmbeddingDataset, EmbeddingDataset, Option<EmbeddingDataset>)> {
        self.validate()?;
        let seed = self.spec.seed;
        let train = make_synthetic(&self.spec)?;
        let pool = make_synthetic(&self.spec.balanced(self.eval_per_group, seed.wrapping_add(1)))?;
        let (target, validation) = split_target_val(&pool, self.split_seed)?;
        let test = if self.test_per_group > 0 {
            Some(make_synthetic(
                &self.spec.balanced(self.test_per_group, seed.wrapping_add(2)),
            )?)
        } else {
            None
        };
        Ok((train, target, validation, test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// `(path, rows)` for every data file written.
    pub files: Vec<(PathBuf, usize)>,
}

pub fn cmd_synth(cfg: &SynthConfig) -> Result<SynthOutput> {
    let (train, target, validation, test) = cfg.generate()?;
    create_dir(&cfg.out_dir)?;
    let mut files = Vec::new();
    let mut sets = vec![(TRAIN_FILE, &train), (TARGET_FILE, &target), (VALIDATION_FILE, &validation)];
    if let Some(test) = &test {
        sets.push((TEST_FILE, test));
    }
    for (name, ds) in sets {
        let path = cfg.out_dir.join(name);
        write_embeddings(&path, ds)?;
        files.push((path, ds.len()));
    }
    write_config(&cfg.out_dir.join(CONFIG_FILE), cfg)?;
    Ok(SynthOutput { files })
}
