//! The `synth` → `run` → `report` pipeline driven from code, in a
//! temporary directory.
//!
//! cargo run --release --example cli_pipeline

use gsr::cli::{cmd_report, cmd_run, cmd_synth, DataFiles, DataSource, ReportConfig, RunConfig, SynthConfig};
use gsr::influence::InfluenceMethod;

fn main() -> gsr::Result<()> {
    let root = std::env::temp_dir().join(format!("gsr-pipeline-{}", std::process::id()));
    let synth = SynthConfig {
        out_dir: root.join("data"),
        ..SynthConfig::default()
    };
    for (path, rows) in cmd_synth(&synth)?.files {
        println!("wrote {} ({rows} rows)", path.display());
    }

    for method in [InfluenceMethod::Exact, InfluenceMethod::HessianFree] {
        let d = &synth.out_dir;
        let cfg = RunConfig {
            data: DataSource::Files(DataFiles {
                train: d.join("train.csv"),
                target: d.join("target.csv"),
                validation: d.join("validation.csv"),
                test: Some(d.join("test.csv")),
            }),
            method,
            out_dir: root.join(method.label()),
            ..RunConfig::default()
        };
        let out = cmd_run(&cfg)?;
        let test = out.summary.test.as_ref().expect("test file given");
        println!(
            "{}: selected step {}, test worst-group accuracy {:.3}",
            out.summary.method, out.summary.selected_step, test.worst_group_accuracy
        );
        let files = cmd_report(&ReportConfig {
            run_dir: cfg.out_dir.clone(),
            ..ReportConfig::default()
        })?;
        println!("  report tables: {}", files.weight_sums.parent().unwrap().display());
    }
    std::fs::remove_dir_all(&root).map_err(|e| gsr::GsrError::io(&root, e))
}
