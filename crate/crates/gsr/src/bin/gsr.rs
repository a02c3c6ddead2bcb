use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsr::cli::{
    cmd_gradcheck, cmd_report, cmd_run, cmd_synth, load_config, DataFiles, DataSource,
    GradcheckConfig, ReportConfig, RunConfig, SynthConfig, TARGET_FILE, TEST_FILE, TRAIN_FILE,
    VALIDATION_FILE,
};
use gsr::data::NoiseSpec;
use gsr::influence::InfluenceMethod;
use gsr::reweight::SelectionMetric;
use gsr::{GsrError, Result};

/// Group-robust sample reweighting for last-layer retraining.
#[derive(Parser)]
#[command(name = "gsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/target/validation/test embedding files.
    Synth(SynthArgs),
    /// Reweight a held-out set and retrain the last layer.
    Run(Box<RunArgs>),
    /// Check the meta-gradient against finite-difference retraining.
    Gradcheck(GradcheckArgs),
    /// Turn a run directory into plot-ready tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_classes: Option<usize>,
    /// Comma-separated group sizes.
    #[arg(long, value_delimiter = ',')]
    n_per_group: Option<Vec<usize>>,
    #[arg(long)]
    d_core: Option<usize>,
    #[arg(long)]
    d_spurious: Option<usize>,
    #[arg(long)]
    d_noise: Option<usize>,
    #[arg(long)]
    core_gap: Option<f64>,
    #[arg(long)]
    spurious_gap: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    eval_per_group: Option<usize>,
    #[arg(long)]
    test_per_group: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding train/target/validation[/test].csv.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Generate the default synthetic data in memory instead of reading files.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// `exact` or `hessian_free`.
    #[arg(long)]
    method: Option<InfluenceMethod>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    outer_lr: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// A positive number, or `none`.
    #[arg(long)]
    clip_norm: Option<String>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    grad_tol: Option<f64>,
    /// `worst_group_risk` or `worst_group_error`.
    #[arg(long)]
    selection_metric: Option<String>,
    #[arg(long)]
    heldout_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    stratify: Option<bool>,
    /// Flip this fraction of held-out labels.
    #[arg(long)]
    flip_fraction: Option<f64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dump_influence: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    l2: Option<f64>,
    /// Finite-difference step.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    method: Option<InfluenceMethod>,
    /// Assemble the checked Hessian with this coefficient instead.
    #[arg(long)]
    inject_l2: Option<f64>,
    #[arg(long)]
    n_heldout: Option<usize>,
    #[arg(long)]
    n_target_per_group: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_classes: Option<usize>,
    #[arg(long)]
    n_groups: Option<usize>,
    /// Two comma-separated scales, alternating over feature columns.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    feature_scales: Option<Vec<f64>>,
}

#[derive(Args)]
struct ReportArgs {
    run_dir: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.out_dir, a.out_dir);
    set(&mut cfg.spec.seed, a.seed);
    set(&mut cfg.spec.n_classes, a.n_classes);
    set(&mut cfg.spec.n_per_group, a.n_per_group);
    set(&mut cfg.spec.d_core, a.d_core);
    set(&mut cfg.spec.d_spurious, a.d_spurious);
    set(&mut cfg.spec.d_noise, a.d_noise);
    set(&mut cfg.spec.core_gap, a.core_gap);
    set(&mut cfg.spec.spurious_gap, a.spurious_gap);
    set(&mut cfg.spec.noise_std, a.noise_std);
    set(&mut cfg.eval_per_group, a.eval_per_group);
    set(&mut cfg.test_per_group, a.test_per_group);
    let out = cmd_synth(&cfg)?;
    for (path, rows) in out.files {
        println!("{}: {rows} rows", path.display());
    }
    Ok(())
}

fn files_in(dir: &Path) -> DataFiles {
    let test = dir.join(TEST_FILE);
    DataFiles {
        train: dir.join(TRAIN_FILE),
        target: dir.join(TARGET_FILE),
        validation: dir.join(VALIDATION_FILE),
        test: test.exists().then_some(test),
    }
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg: RunConfig = load_config(a.config.as_deref())?;
    if a.synthetic {
        cfg.data = DataSource::Synthetic(SynthConfig::default());
    }
    if let Some(dir) = &a.data_dir {
        cfg.data = DataSource::Files(files_in(dir));
    }
    if a.train.is_some() || a.target.is_some() || a.validation.is_some() || a.test.is_some() {
        let DataSource::Files(files) = &mut cfg.data else {
            return Err(GsrError::config("data", "file flags conflict with a synthetic source"));
        };
        set(&mut files.train, a.train);
        set(&mut files.target, a.target);
        set(&mut files.validation, a.validation);
        if a.test.is_some() {
            files.test = a.test;
        }
    }
    set(&mut cfg.out_dir, a.out_dir);
    set(&mut cfg.method, a.method);
    set(&mut cfg.outer.steps, a.steps);
    set(&mut cfg.outer.outer_lr, a.outer_lr);
    set(&mut cfg.outer.temperature, a.temperature);
    if let Some(c) = a.clip_norm {
        cfg.outer.clip_norm = match c.as_str() {
            "none" => None,
            s => Some(s.parse().map_err(|_| {
                GsrError::config("clip_norm", format!("expected a number or `none`, got `{s}`"))
            })?),
        };
    }
    if let Some(m) = a.selection_metric {
        cfg.outer.selection_metric = match m.as_str() {
            "worst_group_risk" => SelectionMetric::WorstGroupRisk,
            "worst_group_error" => SelectionMetric::WorstGroupError,
            s => return Err(GsrError::config("selection_metric", format!("unknown metric `{s}`"))),
        };
    }
    set(&mut cfg.inner.l2_coeff, a.l2);
    set(&mut cfg.inner.grad_tol, a.grad_tol);
    set(&mut cfg.split.heldout_fraction, a.heldout_fraction);
    set(&mut cfg.split.seed, a.split_seed);
    set(&mut cfg.split.stratify_by_group, a.stratify);
    if a.flip_fraction.is_some() || a.noise_seed.is_some() {
        let noise = cfg.noise.get_or_insert_with(NoiseSpec::default);
        set(&mut noise.flip_fraction, a.flip_fraction);
        set(&mut noise.seed, a.noise_seed);
    }
    set(&mut cfg.seed, a.seed);
    cfg.dump_influence |= a.dump_influence;

    let out = cmd_run(&cfg)?;
    let s = &out.summary;
    println!(
        "{}: {} steps, selected step {} (validation score {:.4}), {} rejected",
        s.method, s.steps, s.selected_step, s.best_score, s.rejected_steps
    );
    if let Some(t) = &s.test {
        println!(
            "test: worst-group accuracy {:.4} (group {}), mean accuracy {:.4}",
            t.worst_group_accuracy, t.worst_group, t.mean_accuracy
        );
    }
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let mut cfg: GradcheckConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.out, a.out);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.l2_coeff, a.l2);
    set(&mut cfg.h, a.h);
    set(&mut cfg.tolerance, a.tolerance);
    set(&mut cfg.method, a.method);
    if a.inject_l2.is_some() {
        cfg.inject_l2 = a.inject_l2;
    }
    set(&mut cfg.shape.n_heldout, a.n_heldout);
    set(&mut cfg.shape.n_target_per_group, a.n_target_per_group);
    set(&mut cfg.shape.dim, a.dim);
    set(&mut cfg.shape.n_classes, a.n_classes);
    set(&mut cfg.shape.n_groups, a.n_groups);
    if let Some(s) = a.feature_scales {
        cfg.shape.feature_scales = [s[0], s[1]];
    }
    let r = cmd_gradcheck(&cfg)?;
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    println!(
        "meta-gradient ({}): max relative error {:.3e} <= {:.1e}: {}",
        r.method,
        r.meta_gradient.max_rel_error,
        r.meta_gradient.tolerance,
        verdict(r.meta_gradient.passed)
    );
    for e in r.failures.iter().take(5) {
        println!(
            "  entry {}: analytic {:.6e}, numeric {:.6e}, relative error {:.3e}",
            e.index, e.analytic, e.numeric, e.rel_error
        );
    }
    println!(
        "jacobian: max relative error {:.3e}: {}",
        r.jacobian.max_rel_error,
        verdict(r.jacobian.passed)
    );
    println!(
        "spectral: min eigenvalue {:.6e} vs lambda {}: {}",
        r.spectral.min_eigenvalue,
        r.spectral.lambda,
        verdict(r.spectral.passed)
    );
    println!("report written to {}", cfg.out.display());
    Ok(r.passed)
}

fn report(a: ReportArgs) -> Result<()> {
    let mut cfg = ReportConfig {
        run_dir: a.run_dir,
        out_dir: a.out_dir,
        ..ReportConfig::default()
    };
    set(&mut cfg.top_k, a.top_k);
    let files = cmd_report(&cfg)?;
    println!("tables in {}", files.weight_sums.parent().unwrap_or(Path::new(".")).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a).map(|()| true),
        Command::Run(a) => run(*a).map(|()| true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        // a tolerance failed: a numerical failure
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
