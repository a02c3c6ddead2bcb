mod common;

use common::random_weights;
use gsr::data::{make_synthetic, split_target_val, EmbeddingDataset, SyntheticSpec};
use gsr::influence::InfluenceMethod;
use gsr::linear_model::SampleWeights;
use gsr::reweight::{
    gamma_update, gsr_run, outer_step, projected_step, select_model, GsrConfig, OuterConfig,
    ReweightState, SelectionMetric,
};
use gsr::influence::InfluenceTable;
use gsr::verify::{erm_baseline, random_instance, InstanceShape};
use gsr::GsrError;
use nalgebra::DMatrix;
use proptest::prelude::*;

struct Sets {
    spec: SyntheticSpec,
    heldout: EmbeddingDataset,
    target: EmbeddingDataset,
    validation: EmbeddingDataset,
}

fn small_sets(seed: u64) -> Sets {
    let spec = SyntheticSpec::default().resized(vec![90, 10, 10, 90], seed);
    let heldout = make_synthetic(&spec).unwrap();
    let pool = make_synthetic(&spec.balanced(40, 1000 + seed)).unwrap();
    let (target, validation) = split_target_val(&pool, seed).unwrap();
    Sets { spec, heldout, target, validation }
}

fn with_outer(steps: usize, outer_lr: f64) -> GsrConfig {
    GsrConfig {
        outer: OuterConfig { steps, outer_lr, ..OuterConfig::default() },
        ..GsrConfig::default()
    }
}

#[test]
fn projected_step_examples() {
    let w = SampleWeights::new(vec![0.5, 0.5]).unwrap();
    let s = projected_step(&w, &[1.0, -1.0], 1.0, None).unwrap();
    assert_eq!(s.w.as_slice(), &[0.0, 1.0]);
    assert!(!s.rejected && !s.clipped);

    let s = projected_step(&w, &[0.0, 0.0], 1.0, Some(1.0)).unwrap();
    assert_eq!(s.w, w);
    assert_eq!(s.xi_norm, 0.0);

    // ‖ξ‖ = 10 is clipped to 1: the step uses ξ/10
    let w3 = SampleWeights::new(vec![0.4, 0.4, 0.2]).unwrap();
    let xi = [6.0, 8.0, 0.0];
    let clipped = projected_step(&w3, &xi, 0.1, Some(1.0)).unwrap();
    let manual = projected_step(&w3, &[0.6, 0.8, 0.0], 0.1, None).unwrap();
    assert!(clipped.clipped);
    assert_eq!(clipped.xi_norm, 10.0);
    for (a, b) in clipped.w.as_slice().iter().zip(manual.w.as_slice()) {
        assert!((a - b).abs() < 1e-15);
    }

    let s = projected_step(&w, &[1.0, 1.0], 10.0, None).unwrap();
    assert!(s.rejected);
    assert_eq!(s.w, w);

    assert!(matches!(projected_step(&w, &[f64::NAN, 0.0], 1.0, None), Err(GsrError::NonFinite(_))));
    assert!(matches!(projected_step(&w, &[1.0], 1.0, None), Err(GsrError::DimensionMismatch(_))));
}

#[test]
fn gamma_update_examples() {
    let g = gamma_update(&[0.5, 0.5], &[2f64.ln(), 0.0], 1.0).unwrap();
    assert!((g[0] - 2.0 / 3.0).abs() < 1e-15 && (g[1] - 1.0 / 3.0).abs() < 1e-15);
    let g = gamma_update(&[0.5, 0.5], &[0.3, 0.3 - 3f64.ln() * 0.1], 0.1).unwrap();
    assert!((g[0] - 0.75).abs() < 1e-14 && (g[1] - 0.25).abs() < 1e-14);

    let g = gamma_update(&[0.2, 0.3, 0.5], &[1.0, 1.0, 1.0], 0.1).unwrap();
    assert!(g.iter().zip([0.2, 0.3, 0.5]).all(|(a, b)| (a - b).abs() < 1e-15));

    let g = gamma_update(&[0.25, 0.75], &[5.0, 0.0], 1e9).unwrap();
    assert!((g[0] - 0.25).abs() < 1e-8);

    // huge risks do not overflow
    let g = gamma_update(&[0.5, 0.5], &[1e4, 1e4 - 1.0], 0.01).unwrap();
    assert!(g[0] == 1.0 && g[1] >= 0.0);

    assert!(gamma_update(&[0.5, 0.5], &[f64::INFINITY, 0.0], 0.1).is_err());
    assert!(gamma_update(&[0.5, 0.5], &[1.0, 0.0], 0.0).is_err());
}

#[test]
fn learning_rate_schedule() {
    let cfg = OuterConfig { outer_lr: 2.0, ..OuterConfig::default() };
    assert_eq!(cfg.lr_at(1), 2.0);
    assert_eq!(cfg.lr_at(30), 2.0);
    assert_eq!(cfg.lr_at(31), 0.2);
    assert!((cfg.lr_at(61) - 0.02).abs() < 1e-17);
    assert!((cfg.lr_at(100) - 0.002).abs() < 1e-18);
}

#[test]
fn invalid_outer_configs() {
    for (cfg, field) in [
        (OuterConfig { steps: 0, ..OuterConfig::default() }, "steps"),
        (OuterConfig { outer_lr: -1.0, ..OuterConfig::default() }, "outer_lr"),
        (OuterConfig { temperature: 0.0, ..OuterConfig::default() }, "temperature"),
        (OuterConfig { clip_norm: Some(0.0), ..OuterConfig::default() }, "clip_norm"),
        (OuterConfig { lr_decay_every: 0, ..OuterConfig::default() }, "lr_decay_every"),
    ] {
        match cfg.validate() {
            Err(GsrError::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
            other => panic!("{field}: {other:?}"),
        }
    }
}

#[test]
fn clip_norm_round_trips_through_toml() {
    for clip in [None, Some(2.5)] {
        let cfg = OuterConfig { clip_norm: clip, ..OuterConfig::default() };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<OuterConfig>(&text).unwrap(), cfg);
    }
    let cfg: OuterConfig = toml::from_str("clip_norm = \"none\"").unwrap();
    assert_eq!(cfg.clip_norm, None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn steps_stay_on_the_simplex(
        seed in 0u64..10_000,
        n in 1usize..30,
        lr in 0.0f64..10.0,
        clip in proptest::option::of(0.01f64..10.0),
        scale in 0.0f64..100.0,
    ) {
        use rand::Rng;
        let w = random_weights(seed, n);
        let mut rng = gsr::data::rng_from_seed(seed + 1);
        let xi: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let s = projected_step(&w, &xi, lr, clip).unwrap();
        prop_assert!(s.w.as_slice().iter().all(|&v| v >= 0.0));
        prop_assert!((s.w.l1() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn gamma_stays_on_the_simplex(
        risks in proptest::collection::vec(0.0f64..50.0, 1..6),
        tau in 1e-3f64..10.0,
    ) {
        let m = risks.len();
        let g = gamma_update(&vec![1.0 / m as f64; m], &risks, tau).unwrap();
        prop_assert!(g.iter().all(|&v| v >= 0.0));
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn outer_step_uses_decayed_rate() {
    let table = InfluenceTable {
        scores: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
        method: InfluenceMethod::Exact,
    };
    let cfg = OuterConfig { outer_lr: 0.1, clip_norm: None, ..OuterConfig::default() };
    let mut state = ReweightState::initial(2, 2, 1, 2);
    state.gamma = vec![1.0, 0.0];
    state.step = 30;
    let (next, step) = outer_step(&state, &table, &cfg).unwrap();
    // t = 31, lr = 0.01: [0.49, 0.51]
    assert!((next.w.as_slice()[0] - 0.49).abs() < 1e-15);
    assert!(!step.rejected);
}

#[test]
fn selection_keeps_ties_for_the_later_step() {
    let sets = small_sets(0);
    let cfg = OuterConfig::default();
    let mut state = ReweightState::initial(sets.heldout.len(), 4, sets.heldout.dim(), 2);
    state.step = 1;
    let (s1, _, replaced) = select_model(&state, &sets.validation, &cfg).unwrap();
    assert!(replaced && s1.best_step == 1);
    let mut s2 = s1.clone();
    s2.step = 2;
    let (s2, _, replaced) = select_model(&s2, &sets.validation, &cfg).unwrap();
    assert!(replaced && s2.best_step == 2);

    let mut worse = s2.clone();
    worse.step = 3;
    worse.best_score = -1.0;
    let (s3, _, replaced) = select_model(&worse, &sets.validation, &cfg).unwrap();
    assert!(!replaced && s3.best_step == 2);
}

#[test]
fn run_record_bookkeeping() {
    let sets = small_sets(1);
    let run = gsr_run(&sets.heldout, &sets.target, &sets.validation, &with_outer(12, 1.0)).unwrap();
    let rec = &run.record;
    assert_eq!(rec.steps.len(), 12);
    assert_eq!(rec.summary.method, "GSR");
    let mut best = f64::INFINITY;
    let mut best_step = 0;
    for (i, r) in rec.steps.iter().enumerate() {
        assert_eq!(r.step, i + 1);
        assert!((r.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((r.group_weight_sums.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r.selected, r.val_wg_risk <= best);
        if r.val_wg_risk <= best {
            best = r.val_wg_risk;
            best_step = r.step;
        }
    }
    assert_eq!(rec.summary.selected_step, best_step);
    assert_eq!(rec.summary.best_score, best);
    assert_eq!(run.w.as_slice(), rec.final_weights.as_slice());
    assert!((rec.selected_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let reparsed = gsr::reweight::parse_metrics(&rec.to_jsonl(), std::path::Path::new("m")).unwrap();
    assert_eq!(reparsed.steps, rec.steps);
}

#[test]
fn error_selection_metric_uses_accuracy() {
    let sets = small_sets(2);
    let mut cfg = with_outer(5, 1.0);
    cfg.outer.selection_metric = SelectionMetric::WorstGroupError;
    let run = gsr_run(&sets.heldout, &sets.target, &sets.validation, &cfg).unwrap();
    let best = run.record.steps.iter().map(|r| 1.0 - r.val_wg_acc).fold(f64::INFINITY, f64::min);
    assert_eq!(run.record.summary.best_score, best);
}

#[test]
fn zero_learning_rate_is_erm() {
    let sets = small_sets(3);
    let cfg = with_outer(4, 0.0);
    let run = gsr_run(&sets.heldout, &sets.target, &sets.validation, &cfg).unwrap();
    let uniform = 1.0 / sets.heldout.len() as f64;
    assert!(run.record.final_weights.iter().all(|&w| (w - uniform).abs() < 1e-12 * uniform));
    let erm = erm_baseline(&sets.heldout, &cfg.inner).unwrap();
    assert!((run.psi.matrix() - erm.matrix()).amax() < 1e-6);
}

#[test]
fn runs_are_bitwise_deterministic() {
    let sets = small_sets(4);
    let cfg = with_outer(6, 1.0);
    let a = gsr_run(&sets.heldout, &sets.target, &sets.validation, &cfg).unwrap();
    let b = gsr_run(&sets.heldout, &sets.target, &sets.validation, &cfg).unwrap();
    assert_eq!(a.record.to_jsonl(), b.record.to_jsonl());
    assert_eq!(a.psi, b.psi);
}

#[test]
fn minority_mass_grows_early_at_small_rates() {
    for seed in 0..3 {
        let sets = small_sets(seed);
        let run = gsr_run(&sets.heldout, &sets.target, &sets.validation, &with_outer(10, 0.005)).unwrap();
        let minority = sets.spec.minority_groups();
        let mass: Vec<f64> = run
            .record
            .steps
            .iter()
            .map(|r| minority.iter().map(|&g| r.group_weight_sums[g]).sum())
            .collect();
        assert!(mass.windows(2).all(|p| p[1] > p[0]), "seed {seed}: {mass:?}");
    }
}

#[test]
fn hessian_free_diverges_on_anisotropic_features() {
    let shape = InstanceShape {
        n_heldout: 16,
        n_target_per_group: 6,
        dim: 4,
        n_classes: 2,
        n_groups: 2,
        feature_scales: [0.1, 10.0],
    };
    let (heldout, target) = random_instance(&shape, 3).unwrap();
    let (_, validation) = random_instance(&shape, 4).unwrap();
    let mut cfg = with_outer(5, 0.05);
    let exact = gsr_run(&heldout, &target, &validation, &cfg).unwrap();
    cfg.method = InfluenceMethod::HessianFree;
    let hf = gsr_run(&heldout, &target, &validation, &cfg).unwrap();
    assert_eq!(hf.record.summary.method, "GSR-HF");
    let diff = exact
        .record
        .final_weights
        .iter()
        .zip(&hf.record.final_weights)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-3, "max weight difference {diff:e}");
}

#[test]
fn incompatible_sets_are_rejected() {
    let sets = small_sets(0);
    let other = make_synthetic(&SyntheticSpec { d_noise: 1, ..SyntheticSpec::default().balanced(5, 0) }).unwrap();
    let err = gsr_run(&sets.heldout, &other, &sets.validation, &GsrConfig::default()).unwrap_err();
    assert!(matches!(err, GsrError::DimensionMismatch(_)));
}
