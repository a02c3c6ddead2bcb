mod common;

use common::{random_dataset, random_psi, random_weights};
use gsr::data::{make_synthetic, EmbeddingDataset, SyntheticSpec};
use gsr::linear_model::{
    fit_last_layer, group_accuracies, group_risks, hessian, logits, per_sample_gradients,
    per_sample_losses, predict, softmax, softmax_jacobian, weighted_gradient, weighted_objective,
    worst_group_risk, ClassifierParams, InnerSolveConfig, SampleWeights,
};
use gsr::verify::spectral_check;
use gsr::GsrError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn cfg(l2: f64) -> InnerSolveConfig {
    InnerSolveConfig::default().with_l2(l2)
}

fn shifted(psi: &ClassifierParams, idx: usize, delta: f64) -> ClassifierParams {
    let mut v = psi.to_vec();
    v[idx] += delta;
    ClassifierParams::from_vec(psi.dim(), psi.n_classes(), &v).unwrap()
}

#[test]
fn softmax_values() {
    assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    let p = softmax(&[2f64.ln(), 0.0]).unwrap();
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    let p = softmax(&[1000.0, 0.0]).unwrap();
    assert_eq!(p[0], 1.0);
    assert!(p[1] < 1e-300);
    assert!(softmax(&[f64::NAN, 0.0]).is_err());
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_jacobian_is_psd(z in proptest::collection::vec(-50.0f64..50.0, 1..8)) {
        let p = softmax(&z).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let min = softmax_jacobian(&p).symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-12, "min eigenvalue {}", min);
    }

    #[test]
    fn predictions_ignore_logit_shift(seed in 0u64..1000, c in -5.0f64..5.0) {
        let ds = random_dataset(seed, 12, 3, 4, 2);
        let psi = random_psi(seed + 1, 3, 4, 1.0);
        // a constant-1 feature lets `c` shift every logit of a sample by the same amount
        let ds1 = ds.with_bias_column();
        let mut m = psi.matrix().clone().insert_row(3, 0.0);
        m.row_mut(3).fill(c);
        let psi1 = ClassifierParams::new(m).unwrap();
        prop_assert_eq!(predict(&ds, &psi).unwrap(), predict(&ds1, &psi1).unwrap());
    }
}

#[test]
fn objective_special_cases() {
    let ds = random_dataset(0, 10, 3, 3, 2);
    let zero = ClassifierParams::zeros(3, 3);
    let w = random_weights(1, 10);
    let v = weighted_objective(&ds, &w, &zero, &cfg(0.7)).unwrap();
    assert!((v - 3f64.ln()).abs() < 1e-15);

    let psi = random_psi(2, 3, 3, 1.0);
    let v = weighted_objective(&ds, &SampleWeights::zeros(10), &psi, &cfg(0.3)).unwrap();
    assert!((v - 0.15 * psi.frobenius_sq()).abs() < 1e-15);

    // one sample with p_y = 1/2
    let one = EmbeddingDataset::new(DMatrix::from_row_slice(1, 2, &[1.0, -2.0]), vec![1], None, Some(2), None).unwrap();
    let psi = ClassifierParams::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 0.25])).unwrap();
    let v = weighted_objective(&one, &SampleWeights::unit(1, 0), &psi, &cfg(0.2)).unwrap();
    assert!((v - (2f64.ln() + 0.1 * psi.frobenius_sq())).abs() < 1e-14);
}

#[test]
fn per_sample_gradient_layout() {
    let ds = EmbeddingDataset::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), vec![0], None, Some(2), None).unwrap();
    let g = per_sample_gradients(&ds, &ClassifierParams::zeros(2, 2)).unwrap();
    assert_eq!(g.row(0).iter().copied().collect::<Vec<_>>(), vec![-0.5, 0.0, 0.5, 0.0]);
}

#[test]
fn gradient_symmetry_and_linearity() {
    let x = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.3, -1.2]);
    let ds = EmbeddingDataset::new(x, vec![0, 1], None, Some(2), None).unwrap();
    let g = weighted_gradient(&ds, &SampleWeights::uniform(2), &ClassifierParams::zeros(2, 2), &cfg(0.1)).unwrap();
    assert!(g.amax() < 1e-16);

    let ds = random_dataset(3, 8, 3, 3, 2);
    let psi = random_psi(4, 3, 3, 0.5);
    let rows = per_sample_gradients(&ds, &psi).unwrap();
    let g = weighted_gradient(&ds, &SampleWeights::unit(8, 5), &psi, &cfg(0.4)).unwrap();
    let expect = rows.row(5).transpose() + psi.to_vec() * 0.4;
    assert!((g - expect).amax() < 1e-14);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (n, d, k) = (5 + seed as usize % 16, 1 + seed as usize % 5, 2 + seed as usize % 3);
        let ds = random_dataset(seed, n, d, k, 2);
        let w = random_weights(seed + 100, n);
        let psi = random_psi(seed + 200, d, k, 0.7);
        let c = cfg(0.1);
        let g = weighted_gradient(&ds, &w, &psi, &c).unwrap();
        let h = 1e-5;
        let fd = DVector::from_fn(d * k, |i, _| {
            let fp = weighted_objective(&ds, &w, &shifted(&psi, i, h), &c).unwrap();
            let fm = weighted_objective(&ds, &w, &shifted(&psi, i, -h), &c).unwrap();
            (fp - fm) / (2.0 * h)
        });
        worst = worst.max((g - &fd).amax() / fd.amax());
    }
    assert!(worst < 1e-5, "relative error {worst:e}");
}

#[test]
fn per_sample_rows_match_finite_differences() {
    let ds = random_dataset(8, 6, 3, 3, 2);
    let psi = random_psi(9, 3, 3, 0.8);
    let rows = per_sample_gradients(&ds, &psi).unwrap();
    let h = 1e-6;
    for i in 0..6 {
        for p in 0..9 {
            let lp = per_sample_losses(&ds, &shifted(&psi, p, h)).unwrap()[i];
            let lm = per_sample_losses(&ds, &shifted(&psi, p, -h)).unwrap()[i];
            assert!(((lp - lm) / (2.0 * h) - rows[(i, p)]).abs() < 1e-6);
        }
    }
}

#[test]
fn hessian_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (n, d, k) = (5 + seed as usize % 16, 1 + seed as usize % 5, 2 + seed as usize % 3);
        let ds = random_dataset(seed, n, d, k, 2);
        let w = random_weights(seed + 100, n);
        let psi = random_psi(seed + 200, d, k, 0.7);
        let c = cfg(0.1);
        let hm = hessian(&ds, &w, &psi, &c).unwrap();
        assert!((&hm - hm.transpose()).amax() == 0.0);
        let step = 1e-5;
        let mut fd = DMatrix::zeros(d * k, d * k);
        for j in 0..d * k {
            let gp = weighted_gradient(&ds, &w, &shifted(&psi, j, step), &c).unwrap();
            let gm = weighted_gradient(&ds, &w, &shifted(&psi, j, -step), &c).unwrap();
            fd.set_column(j, &((gp - gm) / (2.0 * step)));
        }
        worst = worst.max((hm - &fd).amax() / fd.amax());
    }
    assert!(worst < 1e-4, "relative error {worst:e}");
}

#[test]
fn hessian_special_cases() {
    let x = DVector::from_vec(vec![1.0, -2.0]);
    let ds = EmbeddingDataset::new(DMatrix::from_row_slice(1, 2, x.as_slice()), vec![0], None, Some(2), None).unwrap();
    let h = hessian(&ds, &SampleWeights::unit(1, 0), &ClassifierParams::zeros(2, 2), &cfg(0.3)).unwrap();
    let xxt = &x * x.transpose() * 0.25;
    let mut expect = DMatrix::zeros(4, 4);
    expect.view_mut((0, 0), (2, 2)).copy_from(&xxt);
    expect.view_mut((2, 2), (2, 2)).copy_from(&xxt);
    expect.view_mut((0, 2), (2, 2)).copy_from(&(-&xxt));
    expect.view_mut((2, 0), (2, 2)).copy_from(&(-&xxt));
    expect += DMatrix::identity(4, 4) * 0.3;
    assert!((h - expect).amax() < 1e-15);

    let ds = random_dataset(1, 5, 3, 2, 1);
    let h = hessian(&ds, &SampleWeights::zeros(5), &random_psi(2, 3, 2, 1.0), &cfg(0.5)).unwrap();
    assert_eq!(h, DMatrix::identity(6, 6) * 0.5);

    let zero_l2 = InnerSolveConfig { l2_coeff: 0.0, ..cfg(0.1) };
    assert!(hessian(&ds, &SampleWeights::zeros(5), &ClassifierParams::zeros(3, 2), &zero_l2).is_err());
}

#[test]
fn strong_convexity_on_random_hessians() {
    for seed in 0..30 {
        let lambda = [1e-3, 1e-1, 1.0][seed as usize % 3];
        let ds = random_dataset(seed, 15, 4, 3, 2);
        let h = hessian(&ds, &random_weights(seed, 15), &random_psi(seed, 4, 3, 2.0), &cfg(lambda)).unwrap();
        let r = spectral_check(&h, lambda).unwrap();
        assert!(r.passed, "seed {seed}: {} < {lambda}", r.min_eigenvalue);
    }
}

#[test]
fn fit_symmetric_pair_is_zero() {
    let x = DMatrix::from_row_slice(2, 3, &[0.5, 1.0, -2.0, 0.5, 1.0, -2.0]);
    let ds = EmbeddingDataset::new(x, vec![0, 1], None, Some(2), None).unwrap();
    let psi = fit_last_layer(&ds, &SampleWeights::uniform(2), &cfg(0.05), &random_psi(1, 3, 2, 1.0)).unwrap();
    assert!(psi.matrix().amax() < 1e-7);
}

#[test]
fn fit_large_l2_shrinks_to_zero() {
    let ds = random_dataset(2, 20, 4, 3, 2);
    let w = SampleWeights::uniform(20);
    let c = cfg(1e6);
    let psi = fit_last_layer(&ds, &w, &c, &ClassifierParams::zeros(4, 3)).unwrap();
    let rows = per_sample_gradients(&ds, &ClassifierParams::zeros(4, 3)).unwrap();
    let max_row = (0..20).map(|i| rows.row(i).norm()).fold(0.0, f64::max);
    assert!(psi.frobenius_sq().sqrt() <= max_row / 1e6);
}

#[test]
fn fit_is_stationary_and_locally_optimal() {
    use rand::Rng;
    let ds = random_dataset(5, 18, 3, 3, 2);
    let w = random_weights(6, 18);
    let c = cfg(0.1);
    let psi = fit_last_layer(&ds, &w, &c, &ClassifierParams::zeros(3, 3)).unwrap();
    assert!(weighted_gradient(&ds, &w, &psi, &c).unwrap().amax() <= c.grad_tol);
    let f0 = weighted_objective(&ds, &w, &psi, &c).unwrap();
    let mut rng = gsr::data::rng_from_seed(7);
    for _ in 0..1000 {
        let delta = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0));
        let delta = delta.normalize() * 1e-2;
        let cand = ClassifierParams::from_vec(3, 3, &(psi.to_vec() + delta)).unwrap();
        assert!(weighted_objective(&ds, &w, &cand, &c).unwrap() >= f0);
    }
}

#[test]
fn fit_reports_non_convergence() {
    let ds = random_dataset(5, 18, 3, 3, 2);
    let c = InnerSolveConfig { max_iters: 2, ..cfg(0.01) };
    let err = fit_last_layer(&ds, &SampleWeights::uniform(18), &c, &ClassifierParams::zeros(3, 3)).unwrap_err();
    assert!(matches!(err, GsrError::NotConverged { iters: 2, .. }));
}

#[test]
fn group_risk_cases() {
    let ds = random_dataset(9, 12, 2, 3, 3);
    let risks = group_risks(&ds, &ClassifierParams::zeros(2, 3)).unwrap();
    assert!(risks.iter().all(|r| (r - 3f64.ln()).abs() < 1e-15));

    let psi = random_psi(1, 2, 3, 1.0);
    let risks = group_risks(&ds, &psi).unwrap();
    let (r, g) = worst_group_risk(&ds, &psi).unwrap();
    let max = risks.iter().copied().fold(f64::MIN, f64::max);
    assert_eq!(r, max);
    assert_eq!(risks.iter().position(|&v| v == max), Some(g));
    assert_eq!(worst_group_risk(&ds, &ClassifierParams::zeros(2, 3)).unwrap().1, 0);

    // relabel groups g -> (g + 1) % 3
    let perm: Vec<usize> = ds.groups().unwrap().iter().map(|g| (g + 1) % 3).collect();
    let ds2 = EmbeddingDataset::new(ds.features().clone(), ds.labels().to_vec(), Some(perm), Some(3), Some(3)).unwrap();
    let r2 = group_risks(&ds2, &psi).unwrap();
    for g in 0..3 {
        assert_eq!(r2[(g + 1) % 3], risks[g]);
    }
}

#[test]
fn separated_group_has_tiny_risk_and_full_accuracy() {
    let x = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, -1.0, -3.0]);
    let ds = EmbeddingDataset::new(x, vec![1, 1, 0, 0], Some(vec![0, 0, 1, 1]), Some(2), Some(2)).unwrap();
    let psi = ClassifierParams::new(DMatrix::from_row_slice(1, 2, &[-10.0, 10.0])).unwrap();
    assert!(group_risks(&ds, &psi).unwrap().iter().all(|&r| r <= 1e-3));
    assert_eq!(group_accuracies(&ds, &psi).unwrap(), vec![1.0, 1.0]);
}

#[test]
fn tied_logits_predict_class_zero() {
    let ds = random_dataset(4, 20, 3, 3, 2);
    let zero = ClassifierParams::zeros(3, 3);
    assert!(predict(&ds, &zero).unwrap().iter().all(|&c| c == 0));
    assert!(logits(&ds, &zero).unwrap().amax() == 0.0);
    let acc = group_accuracies(&ds, &zero).unwrap();
    for (g, a) in acc.iter().enumerate() {
        let members: Vec<usize> = (0..20).filter(|&i| ds.groups().unwrap()[i] == g).collect();
        let zeros = members.iter().filter(|&&i| ds.labels()[i] == 0).count();
        assert_eq!(*a, zeros as f64 / members.len() as f64);
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let ds = make_synthetic(&SyntheticSpec::default().balanced(3, 0)).unwrap();
    let wrong = ClassifierParams::zeros(ds.dim() + 1, 2);
    assert!(matches!(group_risks(&ds, &wrong), Err(GsrError::DimensionMismatch(_))));
    let c = cfg(0.1);
    assert!(weighted_objective(&ds, &SampleWeights::uniform(3), &ClassifierParams::zeros(ds.dim(), 2), &c).is_err());
}
