//! The outer loop: adaptive group aggregation, projected gradient descent
//! on the held-out sample weights, and worst-group model selection.
//!
//! Each step `t` refits the classifier on the current weights, raises the
//! aggregation weight of groups with high target risk
//! (`γ_g ← γ_g·exp(R_g/τ)`, renormalized), aggregates the per-group
//! influence columns with γ, takes a clipped, projected and renormalized
//! step on `w`, and keeps the classifier with the best validation score.

mod record;

use serde::{Deserialize, Serialize};

pub use record::{
    format_weights, median, parse_metrics, parse_weights, quantiles, read_metrics, MetricsLog,
    RunRecord, RunSummary, StepRecord,
};

use crate::data::EmbeddingDataset;
use crate::error::{GsrError, Result};
use crate::influence::{
    aggregate_influence, hessian_free_table, influence_table, HessianSolveConfig, InfluenceMethod,
    InfluenceTable,
};
use crate::linear_model::{
    fit_last_layer_detailed, group_accuracies, group_risks, ClassifierParams, InnerSolveConfig,
    SampleWeights,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    WorstGroupRisk,
    WorstGroupError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuterConfig {
    pub steps: usize,
    pub outer_lr: f64,
    pub temperature: f64,
    /// L2 cap on the aggregated meta-gradient; `None` disables clipping.
    /// Serialized as a number or the string `"none"`.
    #[serde(with = "clip_serde")]
    pub clip_norm: Option<f64>,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub selection_metric: SelectionMetric,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            outer_lr: 1.0,
            temperature: 0.1,
            clip_norm: Some(1.0),
            lr_decay_factor: 10.0,
            lr_decay_every: 30,
            selection_metric: SelectionMetric::WorstGroupRisk,
        }
    }
}

mod clip_serde {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(c) => s.serialize_f64(*c),
            None => s.serialize_str("none"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(c) => Ok(Some(c)),
            Repr::Text(t) if t == "none" => Ok(None),
            Repr::Text(t) => Err(D::Error::custom(format!(
                "clip_norm: expected a number or \"none\", got {t:?}"
            ))),
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(GsrError::config("steps", "must be at least 1"));
        }
        if !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return Err(GsrError::config("outer_lr", "must be finite and non-negative"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GsrError::config("temperature", "must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(GsrError::config("clip_norm", "must be positive when set"));
            }
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return Err(GsrError::config("lr_decay_factor", "must be positive"));
        }
        if self.lr_decay_every == 0 {
            return Err(GsrError::config("lr_decay_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Step-decayed learning rate for 1-based step `t`:
    /// `β · factor^(−⌊(t−1)/every⌋)`.
    pub fn lr_at(&self, t: usize) -> f64 {
        let drops = (t.saturating_sub(1) / self.lr_decay_every) as i32;
        self.outer_lr * self.lr_decay_factor.powi(-drops)
    }
}

/// Everything a run needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GsrConfig {
    pub inner: InnerSolveConfig,
    pub outer: OuterConfig,
    pub solve: HessianSolveConfig,
    pub method: InfluenceMethod,
    /// Echoed into the record. The loop itself draws no random numbers.
    pub seed: u64,
}

impl Default for GsrConfig {
    fn default() -> Self {
        Self {
            inner: InnerSolveConfig::default(),
            outer: OuterConfig::default(),
            solve: HessianSolveConfig::default(),
            method: InfluenceMethod::Exact,
            seed: 0,
        }
    }
}

impl GsrConfig {
    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        self.outer.validate()?;
        self.solve.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReweightState {
    pub w: SampleWeights,
    pub gamma: Vec<f64>,
    pub psi: ClassifierParams,
    /// Last completed step (0 before the loop).
    pub step: usize,
    pub best_psi: Option<ClassifierParams>,
    pub best_score: f64,
    pub best_step: usize,
    /// Weights `best_psi` was fitted with.
    pub best_w: Option<SampleWeights>,
}

impl ReweightState {
    /// Uniform `w` over `n` samples, uniform `γ` over `m` groups, `ψ = 0`.
    pub fn initial(n: usize, m: usize, dim: usize, n_classes: usize) -> Self {
        Self {
            w: SampleWeights::uniform(n),
            gamma: vec![1.0 / m as f64; m],
            psi: ClassifierParams::zeros(dim, n_classes),
            step: 0,
            best_psi: None,
            best_score: f64::INFINITY,
            best_step: 0,
            best_w: None,
        }
    }
}

/// Multiplicative-weights update `γ'_g ∝ γ_g·exp(R_g/τ)`.
///
/// The largest risk is subtracted inside the exponential; the common factor
/// cancels in the normalization.
pub fn gamma_update(gamma: &[f64], risks: &[f64], tau: f64) -> Result<Vec<f64>> {
    if gamma.len() != risks.len() {
        return Err(GsrError::DimensionMismatch(format!(
            "{} aggregation weights, {} group risks",
            gamma.len(),
            risks.len()
        )));
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(GsrError::NonFinite("target group risks".into()));
    }
    if !(tau > 0.0) {
        return Err(GsrError::config("temperature", "must be positive"));
    }
    let max = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = gamma
        .iter()
        .zip(risks)
        .map(|(g, r)| g * ((r - max) / tau).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    if !(sum > 0.0) {
        return Err(GsrError::NonFinite("aggregation weights underflowed".into()));
    }
    out.iter_mut().for_each(|g| *g /= sum);
    Ok(out)
}

/// What happened to `w` in one projected step.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedStep {
    pub w: SampleWeights,
    pub xi_norm: f64,
    pub clipped: bool,
    pub rejected: bool,
}

/// `w' = max(w − lr·ξ, 0) / ‖·‖₁`, with `ξ` first rescaled to L2 norm
/// `clip_norm` if longer. An all-zero projection leaves `w` unchanged and
/// is flagged as rejected.
pub fn projected_step(
    w: &SampleWeights,
    xi: &[f64],
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<ProjectedStep> {
    if xi.len() != w.len() {
        return Err(GsrError::DimensionMismatch(format!(
            "meta-gradient of length {} for {} weights",
            xi.len(),
            w.len()
        )));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(GsrError::NonFinite("meta-gradient".into()));
    }
    let xi_norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = match clip_norm {
        Some(c) if xi_norm > c => c / xi_norm,
        _ => 1.0,
    };
    let stepped: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(xi)
        .map(|(wi, x)| (wi - lr * scale * x).max(0.0))
        .collect();
    let stepped = SampleWeights::new(stepped)?;
    let (w, rejected) = match stepped.normalized() {
        Some(next) => (next, false),
        None => (w.clone(), true),
    };
    Ok(ProjectedStep {
        w,
        xi_norm,
        clipped: scale < 1.0,
        rejected,
    })
}

/// Aggregates `table` with the state's γ and applies the step-`t` update
/// (`t = state.step + 1`, learning rate from the decay schedule).
pub fn outer_step(
    state: &ReweightState,
    table: &InfluenceTable,
    cfg: &OuterConfig,
) -> Result<(ReweightState, ProjectedStep)> {
    let xi = aggregate_influence(table, &state.gamma)?;
    let step = projected_step(&state.w, &xi, cfg.lr_at(state.step + 1), cfg.clip_norm)?;
    let mut next = state.clone();
    next.w = step.w.clone();
    Ok((next, step))
}

/// Validation scores of one classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationScores {
    pub group_risks: Vec<f64>,
    pub group_accs: Vec<f64>,
    pub wg_risk: f64,
    pub wg_acc: f64,
}

impl ValidationScores {
    pub fn compute(validation: &EmbeddingDataset, psi: &ClassifierParams) -> Result<Self> {
        let group_risks = group_risks(validation, psi)?;
        let group_accs = group_accuracies(validation, psi)?;
        let wg_risk = group_risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let wg_acc = group_accs.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            group_risks,
            group_accs,
            wg_risk,
            wg_acc,
        })
    }

    /// Lower is better.
    pub fn score(&self, metric: SelectionMetric) -> f64 {
        match metric {
            SelectionMetric::WorstGroupRisk => self.wg_risk,
            SelectionMetric::WorstGroupError => 1.0 - self.wg_acc,
        }
    }
}

/// Replaces the incumbent with `state.psi` when its validation score is no
/// worse (`≤`, so ties go to the later step).
pub fn select_model(
    state: &ReweightState,
    validation: &EmbeddingDataset,
    cfg: &OuterConfig,
) -> Result<(ReweightState, ValidationScores, bool)> {
    let scores = ValidationScores::compute(validation, &state.psi)?;
    let score = scores.score(cfg.selection_metric);
    let mut next = state.clone();
    let replace = state.best_psi.is_none() || score <= state.best_score;
    if replace {
        next.best_psi = Some(state.psi.clone());
        next.best_score = score;
        next.best_step = state.step;
        next.best_w = Some(state.w.clone());
    }
    Ok((next, scores, replace))
}

/// Outcome of [`gsr_run`].
#[derive(Debug, Clone)]
pub struct GsrRun {
    /// The selected classifier.
    pub psi: ClassifierParams,
    /// Weights after the final step.
    pub w: SampleWeights,
    pub record: RunRecord,
}

const QUANTILES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn group_weight_stats(heldout: &EmbeddingDataset, w: &SampleWeights) -> (Vec<f64>, Vec<Vec<f64>>) {
    let Ok(groups) = heldout.group_indices() else {
        return (Vec::new(), Vec::new());
    };
    let ws = w.as_slice();
    groups
        .iter()
        .map(|members| {
            let vals: Vec<f64> = members.iter().map(|&i| ws[i]).collect();
            (vals.iter().sum::<f64>(), quantiles(&vals, &QUANTILES))
        })
        .unzip()
}

fn check_compatible(
    heldout: &EmbeddingDataset,
    target: &EmbeddingDataset,
    validation: &EmbeddingDataset,
) -> Result<()> {
    for (name, other) in [("target", target), ("validation", validation)] {
        if other.dim() != heldout.dim() || other.n_classes() != heldout.n_classes() {
            return Err(GsrError::DimensionMismatch(format!(
                "{name} set has d = {}, K = {}; held-out set has d = {}, K = {}",
                other.dim(),
                other.n_classes(),
                heldout.dim(),
                heldout.n_classes()
            )));
        }
    }
    target.nonempty_group_indices()?;
    validation.nonempty_group_indices()?;
    if target.n_groups() != validation.n_groups() {
        return Err(GsrError::DimensionMismatch(format!(
            "target has {} groups, validation has {}",
            target.n_groups(),
            validation.n_groups()
        )));
    }
    Ok(())
}

/// Runs the full reweighting loop.
///
/// Held-out group labels, when present, are only used to summarize the
/// weights in the record; they never influence the update.
pub fn gsr_run(
    heldout: &EmbeddingDataset,
    target: &EmbeddingDataset,
    validation: &EmbeddingDataset,
    cfg: &GsrConfig,
) -> Result<GsrRun> {
    cfg.validate()?;
    check_compatible(heldout, target, validation)?;
    let outer = &cfg.outer;
    let mut state = ReweightState::initial(
        heldout.len(),
        target.n_groups(),
        heldout.dim(),
        heldout.n_classes(),
    );
    let mut rows = Vec::with_capacity(outer.steps);

    for t in 1..=outer.steps {
        let at = |e: GsrError| GsrError::AtStep {
            step: t,
            source: Box::new(e),
        };
        // warm start from the previous step's fit
        let fit = fit_last_layer_detailed(heldout, &state.w, &cfg.inner, &state.psi).map_err(at)?;
        state.psi = fit.params;

        let risks = group_risks(target, &state.psi).map_err(at)?;
        state.gamma = gamma_update(&state.gamma, &risks, outer.temperature).map_err(at)?;

        let table = match cfg.method {
            InfluenceMethod::Exact => influence_table(
                heldout,
                target,
                &state.psi,
                &state.w,
                &cfg.inner,
                &cfg.solve,
            ),
            InfluenceMethod::HessianFree => hessian_free_table(heldout, target, &state.psi),
        }
        .map_err(at)?;
        let (mut next, projected) = outer_step(&state, &table, outer).map_err(at)?;

        // selection judges ψ⁽ᵗ⁾, which was fitted with the pre-update weights
        let fitted_w = state.w.clone();
        state.step = t;
        let (selected_state, scores, selected) =
            select_model(&state, validation, outer).map_err(at)?;
        next.step = t;
        next.best_psi = selected_state.best_psi;
        next.best_score = selected_state.best_score;
        next.best_step = selected_state.best_step;
        next.best_w = selected_state.best_w;
        state = next;

        let (sums, qs) = group_weight_stats(heldout, &fitted_w);
        rows.push(StepRecord {
            step: t,
            gamma: state.gamma.clone(),
            target_group_risks: risks,
            val_wg_risk: scores.wg_risk,
            val_wg_acc: scores.wg_acc,
            group_weight_sums: sums,
            selected,
            outer_lr: outer.lr_at(t),
            val_group_risks: scores.group_risks,
            val_group_accs: scores.group_accs,
            weight_quantiles: qs,
            xi_norm: projected.xi_norm,
            clipped: projected.clipped,
            step_rejected: projected.rejected,
            inner_iterations: fit.iterations,
        });
    }

    let best_psi = state.best_psi.clone().expect("at least one step ran");
    let record = RunRecord {
        summary: RunSummary {
            method: cfg.method.label().to_string(),
            steps: rows.len(),
            selected_step: state.best_step,
            best_score: state.best_score,
            rejected_steps: rows.iter().filter(|r| r.step_rejected).count(),
            config: *cfg,
        },
        steps: rows,
        final_weights: state.w.as_slice().to_vec(),
        selected_weights: state
            .best_w
            .as_ref()
            .expect("at least one step ran")
            .as_slice()
            .to_vec(),
    };
    Ok(GsrRun {
        psi: best_psi,
        w: state.w,
        record,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_update(&[0.3, 0.7], &[2.0, 2.0], 0.1).unwrap(), vec![0.3, 0.7]);
        let tau = 0.1;
        let g = gamma_update(&[0.5, 0.5], &[tau * 3f64.ln(), 0.0], tau).unwrap();
        assert!((g[0] - 0.75).abs() < 1e-15 && (g[1] - 0.25).abs() < 1e-15);
        let g = gamma_update(&[0.2, 0.8], &[5.0, 0.0], 1e12).unwrap();
        assert!((g[0] - 0.2).abs() < 1e-10);
        assert!(gamma_update(&[0.5, 0.5], &[f64::NAN, 0.0], 1.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let w = SampleWeights::new(vec![0.5, 0.5]).unwrap();
        let s = projected_step(&w, &[1.0, -1.0], 1.0, None).unwrap();
        assert_eq!(s.w.as_slice(), &[0.0, 1.0]);
        let s = projected_step(&w, &[0.0, 0.0], 1.0, Some(1.0)).unwrap();
        assert_eq!(s.w, w);
        // ‖ξ‖ = 10 clipped to 1: step with ξ/10
        let s = projected_step(&w, &[6.0, -8.0], 0.1, Some(1.0)).unwrap();
        assert!(s.clipped);
        assert!((s.w.as_slice()[0] - 0.44 / 1.02).abs() < 1e-15);
        assert!((s.w.as_slice()[1] - 0.58 / 1.02).abs() < 1e-15);
    }

    #[test]
    fn all_zero_projection_is_rejected() {
        let w = SampleWeights::new(vec![0.5, 0.5]).unwrap();
        let s = projected_step(&w, &[1.0, 1.0], 10.0, None).unwrap();
        assert!(s.rejected);
        assert_eq!(s.w, w);
    }

    #[test]
    fn decay_schedule() {
        let cfg = OuterConfig::default();
        assert_eq!(cfg.lr_at(1), 1.0);
        assert_eq!(cfg.lr_at(30), 1.0);
        assert_eq!(cfg.lr_at(31), 0.1);
        assert!((cfg.lr_at(61) - 0.01).abs() < 1e-18);
    }

    #[test]
    fn selection_uses_less_or_equal() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let val = EmbeddingDataset::new(x, vec![1, 0], Some(vec![0, 1]), None, None).unwrap();
        let cfg = OuterConfig::default();
        let mut state = ReweightState::initial(2, 2, 1, 2);
        state.step = 1;
        let (s1, _, replaced) = select_model(&state, &val, &cfg).unwrap();
        assert!(replaced);
        // identical model at a later step: tie goes to the later step
        let mut s2 = s1.clone();
        s2.step = 2;
        let (s2, _, replaced) = select_model(&s2, &val, &cfg).unwrap();
        assert!(replaced && s2.best_step == 2);
        // worse model keeps the incumbent
        let mut s3 = s2.clone();
        s3.step = 3;
        s3.psi = ClassifierParams::new(DMatrix::from_row_slice(1, 2, &[3.0, -3.0])).unwrap();
        let (s3, _, replaced) = select_model(&s3, &val, &cfg).unwrap();
        assert!(!replaced && s3.best_step == 2);
        // better model replaces it
        let mut s4 = s3.clone();
        s4.step = 4;
        s4.psi = ClassifierParams::new(DMatrix::from_row_slice(1, 2, &[-3.0, 3.0])).unwrap();
        let (s4, _, replaced) = select_model(&s4, &val, &cfg).unwrap();
        assert!(replaced && s4.best_step == 4);
    }
}
