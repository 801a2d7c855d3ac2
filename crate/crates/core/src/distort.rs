//! Data-side protection mechanisms.
//!
//! Every mechanism maps a clean batch to a [`DistortedBatch`]: a per-sample
//! perturbation `delta` and the distorted features `clamp(x + delta)`. The
//! three optimisation modes run a fixed number of projected gradient steps on
//! each sample's loss:
//!
//! - `learn_to_distort` descends while keeping `eps1 <= ||delta|| <= max_norm`,
//! - `adversarial` ascends inside `||delta|| <= eps`,
//! - `unlearnable` descends inside `||delta|| <= eps`.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{run_federation, DistortionHook, FederationState, History, TrainConfig};
use crate::numerics::{
    grad_inputs, loss_mean, norm, project_inside_ball, project_outside_ball, Dataset, Model, Vector,
};
use crate::seed::{derive_path, derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    LearnToDistort,
    Adversarial,
    Unlearnable,
    Gaussian,
    Quantize,
    Sparsify,
    Identity,
    MpcStub,
    HeStub,
}

pub const DEFAULT_INNER_STEPS: usize = 20;
pub const DEFAULT_INNER_LR: f64 = 0.1;
/// Monte-Carlo draws per candidate variance in [`choose_sigma`].
pub const SIGMA_DRAWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionPlan {
    pub mode: Mode,
    #[serde(default)]
    pub eps1: f64,
    /// Outer radius of the learn-to-distort annulus; `eps1` when absent.
    #[serde(default)]
    pub max_norm: Option<f64>,
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub sigma2_candidates: Vec<f64>,
    #[serde(default)]
    pub levels: Option<usize>,
    #[serde(default)]
    pub keep_fraction: Option<f64>,
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    #[serde(default = "default_inner_lr")]
    pub inner_lr: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_inner_steps() -> usize {
    DEFAULT_INNER_STEPS
}

fn default_inner_lr() -> f64 {
    DEFAULT_INNER_LR
}

impl DistortionPlan {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            eps1: 0.0,
            max_norm: None,
            eps: 0.0,
            sigma2_candidates: Vec::new(),
            levels: None,
            keep_fraction: None,
            inner_steps: DEFAULT_INNER_STEPS,
            inner_lr: DEFAULT_INNER_LR,
            seed: 0,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mode::Identity)
    }

    pub fn learn_to_distort(eps1: f64) -> Self {
        Self {
            eps1,
            ..Self::new(Mode::LearnToDistort)
        }
    }

    pub fn outer_radius(&self) -> f64 {
        self.max_norm.unwrap_or(self.eps1)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite and non-negative"))
            }
        };
        nonneg("distortion.eps1", self.eps1)?;
        nonneg("distortion.eps", self.eps)?;
        nonneg("distortion.inner_lr", self.inner_lr)?;
        match self.mode {
            Mode::LearnToDistort | Mode::Adversarial | Mode::Unlearnable => {
                if self.inner_steps == 0 {
                    return Err(Error::config("distortion.inner_steps", "must be at least 1"));
                }
                if let Some(m) = self.max_norm {
                    nonneg("distortion.max_norm", m)?;
                    if m < self.eps1 {
                        return Err(Error::config("distortion.max_norm", "must be at least eps1"));
                    }
                }
            }
            Mode::Gaussian => {
                if self.sigma2_candidates.is_empty() {
                    return Err(Error::config("distortion.sigma2_candidates", "must not be empty"));
                }
                for &s in &self.sigma2_candidates {
                    nonneg("distortion.sigma2_candidates", s)?;
                }
            }
            Mode::Quantize => match self.levels {
                Some(l) if l >= 2 => {}
                _ => return Err(Error::config("distortion.levels", "quantize needs levels >= 2")),
            },
            Mode::Sparsify => match self.keep_fraction {
                Some(f) if f > 0.0 && f <= 1.0 => {}
                _ => {
                    return Err(Error::config(
                        "distortion.keep_fraction",
                        "sparsify needs keep_fraction in (0, 1]",
                    ))
                }
            },
            Mode::Identity | Mode::MpcStub | Mode::HeStub => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortedBatch {
    /// Per-sample perturbation before clamping.
    pub delta: Vec<Vector>,
    /// `distorted - clean`, after clamping.
    pub effective: Vec<Vector>,
    pub distorted: Dataset,
}

impl DistortedBatch {
    fn from_delta(clean: &Dataset, delta: Vec<Vector>) -> Result<Self> {
        let rows = clean
            .features()
            .iter()
            .zip(&delta)
            .map(|(x, d)| x.iter().zip(d).map(|(a, b)| a + b).collect())
            .collect();
        let distorted = clean.with_features(rows)?;
        Ok(Self::with_distorted(clean, delta, distorted))
    }

    fn from_distorted(clean: &Dataset, distorted: Dataset) -> Self {
        let delta = row_differences(&distorted, clean);
        Self::with_distorted(clean, delta, distorted)
    }

    fn with_distorted(clean: &Dataset, delta: Vec<Vector>, distorted: Dataset) -> Self {
        let effective = row_differences(&distorted, clean);
        Self {
            delta,
            effective,
            distorted,
        }
    }

    pub fn delta_norms(&self) -> Vec<f64> {
        self.delta.iter().map(|d| norm(d)).collect()
    }
}

fn row_differences(a: &Dataset, b: &Dataset) -> Vec<Vector> {
    a.features()
        .iter()
        .zip(b.features())
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect())
        .collect()
}

fn unit_direction(seed: u64, dim: usize) -> Vector {
    let mut r = rng(seed);
    loop {
        let v: Vector = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn clamp_unit(v: &[f64]) -> Vector {
    v.iter().map(|x| x.clamp(0.0, 1.0)).collect()
}

/// Projected gradient iterations on each sample's loss for the three
/// optimisation modes. Samples use independent seeds derived from `seed` and
/// their index.
pub fn inner_distort(model: &Model, batch: &Dataset, plan: &DistortionPlan, seed: u64) -> Result<DistortedBatch> {
    plan.validate()?;
    let d = batch.dim();
    let mut deltas = Vec::with_capacity(batch.len());
    for (i, (x, &y)) in batch.features().iter().zip(batch.labels()).enumerate() {
        let point = |delta: &[f64]| -> Vector {
            clamp_unit(&x.iter().zip(delta).map(|(a, b)| a + b).collect::<Vec<_>>())
        };
        let delta = match plan.mode {
            Mode::LearnToDistort => {
                let fallback = unit_direction(derive_seed(seed, "fallback", i as u64), d);
                let outer = plan.outer_radius();
                let mut delta: Vector = fallback.iter().map(|u| u * plan.eps1).collect();
                for _ in 0..plan.inner_steps {
                    let g = grad_inputs(model, &point(&delta), y)?;
                    let stepped: Vector = delta.iter().zip(&g).map(|(a, b)| a - plan.inner_lr * b).collect();
                    delta = project_outside_ball(&stepped, plan.eps1, &fallback)?;
                    delta = project_inside_ball(&delta, outer)?;
                }
                delta
            }
            Mode::Adversarial | Mode::Unlearnable => {
                let sign = if plan.mode == Mode::Adversarial { 1.0 } else { -1.0 };
                let mut delta = vec![0.0; d];
                for _ in 0..plan.inner_steps {
                    let g = grad_inputs(model, &point(&delta), y)?;
                    let stepped: Vector = delta
                        .iter()
                        .zip(&g)
                        .map(|(a, b)| a + sign * plan.inner_lr * b)
                        .collect();
                    delta = project_inside_ball(&stepped, plan.eps)?;
                }
                delta
            }
            other => {
                return Err(Error::invalid(format!(
                    "{other:?} is not an optimisation-based mechanism"
                )))
            }
        };
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("distortion of sample {i}")));
        }
        deltas.push(delta);
    }
    DistortedBatch::from_delta(batch, deltas)
}

/// Adds i.i.d. `N(0, sigma2)` noise to every feature.
pub fn gaussian_mechanism(batch: &Dataset, sigma2: f64, seed: u64) -> Result<DistortedBatch> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::invalid("variance must be finite and non-negative"));
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut r = rng(seed);
    let delta = batch
        .features()
        .iter()
        .map(|x| x.iter().map(|_| normal.sample(&mut r)).collect())
        .collect();
    DistortedBatch::from_delta(batch, delta)
}

/// Variance in `candidates` with the lowest Monte-Carlo expected loss of
/// `model` on the noised batch. All candidates share the same noise seeds;
/// ties go to the smaller variance.
pub fn choose_sigma(model: &Model, batch: &Dataset, candidates: &[f64], seed: u64) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate variances"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (f64::INFINITY, sorted[0]);
    for &s in &sorted {
        let mut total = 0.0;
        for j in 0..SIGMA_DRAWS {
            let noised = gaussian_mechanism(batch, s, derive_seed(seed, "choose_sigma", j as u64))?;
            total += loss_mean(model, &noised.distorted)?;
        }
        let mean = total / SIGMA_DRAWS as f64;
        if mean < best.0 {
            best = (mean, s);
        }
    }
    Ok(best.1)
}

/// Rounds every feature to the nearest of `levels` evenly spaced values in
/// `[0, 1]`.
pub fn quantize(batch: &Dataset, levels: usize) -> Result<DistortedBatch> {
    if levels < 2 {
        return Err(Error::invalid("quantization needs at least two levels"));
    }
    let steps = (levels - 1) as f64;
    let rows = batch
        .features()
        .iter()
        .map(|x| x.iter().map(|v| (v * steps).round() / steps).collect())
        .collect();
    Ok(DistortedBatch::from_distorted(batch, batch.with_features(rows)?))
}

/// Keeps the `ceil(keep_fraction * d)` largest-magnitude coordinates of each
/// sample and zeroes the rest. Ties keep the lower index.
pub fn sparsify(batch: &Dataset, keep_fraction: f64) -> Result<DistortedBatch> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid("keep fraction must lie in (0, 1]"));
    }
    let d = batch.dim();
    let keep = ((keep_fraction * d as f64).ceil() as usize).clamp(1, d);
    let rows = batch
        .features()
        .iter()
        .map(|x| {
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
            let mut out = vec![0.0; d];
            for &j in &order[..keep] {
                out[j] = x[j];
            }
            out
        })
        .collect();
    Ok(DistortedBatch::from_distorted(batch, batch.with_features(rows)?))
}

/// Mean loss on the distorted inputs minus mean loss on the clean ones.
pub fn utility_loss_empirical(model: &Model, clean: &Dataset, distorted: &Dataset) -> Result<f64> {
    clean.same_shape(distorted)?;
    if clean.labels() != distorted.labels() {
        return Err(Error::invalid("distorted batch must keep the clean labels"));
    }
    Ok(loss_mean(model, distorted)? - loss_mean(model, clean)?)
}

/// Runs the mechanism selected by `plan`.
pub fn apply_plan(model: &Model, batch: &Dataset, plan: &DistortionPlan, seed: u64) -> Result<DistortedBatch> {
    plan.validate()?;
    match plan.mode {
        Mode::LearnToDistort | Mode::Adversarial | Mode::Unlearnable => inner_distort(model, batch, plan, seed),
        Mode::Gaussian => {
            let sigma2 = choose_sigma(model, batch, &plan.sigma2_candidates, derive_seed(seed, "sigma", 0))?;
            gaussian_mechanism(batch, sigma2, derive_seed(seed, "noise", 0))
        }
        Mode::Quantize => quantize(batch, plan.levels.unwrap_or(2)),
        Mode::Sparsify => sparsify(batch, plan.keep_fraction.unwrap_or(1.0)),
        Mode::Identity => DistortedBatch::from_delta(batch, vec![vec![0.0; batch.dim()]; batch.len()]),
        Mode::MpcStub => Err(Error::UnimplementedMechanism("mpc")),
        Mode::HeStub => Err(Error::UnimplementedMechanism("he")),
    }
}

/// Federation hook applying a plan to each client every round, optionally
/// keeping every batch it produced.
pub struct PlanHook {
    plan: DistortionPlan,
    record: Option<Mutex<BTreeMap<(usize, usize), DistortedBatch>>>,
}

impl PlanHook {
    pub fn new(plan: DistortionPlan) -> Result<Self> {
        plan.validate()?;
        Ok(Self { plan, record: None })
    }

    pub fn recording(plan: DistortionPlan) -> Result<Self> {
        plan.validate()?;
        Ok(Self {
            plan,
            record: Some(Mutex::new(BTreeMap::new())),
        })
    }

    pub fn plan(&self) -> &DistortionPlan {
        &self.plan
    }

    /// Recorded batches keyed by `(round, client)`.
    pub fn take_record(&self) -> BTreeMap<(usize, usize), DistortedBatch> {
        match &self.record {
            Some(m) => std::mem::take(&mut *m.lock().expect("record lock")),
            None => BTreeMap::new(),
        }
    }
}

impl DistortionHook for PlanHook {
    fn distort(&self, global: &Model, client: usize, round: usize, clean: &Dataset) -> Result<Option<Dataset>> {
        if self.plan.mode == Mode::Identity {
            return Ok(None);
        }
        let seed = derive_path(self.plan.seed, "distort", &[client as u64, round as u64]);
        let batch = apply_plan(global, clean, &self.plan, seed)?;
        let distorted = batch.distorted.clone();
        if let Some(m) = &self.record {
            m.lock().expect("record lock").insert((round, client), batch);
        }
        Ok(Some(distorted))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortedTraining {
    pub model: Model,
    pub history: History,
    /// Every batch used for training, keyed by `(round, client)`.
    pub batches: BTreeMap<(usize, usize), DistortedBatch>,
    pub final_clean_loss: f64,
}

/// Alternates the plan's inner distortion with FedAvg rounds on the
/// distorted data.
pub fn train_learn_to_distort(
    state: FederationState,
    rounds: usize,
    train: &TrainConfig,
    plan: &DistortionPlan,
) -> Result<DistortedTraining> {
    let hook = PlanHook::recording(plan.clone())?;
    let (end, history) = run_federation(state, rounds, train, &hook)?;
    Ok(DistortedTraining {
        final_clean_loss: end.clean_loss()?,
        model: end.global,
        history,
        batches: hook.take_record(),
    })
}
