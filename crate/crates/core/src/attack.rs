//! Gradient-matching reconstruction and the bounds that limit it.
//!
//! The adversary sees one client's shared gradient `theta_obs` together with
//! the broadcast model and labels, and searches for inputs whose gradient
//! matches it. Leakage is scored by how close the search iterates stay to
//! the true data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{distance, grad_params, norm, Dataset, Model, Vector};
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub iters: usize,
    pub lr: f64,
    /// Divide the objective by `||theta_obs||^2` so a fixed step size works
    /// across gradient scales.
    pub normalize: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            lr: 0.1,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackTrace {
    iterates: Vec<Dataset>,
    mismatch: Vec<f64>,
}

impl AttackTrace {
    pub fn from_parts(iterates: Vec<Dataset>, mismatch: Vec<f64>) -> Result<Self> {
        if iterates.len() != mismatch.len() {
            return Err(Error::DimensionMismatch {
                expected: iterates.len(),
                got: mismatch.len(),
            });
        }
        if mismatch.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::invalid("mismatch values must be non-negative"));
        }
        Ok(Self { iterates, mismatch })
    }

    pub fn len(&self) -> usize {
        self.mismatch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mismatch.is_empty()
    }

    pub fn iterates(&self) -> &[Dataset] {
        &self.iterates
    }

    /// `||g(d_i) - theta_obs||` after each step.
    pub fn mismatch(&self) -> &[f64] {
        &self.mismatch
    }

    /// The first `n` iterations.
    pub fn prefix(&self, n: usize) -> AttackTrace {
        let n = n.min(self.len());
        AttackTrace {
            iterates: self.iterates[..n].to_vec(),
            mismatch: self.mismatch[..n].to_vec(),
        }
    }

    /// Mean per-sample distance from each iterate to `truth`.
    pub fn distances(&self, truth: &Dataset) -> Result<Vec<f64>> {
        self.iterates
            .iter()
            .map(|it| {
                it.same_shape(truth)?;
                Ok(mean_row_distance(it, truth))
            })
            .collect()
    }
}

fn mean_row_distance(a: &Dataset, b: &Dataset) -> f64 {
    a.features()
        .iter()
        .zip(b.features())
        .map(|(x, y)| distance(x, y))
        .sum::<f64>()
        / a.len() as f64
}

/// Projected gradient descent on `||g(d) - theta_obs||^2` over `d` in
/// `[0, 1]^(n x dim)`, starting from a seeded uniform draw. `labels` fixes
/// both the sample count and the known targets.
pub fn invert(model: &Model, observed: &[f64], labels: &[f64], cfg: &AttackConfig, seed: u64) -> Result<AttackTrace> {
    if cfg.iters == 0 {
        return Err(Error::invalid("attack needs at least one iteration"));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    crate::error::ensure_len(model.params().len(), observed.len())?;
    let d = model.input_dim();
    let n = labels.len();
    let mut r = rng(seed);
    let init: Vec<Vector> = (0..n).map(|_| (0..d).map(|_| r.gen::<f64>()).collect()).collect();
    let mut current = Dataset::new(init, labels.to_vec())?;
    let scale = if cfg.normalize {
        norm(observed).powi(2).max(1e-12)
    } else {
        1.0
    };
    let mut residual = gradient_residual(model, &current, observed)?;

    let mut iterates = Vec::with_capacity(cfg.iters);
    let mut mismatch = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let step = 2.0 * cfg.lr / (scale * n as f64);
        let mut rows = Vec::with_capacity(n);
        for (x, &y) in current.features().iter().zip(labels) {
            let g = model.param_grad_dot_input_grad(x, y, &residual)?;
            rows.push(x.iter().zip(&g).map(|(v, gv)| v - step * gv).collect());
        }
        let next = Dataset::new(rows, labels.to_vec());
        let next = match next {
            Ok(next) => next,
            Err(_) => return Err(diverged(iterates, mismatch)),
        };
        residual = match gradient_residual(model, &next, observed) {
            Ok(r) => r,
            Err(_) => return Err(diverged(iterates, mismatch)),
        };
        let m = norm(&residual);
        if !m.is_finite() {
            return Err(diverged(iterates, mismatch));
        }
        iterates.push(next.clone());
        mismatch.push(m);
        current = next;
    }
    AttackTrace::from_parts(iterates, mismatch)
}

fn gradient_residual(model: &Model, data: &Dataset, observed: &[f64]) -> Result<Vector> {
    Ok(grad_params(model, data)?
        .into_iter()
        .zip(observed)
        .map(|(g, o)| g - o)
        .collect())
}

fn diverged(iterates: Vec<Dataset>, mismatch: Vec<f64>) -> Error {
    Error::Diverged {
        trace: Box::new(AttackTrace { iterates, mismatch }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalLeakage {
    pub eps_p: f64,
    /// Value before clamping to `[0, 1]`.
    pub raw: f64,
    pub clamped: bool,
}

/// `[D - mean_i mean_m ||d_i^(m) - truth^(m)||] / D`, clamped to `[0, 1]`.
/// An empty trace leaks nothing.
pub fn privacy_leakage_empirical(trace: &AttackTrace, truth: &Dataset, diameter: f64) -> Result<EmpiricalLeakage> {
    if !(diameter > 0.0) {
        return Err(Error::invalid("diameter must be positive"));
    }
    if trace.is_empty() {
        return Ok(EmpiricalLeakage {
            eps_p: 0.0,
            raw: 0.0,
            clamped: false,
        });
    }
    let distances = trace.distances(truth)?;
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let raw = (diameter - mean) / diameter;
    let eps_p = raw.clamp(0.0, 1.0);
    Ok(EmpiricalLeakage {
        eps_p,
        raw,
        clamped: eps_p != raw,
    })
}

/// Norm of the difference between the mean rows of two datasets.
pub fn distortion_extent(a: &Dataset, b: &Dataset) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.len() as f64;
    let mut diff = vec![0.0; a.dim()];
    for (x, y) in a.features().iter().zip(b.features()) {
        for (o, (u, v)) in diff.iter_mut().zip(x.iter().zip(y)) {
            *o += (u - v) / n;
        }
    }
    Ok(norm(&diff))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub regret_r2: f64,
    pub regret_points: usize,
    pub p_clamped: bool,
    pub probes_used: usize,
    pub probes_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConstants {
    pub c1: f64,
    pub c2: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub p: f64,
    pub diagnostics: FitDiagnostics,
}

pub const P_RANGE: (f64, f64) = (0.01, 1.5);
const PREFIXES_PER_TRACE: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct RegretFit {
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
    pub r2: f64,
    pub points: usize,
    pub clamped: bool,
}

/// Log-spaced prefix lengths in the upper decade `[len/10, len]`.
fn prefix_lengths(len: usize) -> Vec<usize> {
    let lo = (len / 10).max(1) as f64;
    let hi = len as f64;
    let mut out: Vec<usize> = (0..PREFIXES_PER_TRACE)
        .map(|j| {
            let t = j as f64 / (PREFIXES_PER_TRACE - 1) as f64;
            (lo * (hi / lo).powf(t)).round() as usize
        })
        .map(|i| i.clamp(1, len))
        .collect();
    out.dedup();
    out
}

/// Fits `cumulative(I) ~ c I^p` across prefixes of the mismatch sequences.
///
/// The exponent is the least-squares slope in log-log space; `c2` is then
/// raised until `c2 I^p` dominates every prefix, and `c1` lowered until
/// `c1 I^p` is dominated by every prefix.
pub fn fit_regret(sequences: &[&[f64]]) -> Result<RegretFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for seq in sequences {
        let cumulative = cumulative_sums(seq);
        for i in prefix_lengths(seq.len()) {
            let c = cumulative[i - 1];
            if c > 0.0 {
                xs.push((i as f64).ln());
                ys.push(c.ln());
            }
        }
    }
    if xs.len() < 2 || xs.iter().all(|&x| x == xs[0]) {
        return Err(Error::invalid("regret fit needs prefixes of at least two lengths"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    let p = slope.clamp(P_RANGE.0, P_RANGE.1);

    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    for seq in sequences {
        for (i, c) in cumulative_sums(seq).into_iter().enumerate() {
            let ratio = c / ((i + 1) as f64).powf(p);
            c2 = c2.max(ratio);
            if c > 0.0 {
                c1 = c1.min(ratio);
            }
        }
    }
    Ok(RegretFit {
        p,
        c1: if c1.is_finite() { c1 } else { 0.0 },
        c2,
        r2,
        points: xs.len(),
        clamped: p != slope,
    })
}

fn cumulative_sums(seq: &[f64]) -> Vec<f64> {
    seq.iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Extreme ratios `||x - x'|| / ||g(x) - g(x')||` over probe pairs.
/// Returns `(c_a, c_b, used, excluded)`.
pub fn fit_distance_ratios<G>(probes: &[(Dataset, Dataset)], gradient: G) -> Result<(f64, f64, usize, usize)>
where
    G: Fn(&Dataset) -> Result<Vector>,
{
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut used = 0;
    for (a, b) in probes {
        a.same_shape(b)?;
        let dx = flat_distance(a, b);
        let dg = distance(&gradient(a)?, &gradient(b)?);
        if dx == 0.0 || !(dg > 1e-12) {
            continue;
        }
        let ratio = dx / dg;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateProbes(format!(
            "all {} probe pairs have identical inputs or gradients",
            probes.len()
        )));
    }
    Ok((lo, hi, used, probes.len() - used))
}

fn flat_distance(a: &Dataset, b: &Dataset) -> f64 {
    a.features()
        .iter()
        .zip(b.features())
        .map(|(x, y)| distance(x, y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub const MIN_PROBES: usize = 10;

pub fn fit_constants<G>(traces: &[AttackTrace], probes: &[(Dataset, Dataset)], gradient: G) -> Result<EmpiricalConstants>
where
    G: Fn(&Dataset) -> Result<Vector>,
{
    let mut lengths: Vec<usize> = traces.iter().map(|t| t.len()).collect();
    lengths.sort_unstable();
    lengths.dedup();
    if lengths.len() < 3 || lengths[0] == 0 {
        return Err(Error::invalid("need at least three non-empty traces of distinct lengths"));
    }
    if probes.len() < MIN_PROBES {
        return Err(Error::invalid(format!("need at least {MIN_PROBES} probe pairs")));
    }
    let seqs: Vec<&[f64]> = traces.iter().map(|t| t.mismatch()).collect();
    let regret = fit_regret(&seqs)?;
    let (c_a, c_b, used, excluded) = fit_distance_ratios(probes, gradient)?;
    Ok(EmpiricalConstants {
        c1: regret.c1,
        c2: regret.c2,
        c_a,
        c_b,
        p: regret.p,
        diagnostics: FitDiagnostics {
            regret_r2: regret.r2,
            regret_points: regret.points,
            p_clamped: regret.clamped,
            probes_used: used,
            probes_excluded: excluded,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeakageBound {
    pub value: f64,
    /// `c2 c_b I^(p-1)`.
    pub residual_term: f64,
    /// `Delta >= 2 c2 c_b I^(p-1)`.
    pub gate: bool,
}

/// `1 - (Delta + c2 c_b I^(p-1)) / (4 D)`.
pub fn leakage_upper_bound(extent: f64, iters: usize, consts: &EmpiricalConstants, diameter: f64) -> Result<LeakageBound> {
    if !(diameter > 0.0) {
        return Err(Error::invalid("diameter must be positive"));
    }
    if iters == 0 {
        return Err(Error::invalid("iteration count must be at least 1"));
    }
    let term = residual_term(consts, iters);
    Ok(LeakageBound {
        value: 1.0 - (extent + term) / (4.0 * diameter),
        residual_term: term,
        gate: extent >= 2.0 * term,
    })
}

fn residual_term(consts: &EmpiricalConstants, iters: usize) -> f64 {
    consts.c2 * consts.c_b * (iters as f64).powf(consts.p - 1.0)
}

/// Smallest exterior radius that caps leakage at `budget`:
/// `max(0, 4D (1 - c - budget))` with `c = c2 c_b I^(p-1) / (4D)`.
pub fn epsilon1_threshold(budget: f64, diameter: f64, consts: &EmpiricalConstants, iters: usize) -> Result<f64> {
    if !(diameter > 0.0) {
        return Err(Error::invalid("diameter must be positive"));
    }
    if !(0.0..=1.0).contains(&budget) {
        return Err(Error::invalid("leakage budget must lie in [0, 1]"));
    }
    let c = residual_term(consts, iters.max(1)) / (4.0 * diameter);
    Ok((4.0 * diameter * (1.0 - c - budget)).max(0.0))
}
