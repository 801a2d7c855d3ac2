//! Exact enumeration over finite worlds.
//!
//! A [`FiniteWorld`] fixes a data space, a parameter space, the attacker's
//! prior over data, the posterior kernel `f(d | w)` and a utility table
//! `U(w, d)`. Every integral of the measure-theoretic statements becomes a
//! finite sum, so each trade-off check below is deterministic and exact up to
//! floating point.
//!
//! Belief names follow the attacker's view of client data:
//! the prior (no observation), the belief after the protected parameter
//! distribution `p_d`, and the belief after the unprotected `p_o`.

pub mod corpus;

use serde::{Deserialize, Serialize};

use crate::distributions::{js_alpha, root_e, tv, DiscreteDist};
use crate::error::{Error, Result};

/// Additive slack for every inequality check.
pub const CHECK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorld", into = "RawWorld")]
pub struct FiniteWorld {
    data_atoms: Vec<String>,
    param_atoms: Vec<String>,
    prior: DiscreteDist,
    kernel: Vec<Vec<f64>>,
    utility: Vec<Vec<f64>>,
}

/// Serialized layout of a world. Kernel and utility rows are indexed `[w][d]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawWorld {
    pub data_atoms: Vec<String>,
    pub param_atoms: Vec<String>,
    pub prior: Vec<f64>,
    pub kernel: Vec<Vec<f64>>,
    pub utility: Vec<Vec<f64>>,
}

impl TryFrom<RawWorld> for FiniteWorld {
    type Error = Error;

    fn try_from(raw: RawWorld) -> Result<Self> {
        FiniteWorld::new(raw.data_atoms, raw.param_atoms, raw.prior, raw.kernel, raw.utility)
    }
}

impl From<FiniteWorld> for RawWorld {
    fn from(w: FiniteWorld) -> Self {
        RawWorld {
            data_atoms: w.data_atoms,
            param_atoms: w.param_atoms,
            prior: w.prior.probs().to_vec(),
            kernel: w.kernel,
            utility: w.utility,
        }
    }
}

impl FiniteWorld {
    pub fn new(
        data_atoms: Vec<String>,
        param_atoms: Vec<String>,
        prior: Vec<f64>,
        kernel: Vec<Vec<f64>>,
        utility: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let prior = DiscreteDist::new(data_atoms.clone(), prior)?;
        // Validates uniqueness of the parameter atoms.
        DiscreteDist::uniform(param_atoms.clone())?;
        if kernel.len() != param_atoms.len() || utility.len() != param_atoms.len() {
            return Err(Error::invalid(
                "kernel and utility tables need one row per parameter atom",
            ));
        }
        let mut rows = Vec::with_capacity(kernel.len());
        for (w, row) in kernel.into_iter().enumerate() {
            let dist = DiscreteDist::new(data_atoms.clone(), row)
                .map_err(|e| e.context(format!("kernel row for `{}`", param_atoms[w])))?;
            rows.push(dist.probs().to_vec());
        }
        for row in &utility {
            if row.len() != data_atoms.len() || row.iter().any(|u| !u.is_finite()) {
                return Err(Error::invalid("utility rows must be finite with one entry per data atom"));
            }
        }
        Ok(Self {
            data_atoms,
            param_atoms,
            prior,
            kernel: rows,
            utility,
        })
    }

    /// Numbered atoms `d0..`, `w0..`.
    pub fn from_tables(prior: Vec<f64>, kernel: Vec<Vec<f64>>, utility: Vec<Vec<f64>>) -> Result<Self> {
        let data_atoms = (0..prior.len()).map(|i| format!("d{i}")).collect();
        let param_atoms = (0..kernel.len()).map(|i| format!("w{i}")).collect();
        Self::new(data_atoms, param_atoms, prior, kernel, utility)
    }

    pub fn data_atoms(&self) -> &[String] {
        &self.data_atoms
    }

    pub fn param_atoms(&self) -> &[String] {
        &self.param_atoms
    }

    pub fn prior(&self) -> &DiscreteDist {
        &self.prior
    }

    pub fn kernel(&self) -> &[Vec<f64>] {
        &self.kernel
    }

    pub fn utility(&self) -> &[Vec<f64>] {
        &self.utility
    }

    /// Uniform mean of each utility row: the per-dataset utility `U(w, D)`.
    pub fn mean_utilities(&self) -> Vec<f64> {
        self.utility
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }

    /// Indices of the parameters attaining the maximal mean utility.
    pub fn optimal_params(&self) -> Vec<usize> {
        let means = self.mean_utilities();
        let best = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        means
            .iter()
            .enumerate()
            .filter(|(_, &u)| best - u <= 1e-12)
            .map(|(i, _)| i)
            .collect()
    }

    fn check_param_dist(&self, p: &DiscreteDist) -> Result<()> {
        if p.support() == self.param_atoms.as_slice() {
            Ok(())
        } else {
            Err(Error::SupportMismatch)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPair", into = "RawPair")]
pub struct ProtectionPair {
    /// Unprotected parameter distribution.
    pub p_o: DiscreteDist,
    /// Protected parameter distribution.
    pub p_d: DiscreteDist,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    p_o: DiscreteDist,
    p_d: DiscreteDist,
}

impl TryFrom<RawPair> for ProtectionPair {
    type Error = Error;

    fn try_from(raw: RawPair) -> Result<Self> {
        ProtectionPair::new(raw.p_o, raw.p_d)
    }
}

impl From<ProtectionPair> for RawPair {
    fn from(p: ProtectionPair) -> Self {
        RawPair { p_o: p.p_o, p_d: p.p_d }
    }
}

impl ProtectionPair {
    pub fn new(p_o: DiscreteDist, p_d: DiscreteDist) -> Result<Self> {
        p_o.aligned(&p_d)?;
        Ok(Self { p_o, p_d })
    }

    pub fn tv(&self) -> f64 {
        // Supports are aligned by construction.
        tv(&self.p_o, &self.p_d).unwrap_or(f64::NAN)
    }
}

pub fn posterior_belief(world: &FiniteWorld, w: &str) -> Result<DiscreteDist> {
    let i = world
        .param_atoms
        .iter()
        .position(|a| a == w)
        .ok_or_else(|| Error::UnknownAtom(w.to_string()))?;
    DiscreteDist::new(world.data_atoms.clone(), world.kernel[i].clone())
}

/// `sum_w P(w) f(. | w)`.
pub fn marginal_belief(world: &FiniteWorld, p: &DiscreteDist) -> Result<DiscreteDist> {
    world.check_param_dist(p)?;
    let mut out = vec![0.0; world.data_atoms.len()];
    for (row, &pw) in world.kernel.iter().zip(p.probs()) {
        for (o, &f) in out.iter_mut().zip(row) {
            *o += pw * f;
        }
    }
    let total: f64 = out.iter().sum();
    DiscreteDist::new(world.data_atoms.clone(), out.into_iter().map(|v| v / total).collect())
}

/// `max_{w,d} |ln(f(d|w) / f(d))|`.
pub fn max_leakage_log(world: &FiniteWorld) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (w, row) in world.kernel.iter().enumerate() {
        for (d, (&f, &prior)) in row.iter().zip(world.prior.probs()).enumerate() {
            if f <= 0.0 || prior <= 0.0 {
                return Err(Error::UnboundedLeakage {
                    param: world.param_atoms[w].clone(),
                    data: world.data_atoms[d].clone(),
                });
            }
            best = best.max((f / prior).ln().abs());
        }
    }
    Ok(best)
}

/// `max_{w,d} |f(d|w) - f(d)|`.
pub fn max_leakage_tv(world: &FiniteWorld) -> f64 {
    world
        .kernel
        .iter()
        .flat_map(|row| row.iter().zip(world.prior.probs()).map(|(f, p)| (f - p).abs()))
        .fold(0.0, f64::max)
}

/// `JS_alpha(belief after p_d || prior)^(1/e)`.
pub fn privacy_leakage_jsalpha(world: &FiniteWorld, pair: &ProtectionPair, alpha: f64) -> Result<f64> {
    let protected = marginal_belief(world, &pair.p_d)?;
    root_e(js_alpha(&protected, &world.prior, alpha)?)
}

/// Prior-weighted mean absolute deviation `sum_d f(d) |f_A(d) - f(d)|`,
/// exactly as the leakage is defined for the TV setting. This is not the TV
/// distance; see [`privacy_leakage_tv_distance`].
pub fn privacy_leakage_tv(world: &FiniteWorld, pair: &ProtectionPair) -> Result<f64> {
    let protected = marginal_belief(world, &pair.p_d)?;
    Ok(world
        .prior
        .probs()
        .iter()
        .zip(protected.probs())
        .map(|(&p, &a)| p * (a - p).abs())
        .sum())
}

/// `tv(belief after p_d, prior)`, the quantity the TV trade-off proof consumes.
pub fn privacy_leakage_tv_distance(world: &FiniteWorld, pair: &ProtectionPair) -> Result<f64> {
    let protected = marginal_belief(world, &pair.p_d)?;
    tv(&protected, &world.prior)
}

/// `sum_w P(w) mean_d U(w, d)`.
pub fn expected_utility(world: &FiniteWorld, p: &DiscreteDist) -> Result<f64> {
    world.check_param_dist(p)?;
    Ok(world
        .mean_utilities()
        .iter()
        .zip(p.probs())
        .map(|(u, w)| u * w)
        .sum())
}

/// Mean over clients of `U(p_o) - U(p_d)`.
pub fn utility_loss_bayes(worlds: &[FiniteWorld], pairs: &[ProtectionPair]) -> Result<f64> {
    if worlds.len() != pairs.len() {
        return Err(Error::DimensionMismatch {
            expected: worlds.len(),
            got: pairs.len(),
        });
    }
    if worlds.is_empty() {
        return Err(Error::invalid("no clients"));
    }
    let mut total = 0.0;
    for (w, p) in worlds.iter().zip(pairs) {
        total += expected_utility(w, &p.p_o)? - expected_utility(w, &p.p_d)?;
    }
    Ok(total / worlds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MajorityGap {
    pub delta: f64,
    /// No positive gap qualifies (the positive-gap assumption fails).
    pub assumption_violated: bool,
}

/// Majority gap with the pair's own TV distance as threshold.
pub fn majority_gap(world: &FiniteWorld, pair: &ProtectionPair) -> Result<MajorityGap> {
    majority_gap_at(world, &pair.p_d, pair.tv())
}

/// Supremum of the gaps `g` for which the `p_d`-mass of parameters whose
/// utility lies within `g` of the optimum stays at or below `threshold_tv / 2`.
///
/// Gaps are scanned in increasing order; the result is the first gap at which
/// the cumulative mass exceeds the threshold. Every smaller value qualifies,
/// the returned one itself does not.
pub fn majority_gap_at(world: &FiniteWorld, p_d: &DiscreteDist, threshold_tv: f64) -> Result<MajorityGap> {
    world.check_param_dist(p_d)?;
    let means = world.mean_utilities();
    let best = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut atoms: Vec<(f64, f64)> = means
        .iter()
        .zip(p_d.probs())
        .filter(|(_, &m)| m > 0.0)
        .map(|(&u, &m)| ((best - u).abs(), m))
        .collect();
    if atoms.is_empty() {
        return Err(Error::invalid("protected distribution has empty support"));
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let limit = threshold_tv / 2.0;
    let mut cumulative = 0.0;
    let mut i = 0;
    while i < atoms.len() {
        let gap = atoms[i].0;
        // Atoms sharing a gap enter together.
        while i < atoms.len() && atoms[i].0 == gap {
            cumulative += atoms[i].1;
            i += 1;
        }
        if cumulative > limit + 1e-15 {
            return Ok(MajorityGap {
                delta: gap,
                assumption_violated: gap <= 0.0,
            });
        }
    }
    // Unreachable for threshold_tv <= 1; kept total for out-of-range inputs.
    let delta = atoms.last().map(|a| a.0).unwrap_or(0.0);
    Ok(MajorityGap {
        delta,
        assumption_violated: delta <= 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeoffKind {
    JsAlpha,
    Tv,
}

/// Second-form bounds, evaluated in both published variants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondForm {
    pub eps_u: f64,
    pub lhs_main: f64,
    pub rhs_main: f64,
    pub holds_main: bool,
    pub lhs_appendix: f64,
    pub rhs_appendix: f64,
    pub holds_appendix: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffReport {
    pub kind: TradeoffKind,
    pub lhs: f64,
    pub eps_p_mean: f64,
    pub bound_term: f64,
    /// `None` when the aggregated TV distance is zero.
    pub gamma: Option<f64>,
    /// Sum of the per-client majority gaps.
    pub delta_bar: f64,
    pub holds: bool,
    pub slack: f64,
    pub assumption_violated: bool,
    /// TV kind only: the prior-weighted leakage and whether the first form
    /// holds with it in place of the TV-distance leakage.
    pub eps_p_mean_as_written: Option<f64>,
    pub holds_as_written: Option<bool>,
    pub second_form: Option<SecondForm>,
}

fn check_clients(worlds: &[FiniteWorld], pairs: &[ProtectionPair]) -> Result<()> {
    if worlds.is_empty() {
        return Err(Error::invalid("no clients"));
    }
    if worlds.len() != pairs.len() {
        return Err(Error::DimensionMismatch {
            expected: worlds.len(),
            got: pairs.len(),
        });
    }
    Ok(())
}

/// Checks the first-form trade-off inequality for `kind` and evaluates the
/// second (utility) form whenever every majority gap is positive and the
/// aggregated TV is nonzero.
pub fn verify_tradeoff(
    kind: TradeoffKind,
    worlds: &[FiniteWorld],
    pairs: &[ProtectionPair],
    aggregated: &ProtectionPair,
    alpha: f64,
) -> Result<TradeoffReport> {
    check_clients(worlds, pairs)?;
    let k = worlds.len() as f64;
    let mut lhs = 0.0;
    let mut eps_p = 0.0;
    let mut eps_p_written = 0.0;
    let mut bound = 0.0;
    let mut lhs_sqrt_js = 0.0;
    let mut gamma_num = 0.0;
    let mut max_delta: f64 = 0.0;
    for (world, pair) in worlds.iter().zip(pairs) {
        let unprotected = marginal_belief(world, &pair.p_o)?;
        let t = pair.tv();
        match kind {
            TradeoffKind::JsAlpha => {
                let delta = max_leakage_log(world)?;
                max_delta = max_delta.max(delta);
                lhs += root_e(js_alpha(&unprotected, &world.prior, alpha)?)?;
                eps_p += privacy_leakage_jsalpha(world, pair, alpha)?;
                let c = 2.0 * alpha * (1.0 - alpha) * ((2.0 * delta).exp() - 1.0);
                bound += root_e(c * t)?;
                gamma_num += root_e(t)?;
            }
            TradeoffKind::Tv => {
                let delta = max_leakage_tv(world);
                max_delta = max_delta.max(delta);
                lhs += tv(&unprotected, &world.prior)?;
                lhs_sqrt_js += js_alpha(&unprotected, &world.prior, 0.5)?.sqrt();
                eps_p += privacy_leakage_tv_distance(world, pair)?;
                eps_p_written += privacy_leakage_tv(world, pair)?;
                bound += 2.0 * delta * t;
                gamma_num += t;
            }
        }
    }
    lhs /= k;
    eps_p /= k;
    bound /= k;
    let slack = eps_p + bound - lhs;
    let holds = lhs <= eps_p + bound + CHECK_TOLERANCE;

    let (eps_p_mean_as_written, holds_as_written) = match kind {
        TradeoffKind::Tv => {
            let w = eps_p_written / k;
            (Some(w), Some(lhs <= w + bound + CHECK_TOLERANCE))
        }
        TradeoffKind::JsAlpha => (None, None),
    };

    let agg_tv = aggregated.tv();
    let mut delta_bar = 0.0;
    let mut assumption_violated = false;
    for (world, pair) in worlds.iter().zip(pairs) {
        let gap = majority_gap_at(world, &pair.p_d, agg_tv)?;
        assumption_violated |= gap.assumption_violated;
        delta_bar += gap.delta;
    }
    let gamma = (agg_tv > 0.0).then(|| gamma_num / k / agg_tv);

    let second_form = match gamma {
        Some(gamma) if !assumption_violated => {
            let eps_u = utility_loss_bayes(worlds, pairs)?;
            let growth = (2.0 * max_delta).exp() - 1.0;
            let form = match kind {
                TradeoffKind::JsAlpha => {
                    let c = 2.0 * alpha * (1.0 - alpha) * growth;
                    let rhs_main = eps_p + 2.0 * gamma * root_e(c)? * eps_u / delta_bar;
                    let rhs_appendix =
                        eps_p + 2.0 * gamma * alpha * (1.0 - alpha) * growth * eps_u / delta_bar;
                    SecondForm {
                        eps_u,
                        lhs_main: lhs,
                        rhs_main,
                        holds_main: lhs <= rhs_main + CHECK_TOLERANCE,
                        lhs_appendix: lhs,
                        rhs_appendix,
                        holds_appendix: lhs <= rhs_appendix + CHECK_TOLERANCE,
                    }
                }
                TradeoffKind::Tv => {
                    let lhs_main = lhs_sqrt_js / k;
                    let rhs_main = eps_p + gamma / (4.0 * delta_bar) * growth * eps_u;
                    let rhs_appendix = eps_p + 4.0 * gamma * max_delta / delta_bar * eps_u;
                    SecondForm {
                        eps_u,
                        lhs_main,
                        rhs_main,
                        holds_main: lhs_main <= rhs_main + CHECK_TOLERANCE,
                        lhs_appendix: lhs,
                        rhs_appendix,
                        holds_appendix: lhs <= rhs_appendix + CHECK_TOLERANCE,
                    }
                }
            };
            Some(form)
        }
        _ => None,
    };

    Ok(TradeoffReport {
        kind,
        lhs,
        eps_p_mean: eps_p,
        bound_term: bound,
        gamma,
        delta_bar,
        holds,
        slack,
        assumption_violated,
        eps_p_mean_as_written,
        holds_as_written,
        second_form,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaKind {
    /// `JS_alpha(protected || unprotected belief) <= 2 a (1-a) (e^{2 delta} - 1) tv(p_o, p_d)`.
    Gjsd,
    /// `tv(protected, unprotected belief) <= 2 delta tv(p_o, p_d)`.
    Dtv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn bound_lemma_check(
    kind: LemmaKind,
    world: &FiniteWorld,
    pair: &ProtectionPair,
    alpha: f64,
) -> Result<BoundCheck> {
    let protected = marginal_belief(world, &pair.p_d)?;
    let unprotected = marginal_belief(world, &pair.p_o)?;
    let t = pair.tv();
    let (lhs, rhs) = match kind {
        LemmaKind::Gjsd => {
            let delta = max_leakage_log(world)?;
            (
                js_alpha(&protected, &unprotected, alpha)?,
                2.0 * alpha * (1.0 - alpha) * ((2.0 * delta).exp() - 1.0) * t,
            )
        }
        LemmaKind::Dtv => (tv(&protected, &unprotected)?, 2.0 * max_leakage_tv(world) * t),
    };
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + CHECK_TOLERANCE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityBoundCheck {
    pub eps_u: f64,
    pub lower_bound: f64,
    pub holds: bool,
    /// Every unprotected distribution is supported on its world's optimal
    /// parameters, the setting in which the bound is derived.
    pub optimal_support: bool,
    pub gaps: Vec<f64>,
}

/// `eps_u >= (1 / 2K) sum_k gap_k tv(aggregated)`, with each gap computed
/// against the aggregated TV threshold. Errors when any gap is non-positive.
pub fn utility_lower_bound_check(
    worlds: &[FiniteWorld],
    pairs: &[ProtectionPair],
    aggregated: &ProtectionPair,
) -> Result<UtilityBoundCheck> {
    check_clients(worlds, pairs)?;
    let agg_tv = aggregated.tv();
    let mut gaps = Vec::with_capacity(worlds.len());
    let mut optimal_support = true;
    for (client, (world, pair)) in worlds.iter().zip(pairs).enumerate() {
        let gap = majority_gap_at(world, &pair.p_d, agg_tv)?;
        if gap.assumption_violated {
            return Err(Error::AssumptionViolated { client });
        }
        gaps.push(gap.delta);
        let optimal = world.optimal_params();
        optimal_support &= pair
            .p_o
            .probs()
            .iter()
            .enumerate()
            .all(|(i, &p)| p == 0.0 || optimal.contains(&i));
    }
    let eps_u = utility_loss_bayes(worlds, pairs)?;
    let k = worlds.len() as f64;
    let lower_bound = gaps.iter().sum::<f64>() * agg_tv / (2.0 * k);
    Ok(UtilityBoundCheck {
        eps_u,
        lower_bound,
        holds: eps_u + CHECK_TOLERANCE >= lower_bound,
        optimal_support,
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64], world: &FiniteWorld) -> DiscreteDist {
        DiscreteDist::new(world.param_atoms().to_vec(), p.to_vec()).unwrap()
    }

    fn flat_world() -> FiniteWorld {
        FiniteWorld::from_tables(
            vec![0.3, 0.7],
            vec![vec![0.3, 0.7], vec![0.3, 0.7]],
            vec![vec![1.0, 0.0], vec![0.2, 0.2]],
        )
        .unwrap()
    }

    fn two_by_two() -> FiniteWorld {
        FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            vec![vec![1.0, 0.0], vec![0.0, 0.5]],
        )
        .unwrap()
    }

    #[test]
    fn world_validation() {
        assert!(FiniteWorld::from_tables(vec![0.5, 0.5], vec![vec![0.6, 0.6]], vec![vec![0.0, 0.0]]).is_err());
        assert!(FiniteWorld::from_tables(vec![0.5, 0.5], vec![vec![0.5, 0.5]], vec![]).is_err());
        let json = serde_json::to_string(&two_by_two()).unwrap();
        let back: FiniteWorld = serde_json::from_str(&json).unwrap();
        assert_eq!(back, two_by_two());
    }

    #[test]
    fn posterior_examples() {
        let w = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(posterior_belief(&w, "w0").unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(posterior_belief(&w, "w1").unwrap().probs(), &[1.0, 0.0]);
        assert!(matches!(posterior_belief(&w, "w9"), Err(Error::UnknownAtom(_))));
        let f = flat_world();
        for a in f.param_atoms() {
            assert_eq!(&posterior_belief(&f, a).unwrap(), f.prior());
        }
    }

    #[test]
    fn marginal_examples() {
        let w = two_by_two();
        let point = DiscreteDist::point_mass(w.param_atoms().to_vec(), 1).unwrap();
        assert_eq!(marginal_belief(&w, &point).unwrap(), posterior_belief(&w, "w1").unwrap());
        let f = flat_world();
        let m = marginal_belief(&f, &dist(&[0.2, 0.8], &f)).unwrap();
        for (a, b) in m.probs().iter().zip(f.prior().probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        let det = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let m = marginal_belief(&det, &dist(&[0.5, 0.5], &det)).unwrap();
        assert_eq!(m.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn max_leakage_examples() {
        assert_eq!(max_leakage_log(&flat_world()).unwrap(), 0.0);
        assert_eq!(max_leakage_tv(&flat_world()), 0.0);
        let w = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![0.75, 0.25]],
            vec![vec![0.0, 0.0]],
        )
        .unwrap();
        // ln(0.75/0.5) = ln 1.5 on the first atom, |ln(0.25/0.5)| = ln 2 on the second.
        assert!((max_leakage_log(&w).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((max_leakage_tv(&w) - 0.25).abs() < 1e-15);
        let point = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0]],
            vec![vec![0.0, 0.0]],
        )
        .unwrap();
        assert!(matches!(max_leakage_log(&point), Err(Error::UnboundedLeakage { .. })));
        assert_eq!(max_leakage_tv(&point), 0.5);
    }

    #[test]
    fn jsalpha_leakage_examples() {
        let f = flat_world();
        let pair = ProtectionPair::new(dist(&[0.5, 0.5], &f), dist(&[0.1, 0.9], &f)).unwrap();
        assert_eq!(privacy_leakage_jsalpha(&f, &pair, 0.5).unwrap(), 0.0);

        let w = two_by_two();
        let pair = ProtectionPair::new(dist(&[0.5, 0.5], &w), dist(&[1.0, 0.0], &w)).unwrap();
        assert_eq!(privacy_leakage_jsalpha(&w, &pair, 0.0).unwrap(), 0.0);
        assert_eq!(privacy_leakage_jsalpha(&w, &pair, 1.0).unwrap(), 0.0);

        // Handwritten KL sums against the mixture (0.7, 0.3).
        let kl_a = 0.9 * (0.9f64 / 0.7).ln() + 0.1 * (0.1f64 / 0.3).ln();
        let kl_b = 0.5 * (0.5f64 / 0.7).ln() + 0.5 * (0.5f64 / 0.3).ln();
        let expected = (0.5 * kl_a + 0.5 * kl_b).powf(1.0 / std::f64::consts::E);
        let got = privacy_leakage_jsalpha(&w, &pair, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-14);
        let via_module = root_e(js_alpha(
            &DiscreteDist::new(w.data_atoms().to_vec(), vec![0.9, 0.1]).unwrap(),
            w.prior(),
            0.5,
        ).unwrap()).unwrap();
        assert!((got - via_module).abs() < 1e-15);
    }

    #[test]
    fn tv_leakage_examples() {
        let f = flat_world();
        let pair = ProtectionPair::new(dist(&[0.5, 0.5], &f), dist(&[0.3, 0.7], &f)).unwrap();
        assert_eq!(privacy_leakage_tv(&f, &pair).unwrap(), 0.0);

        let w = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![0.75, 0.25], vec![0.5, 0.5]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let pair = ProtectionPair::new(dist(&[0.0, 1.0], &w), dist(&[1.0, 0.0], &w)).unwrap();
        assert!((privacy_leakage_tv(&w, &pair).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn tv_leakage_matches_double_loop() {
        let mut rng = crate::seed::rng(3);
        for _ in 0..50 {
            let world = corpus::random_world(&mut rng, 4, 3);
            let pd = corpus::random_dist(&mut rng, world.param_atoms().to_vec());
            let pair = ProtectionPair::new(pd.clone(), pd.clone()).unwrap();
            let mut expected = 0.0;
            for d in 0..4 {
                let mut fa = 0.0;
                for w in 0..3 {
                    fa += pd.probs()[w] * world.kernel()[w][d];
                }
                let p = world.prior().probs()[d];
                expected += p * (fa - p).abs();
            }
            assert!((privacy_leakage_tv(&world, &pair).unwrap() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn utility_examples() {
        let w = two_by_two();
        let point = DiscreteDist::point_mass(w.param_atoms().to_vec(), 0).unwrap();
        assert_eq!(expected_utility(&w, &point).unwrap(), 0.5);
        let constant = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.4, 0.4], vec![0.4, 0.4]],
        )
        .unwrap();
        assert!((expected_utility(&constant, &dist(&[0.3, 0.7], &constant)).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(expected_utility(&w, &dist(&[0.5, 0.5], &w)).unwrap(), 0.375);

        let pair = ProtectionPair::new(dist(&[0.3, 0.7], &w), dist(&[0.3, 0.7], &w)).unwrap();
        assert_eq!(utility_loss_bayes(std::slice::from_ref(&w), &[pair]).unwrap(), 0.0);

        // Utilities 0.9 and 0.6 on a single client.
        let u = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.9, 0.9], vec![0.6, 0.6]],
        )
        .unwrap();
        let pair = ProtectionPair::new(dist(&[1.0, 0.0], &u), dist(&[0.0, 1.0], &u)).unwrap();
        assert!((utility_loss_bayes(std::slice::from_ref(&u), std::slice::from_ref(&pair)).unwrap() - 0.3).abs() < 1e-15);

        let u2 = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.9, 0.9], vec![0.7, 0.7]],
        )
        .unwrap();
        let u4 = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.9, 0.9], vec![0.5, 0.5]],
        )
        .unwrap();
        let loss = utility_loss_bayes(&[u2, u4], &[pair.clone(), pair]).unwrap();
        assert!((loss - 0.3).abs() < 1e-15);
        assert!(utility_loss_bayes(&[u], &[]).is_err());
    }

    #[test]
    fn majority_gap_examples() {
        let w = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5]; 3],
            vec![vec![1.0, 1.0], vec![0.5, 0.5], vec![0.2, 0.2]],
        )
        .unwrap();
        let same = ProtectionPair::new(dist(&[0.2, 0.3, 0.5], &w), dist(&[0.2, 0.3, 0.5], &w)).unwrap();
        let g = majority_gap(&w, &same).unwrap();
        assert_eq!(g.delta, 0.0);
        assert!(g.assumption_violated);

        let disjoint = ProtectionPair::new(dist(&[0.0, 1.0, 0.0], &w), dist(&[1.0, 0.0, 0.0], &w)).unwrap();
        let g = majority_gap(&w, &disjoint).unwrap();
        assert_eq!(g.delta, 0.0);
        assert!(g.assumption_violated);

        let pair = ProtectionPair::new(dist(&[1.0, 0.0, 0.0], &w), dist(&[0.2, 0.3, 0.5], &w)).unwrap();
        let g = majority_gap(&w, &pair).unwrap();
        // Breakpoint oracle: gap candidates {0, 0.5, 0.8}; valid iff mass(<= gap) <= tv/2.
        let limit = pair.tv() / 2.0;
        let candidates = [(0.0, 0.2), (0.5, 0.5), (0.8, 1.0)];
        let sup = candidates
            .iter()
            .find(|(_, mass)| *mass > limit)
            .map(|(gap, _)| *gap)
            .unwrap();
        assert!((g.delta - sup).abs() < 1e-15);
        assert!((g.delta - 0.5).abs() < 1e-12);
        assert!(!g.assumption_violated);
    }

    #[test]
    fn majority_gap_is_monotone_in_tv() {
        let mut rng = crate::seed::rng(9);
        for _ in 0..100 {
            let world = corpus::random_world(&mut rng, 3, 5);
            let pd = corpus::random_dist(&mut rng, world.param_atoms().to_vec());
            let mut last = 0.0;
            for step in 0..=20 {
                let g = majority_gap_at(&world, &pd, step as f64 / 20.0).unwrap();
                assert!(g.delta >= last);
                last = g.delta;
            }
        }
    }

    #[test]
    fn identical_pairs_give_zero_slack() {
        let w = two_by_two();
        let p = dist(&[0.3, 0.7], &w);
        let pair = ProtectionPair::new(p.clone(), p.clone()).unwrap();
        for kind in [TradeoffKind::JsAlpha, TradeoffKind::Tv] {
            let r = verify_tradeoff(kind, std::slice::from_ref(&w), std::slice::from_ref(&pair), &pair, 0.5).unwrap();
            assert_eq!(r.lhs, r.eps_p_mean);
            assert_eq!(r.slack, 0.0);
            assert_eq!(r.bound_term, 0.0);
            assert!(r.holds);
            assert!(r.gamma.is_none());
        }
    }

    #[test]
    fn flat_single_client_has_zero_lhs() {
        let f = flat_world();
        let pair = ProtectionPair::new(dist(&[0.5, 0.5], &f), dist(&[1.0, 0.0], &f)).unwrap();
        let r = verify_tradeoff(TradeoffKind::JsAlpha, std::slice::from_ref(&f), std::slice::from_ref(&pair), &pair, 0.3).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);
        for kind in [LemmaKind::Gjsd, LemmaKind::Dtv] {
            let c = bound_lemma_check(kind, &f, &pair, 0.3).unwrap();
            assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
            assert!(c.holds);
        }
    }

    #[test]
    fn dtv_lemma_counterexample_on_four_atoms() {
        // Mirrored rows deviate from a uniform prior by at most e per atom but
        // are 4e apart in total variation.
        let e = 0.05;
        let w = FiniteWorld::from_tables(
            vec![0.25; 4],
            vec![
                vec![0.25 + e, 0.25 + e, 0.25 - e, 0.25 - e],
                vec![0.25 - e, 0.25 - e, 0.25 + e, 0.25 + e],
            ],
            vec![vec![0.0; 4], vec![0.0; 4]],
        )
        .unwrap();
        let pair = ProtectionPair::new(dist(&[1.0, 0.0], &w), dist(&[0.0, 1.0], &w)).unwrap();
        let c = bound_lemma_check(LemmaKind::Dtv, &w, &pair, 0.5).unwrap();
        assert!((c.lhs - 4.0 * e).abs() < 1e-12);
        assert!((c.rhs - 2.0 * e).abs() < 1e-12);
        assert!(!c.holds);
    }

    #[test]
    fn utility_bound_examples() {
        let w = FiniteWorld::from_tables(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5]; 3],
            vec![vec![1.0, 1.0], vec![0.5, 0.5], vec![0.2, 0.2]],
        )
        .unwrap();
        let pair = ProtectionPair::new(dist(&[1.0, 0.0, 0.0], &w), dist(&[0.2, 0.3, 0.5], &w)).unwrap();
        let c = utility_lower_bound_check(std::slice::from_ref(&w), std::slice::from_ref(&pair), &pair).unwrap();
        assert!(c.optimal_support);
        assert!(c.holds);
        assert!((c.eps_u - 0.55).abs() < 1e-12);

        let same = ProtectionPair::new(dist(&[0.2, 0.3, 0.5], &w), dist(&[0.2, 0.3, 0.5], &w)).unwrap();
        assert!(matches!(
            utility_lower_bound_check(std::slice::from_ref(&w), std::slice::from_ref(&same), &same),
            Err(Error::AssumptionViolated { client: 0 })
        ));

        let single = FiniteWorld::from_tables(vec![0.5, 0.5], vec![vec![0.5, 0.5]], vec![vec![0.3, 0.1]]).unwrap();
        let p = dist(&[1.0], &single);
        let pair = ProtectionPair::new(p.clone(), p).unwrap();
        assert_eq!(pair.tv(), 0.0);
        assert_eq!(utility_loss_bayes(std::slice::from_ref(&single), std::slice::from_ref(&pair)).unwrap(), 0.0);
        // A single atom sits at gap 0 with positive mass, so no positive gap qualifies.
        assert!(utility_lower_bound_check(&[single], std::slice::from_ref(&pair), &pair).is_err());
    }
}
