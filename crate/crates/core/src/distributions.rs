//! Finite discrete distributions and the divergence toolkit.
//!
//! All logarithms are natural, so every divergence is in nats. Two
//! distributions are only comparable when their supports list the same atoms
//! in the same order; nothing here re-indexes silently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total probability mass at construction.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDist", into = "RawDist")]
pub struct DiscreteDist {
    support: Vec<String>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDist {
    support: Vec<String>,
    probs: Vec<f64>,
}

impl TryFrom<RawDist> for DiscreteDist {
    type Error = Error;

    fn try_from(raw: RawDist) -> Result<Self> {
        DiscreteDist::new(raw.support, raw.probs)
    }
}

impl From<DiscreteDist> for RawDist {
    fn from(d: DiscreteDist) -> Self {
        RawDist {
            support: d.support,
            probs: d.probs,
        }
    }
}

impl DiscreteDist {
    /// Validates and, when the mass is within [`MASS_TOLERANCE`] of one,
    /// renormalises exactly.
    pub fn new(support: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if support.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} atoms but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for atom in &support {
            if !seen.insert(atom.as_str()) {
                return Err(Error::InvalidDistribution(format!("duplicate atom `{atom}`")));
            }
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        let probs = probs.into_iter().map(|p| p / total).collect();
        Ok(Self { support, probs })
    }

    /// Distribution over the atoms `"0"`, `"1"`, ...
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let support = (0..probs.len()).map(|i| i.to_string()).collect();
        Self::new(support, probs)
    }

    pub fn point_mass(support: Vec<String>, index: usize) -> Result<Self> {
        let mut probs = vec![0.0; support.len()];
        *probs
            .get_mut(index)
            .ok_or_else(|| Error::invalid(format!("atom index {index} out of range")))? = 1.0;
        Self::new(support, probs)
    }

    pub fn uniform(support: Vec<String>) -> Result<Self> {
        let n = support.len().max(1) as f64;
        let probs = vec![1.0 / n; support.len()];
        Self::new(support, probs)
    }

    pub fn support(&self) -> &[String] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob_of(&self, atom: &str) -> Option<f64> {
        self.support
            .iter()
            .position(|a| a == atom)
            .map(|i| self.probs[i])
    }

    pub(crate) fn aligned(&self, other: &DiscreteDist) -> Result<()> {
        if self.support == other.support {
            Ok(())
        } else {
            Err(Error::SupportMismatch)
        }
    }
}

/// KL divergence in nats; `f64::INFINITY` when `p` has mass where `q` has none.
pub fn kl(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    p.aligned(q)?;
    let mut total = 0.0;
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += a * (a / b).ln();
    }
    // Rounding can push a near-zero sum slightly negative.
    Ok(total.max(0.0))
}

/// Half the L1 distance.
pub fn tv(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    p.aligned(q)?;
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `alpha * p + (1 - alpha) * q`.
pub fn mixture(p: &DiscreteDist, q: &DiscreteDist, alpha: f64) -> Result<DiscreteDist> {
    check_alpha(alpha)?;
    p.aligned(q)?;
    let probs: Vec<f64> = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    let total: f64 = probs.iter().sum();
    Ok(DiscreteDist {
        support: p.support.clone(),
        probs: probs.into_iter().map(|v| v / total).collect(),
    })
}

/// Alpha-skew Jensen-Shannon divergence
/// `alpha KL(p || m) + (1 - alpha) KL(q || m)` with `m = mixture(p, q, alpha)`.
pub fn js_alpha(p: &DiscreteDist, q: &DiscreteDist, alpha: f64) -> Result<f64> {
    let (a, b) = js_alpha_terms(p, q, alpha)?;
    Ok(alpha * a + (1.0 - alpha) * b)
}

/// `(KL(p || m), KL(q || m))`. A term whose weight is zero is reported as 0:
/// its distribution may carry mass outside the (collapsed) mixture.
fn js_alpha_terms(p: &DiscreteDist, q: &DiscreteDist, alpha: f64) -> Result<(f64, f64)> {
    let m = mixture(p, q, alpha)?;
    let a = if alpha > 0.0 { kl(p, &m)? } else { 0.0 };
    let b = if alpha < 1.0 { kl(q, &m)? } else { 0.0 };
    Ok((a, b))
}

/// `max{2 alpha KL(p || m), 2 (1 - alpha) KL(q || m)}`, an upper bound on
/// [`js_alpha`].
pub fn js_alpha_kl_bound(p: &DiscreteDist, q: &DiscreteDist, alpha: f64) -> Result<f64> {
    let (a, b) = js_alpha_terms(p, q, alpha)?;
    Ok((2.0 * alpha * a).max(2.0 * (1.0 - alpha) * b))
}

/// `x^(1/e)`.
pub fn root_e(x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::invalid(format!("root_e of negative value {x}")));
    }
    Ok(x.powf(1.0 / std::f64::consts::E))
}

/// Both sides of `|ln(a/b)| <= |a - b| / min(a, b)` for positive `a`, `b`.
pub fn log_ratio_bound(a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid("log-ratio bound needs positive arguments"));
    }
    Ok(((a / b).ln().abs(), (a - b).abs() / a.min(b)))
}

/// Pointwise AM-GM ratio check at `alpha = 1/2`: for every atom with
/// `q > 0`, returns `(p/m, m/q)` where `m = (p + q)/2`.
pub fn am_gm_ratios(p: &DiscreteDist, q: &DiscreteDist) -> Result<Vec<(f64, f64)>> {
    let m = mixture(p, q, 0.5)?;
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .zip(&m.probs)
        .filter(|((_, &b), &mm)| b > 0.0 && mm > 0.0)
        .map(|((&a, &b), &mm)| (a / mm, mm / b))
        .collect())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}
