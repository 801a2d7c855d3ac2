//! Small differentiable models with hand-derived gradients.
//!
//! Three model kinds share a flat parameter vector:
//!
//! | kind       | layout                                   | loss |
//! |------------|------------------------------------------|------|
//! | `Linear`   | `[w_1..w_d, b]`                          | squared error |
//! | `Logistic` | `[w_1..w_d, b]`                          | binary cross-entropy |
//! | `Mlp`      | `[W1 (h x d, row major), b1 (h), w2 (h), b2]` | binary cross-entropy |
//!
//! The perceptron uses a `tanh` hidden layer and a sigmoid output. Cross-entropy
//! is evaluated on the logit (`softplus(z) - y z`) so it stays finite for
//! saturated outputs.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

pub type Vector = Vec<f64>;

pub const MAX_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    input_dim: usize,
    hidden: usize,
    params: Vector,
}

impl Model {
    /// Number of parameters for a model of the given shape.
    pub fn param_len(kind: ModelKind, input_dim: usize, hidden: usize) -> usize {
        match kind {
            ModelKind::Linear | ModelKind::Logistic => input_dim + 1,
            ModelKind::Mlp => hidden * input_dim + 2 * hidden + 1,
        }
    }

    pub fn new(kind: ModelKind, input_dim: usize, hidden: usize, params: Vector) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        let hidden = match kind {
            ModelKind::Mlp => {
                if hidden == 0 || hidden > MAX_HIDDEN {
                    return Err(Error::invalid(format!(
                        "hidden width must be in 1..={MAX_HIDDEN}, got {hidden}"
                    )));
                }
                hidden
            }
            _ => 0,
        };
        ensure_len(Self::param_len(kind, input_dim, hidden), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self {
            kind,
            input_dim,
            hidden,
            params,
        })
    }

    pub fn zeros(kind: ModelKind, input_dim: usize, hidden: usize) -> Result<Self> {
        let hidden = if kind == ModelKind::Mlp { hidden } else { 0 };
        Self::new(
            kind,
            input_dim,
            hidden,
            vec![0.0; Self::param_len(kind, input_dim, hidden)],
        )
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Same shape, new parameters.
    pub fn with_params(&self, params: Vector) -> Result<Self> {
        Self::new(self.kind, self.input_dim, self.hidden, params)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        ensure_len(self.input_dim, x.len())
    }

    /// Pre-activation output: the prediction for `Linear`, the logit otherwise.
    fn raw_output(&self, x: &[f64]) -> f64 {
        let d = self.input_dim;
        match self.kind {
            ModelKind::Linear | ModelKind::Logistic => dot(&self.params[..d], x) + self.params[d],
            ModelKind::Mlp => {
                let h = self.hidden;
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                let mut z = b2[0];
                for j in 0..h {
                    z += w2[j] * (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh();
                }
                z
            }
        }
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        let h = self.hidden;
        let w1 = &self.params[..h * d];
        let b1 = &self.params[h * d..h * d + h];
        (0..h)
            .map(|j| (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh())
            .collect()
    }

    /// Per-sample loss and its derivative with respect to the raw output.
    fn loss_and_dz(&self, z: f64, y: f64) -> (f64, f64) {
        match self.kind {
            ModelKind::Linear => {
                let r = z - y;
                (r * r, 2.0 * r)
            }
            ModelKind::Logistic | ModelKind::Mlp => (softplus(z) - y * z, sigmoid(z) - y),
        }
    }

    /// Second derivative of the per-sample loss with respect to the raw output.
    fn d2z(&self, z: f64) -> f64 {
        match self.kind {
            ModelKind::Linear => 2.0,
            _ => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }

    /// Gradient of the per-sample loss with respect to the parameters.
    fn sample_param_grad(&self, x: &[f64], y: f64, out: &mut [f64], scale: f64) {
        let d = self.input_dim;
        let z = self.raw_output(x);
        let (_, dz) = self.loss_and_dz(z, y);
        let g = dz * scale;
        match self.kind {
            ModelKind::Linear | ModelKind::Logistic => {
                for k in 0..d {
                    out[k] += g * x[k];
                }
                out[d] += g;
            }
            ModelKind::Mlp => {
                let h = self.hidden;
                let act = self.hidden_activations(x);
                let w2 = &self.params[h * d + h..h * d + 2 * h];
                for j in 0..h {
                    let back = g * w2[j] * (1.0 - act[j] * act[j]);
                    for k in 0..d {
                        out[j * d + k] += back * x[k];
                    }
                    out[h * d + j] += back;
                    out[h * d + h + j] += g * act[j];
                }
                out[h * d + 2 * h] += g;
            }
        }
    }

    /// Gradient of the raw output with respect to the input.
    fn output_input_grad(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        match self.kind {
            ModelKind::Linear | ModelKind::Logistic => self.params[..d].to_vec(),
            ModelKind::Mlp => {
                let h = self.hidden;
                let act = self.hidden_activations(x);
                let w1 = &self.params[..h * d];
                let w2 = &self.params[h * d + h..h * d + 2 * h];
                let mut out = vec![0.0; d];
                for j in 0..h {
                    let c = w2[j] * (1.0 - act[j] * act[j]);
                    for k in 0..d {
                        out[k] += c * w1[j * d + k];
                    }
                }
                out
            }
        }
    }

    /// `d/dx [ e . g(theta; x, y) ]` where `g` is the per-sample parameter
    /// gradient and `e` a fixed direction in parameter space. This is the
    /// input-side derivative the gradient-matching attacker descends along.
    pub fn param_grad_dot_input_grad(&self, x: &[f64], y: f64, e: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        ensure_len(self.params.len(), e.len())?;
        let d = self.input_dim;
        let z = self.raw_output(x);
        let (_, dz) = self.loss_and_dz(z, y);
        let d2 = self.d2z(z);
        let dzdx = self.output_input_grad(x);
        match self.kind {
            ModelKind::Linear | ModelKind::Logistic => {
                // e.g = dz * (e_w . x + e_b)
                let q = dot(&e[..d], x) + e[d];
                Ok((0..d).map(|k| d2 * dzdx[k] * q + dz * e[k]).collect())
            }
            ModelKind::Mlp => {
                let h = self.hidden;
                let act = self.hidden_activations(x);
                let w1 = &self.params[..h * d];
                let w2 = &self.params[h * d + h..h * d + 2 * h];
                let (e1, rest) = e.split_at(h * d);
                let (eb1, rest) = rest.split_at(h);
                let (ew2, eb2) = rest.split_at(h);
                // e.g = dz * Q(x), Q = sum_j w2_j u_j a_j + sum_j ew2_j h_j + eb2
                let mut q = eb2[0];
                let mut dq = vec![0.0; d];
                for j in 0..h {
                    let u = 1.0 - act[j] * act[j];
                    let a = dot(&e1[j * d..(j + 1) * d], x) + eb1[j];
                    q += w2[j] * u * a + ew2[j] * act[j];
                    let along_w1 = -2.0 * w2[j] * act[j] * u * a + ew2[j] * u;
                    for k in 0..d {
                        dq[k] += w1[j * d + k] * along_w1 + w2[j] * u * e1[j * d + k];
                    }
                }
                Ok((0..d).map(|k| d2 * dzdx[k] * q + dz * dq[k]).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<Vector>,
    labels: Vector,
}

impl Dataset {
    /// Builds a dataset, clamping every feature into `[0, 1]`.
    pub fn new(features: Vec<Vector>, labels: Vector) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyDataset);
        }
        ensure_len(features.len(), labels.len())?;
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let mut clamped = Vec::with_capacity(features.len());
        for row in features {
            ensure_len(dim, row.len())?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset features".into()));
            }
            clamped.push(row.into_iter().map(|v| v.clamp(0.0, 1.0)).collect());
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset labels".into()));
        }
        Ok(Self {
            features: clamped,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vector] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    /// Same labels, replacement features (clamped).
    pub fn with_features(&self, features: Vec<Vector>) -> Result<Self> {
        ensure_len(self.len(), features.len())?;
        Self::new(features, self.labels.clone())
    }

    pub fn same_shape(&self, other: &Dataset) -> Result<()> {
        ensure_len(self.len(), other.len())?;
        ensure_len(self.dim(), other.dim())
    }
}

pub fn predict(model: &Model, x: &[f64]) -> Result<f64> {
    model.check_input(x)?;
    let z = model.raw_output(x);
    Ok(match model.kind {
        ModelKind::Linear => z,
        _ => sigmoid(z),
    })
}

pub fn loss_mean(model: &Model, data: &Dataset) -> Result<f64> {
    ensure_len(model.input_dim, data.dim())?;
    let total: f64 = data
        .features
        .iter()
        .zip(&data.labels)
        .map(|(x, &y)| model.loss_and_dz(model.raw_output(x), y).0)
        .sum();
    let loss = total / data.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(loss)
}

/// Analytic gradient of [`loss_mean`] with respect to the parameters.
pub fn grad_params(model: &Model, data: &Dataset) -> Result<Vector> {
    ensure_len(model.input_dim, data.dim())?;
    let mut out = vec![0.0; model.params.len()];
    let scale = 1.0 / data.len() as f64;
    for (x, &y) in data.features.iter().zip(&data.labels) {
        model.sample_param_grad(x, y, &mut out, scale);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    Ok(out)
}

/// Gradient of the single-sample loss with respect to the input `x`.
pub fn grad_inputs(model: &Model, x: &[f64], y: f64) -> Result<Vector> {
    model.check_input(x)?;
    let (_, dz) = model.loss_and_dz(model.raw_output(x), y);
    Ok(model
        .output_input_grad(x)
        .into_iter()
        .map(|g| g * dz)
        .collect())
}

/// Central-difference gradient estimate of `f` at `point`.
pub fn finite_diff_grad<F>(f: F, point: &[f64], h: f64) -> Result<Vector>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("function value at coordinate {i}")));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

pub fn gd_step(params: &[f64], grad: &[f64], lr: f64) -> Result<Vector> {
    ensure_len(params.len(), grad.len())?;
    if !(lr >= 0.0) {
        return Err(Error::invalid("learning rate must be non-negative"));
    }
    Ok(params.iter().zip(grad).map(|(p, g)| p - lr * g).collect())
}

/// Pushes `delta` onto or beyond the sphere of radius `eps1`.
///
/// A zero `delta` has no direction, so `fallback` (a unit vector) is used.
pub fn project_outside_ball(delta: &[f64], eps1: f64, fallback: &[f64]) -> Result<Vector> {
    if !(eps1 >= 0.0) {
        return Err(Error::invalid("exterior radius must be non-negative"));
    }
    ensure_len(delta.len(), fallback.len())?;
    let n = norm(delta);
    if n >= eps1 {
        return Ok(delta.to_vec());
    }
    if n == 0.0 {
        return Ok(fallback.iter().map(|v| v * eps1).collect());
    }
    let s = eps1 / n;
    Ok(delta.iter().map(|v| v * s).collect())
}

pub fn project_inside_ball(delta: &[f64], eps: f64) -> Result<Vector> {
    if !(eps >= 0.0) {
        return Err(Error::invalid("interior radius must be non-negative"));
    }
    let n = norm(delta);
    if n <= eps {
        return Ok(delta.to_vec());
    }
    let s = eps / n;
    Ok(delta.iter().map(|v| v * s).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
