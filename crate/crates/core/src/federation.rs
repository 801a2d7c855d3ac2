//! Synchronous FedAvg over in-memory clients.
//!
//! Each round broadcasts the global parameters, lets a [`DistortionHook`]
//! rewrite every client's training data, runs full-batch local gradient
//! descent and averages the updates with uniform weights.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::numerics::{gd_step, grad_params, loss_mean, norm, Dataset, Model, ModelKind, Vector};
use crate::seed::{derive_seed, rng};

pub const MAX_CLIENTS: usize = 64;
pub const MAX_DIM: usize = 64;
pub const MAX_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_clients: usize,
    pub samples_per_client: usize,
    pub input_dim: usize,
    pub task: Task,
    pub separation: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.n_clients > MAX_CLIENTS {
            return Err(Error::config("n_clients", format!("must be in 1..={MAX_CLIENTS}")));
        }
        if self.samples_per_client == 0 || self.samples_per_client > MAX_SAMPLES {
            return Err(Error::config(
                "samples_per_client",
                format!("must be in 1..={MAX_SAMPLES}"),
            ));
        }
        if self.input_dim == 0 || self.input_dim > MAX_DIM {
            return Err(Error::config("input_dim", format!("must be in 1..={MAX_DIM}")));
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return Err(Error::config("separation", "must be finite and non-negative"));
        }
        Ok(())
    }
}

const REGRESSION_NOISE: f64 = 0.1;
const BLOB_SIGMA: f64 = 0.15;

/// Per-client synthetic datasets with features in `[0, 1]^d`.
///
/// Regression targets are `separation * w.x + b + noise` for a ground truth
/// `(w, b)` shared by all clients. Binary data are two Gaussian blobs centred
/// at `0.5 -/+ separation/2` along a shared unit direction.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let d = spec.input_dim;
    let mut truth = rng(derive_seed(seed, "truth", 0));
    let direction: Vec<f64> = (0..d).map(|_| truth.sample(StandardNormal)).collect();
    let bias: f64 = truth.sample(StandardNormal);
    let unit = {
        let n = norm(&direction).max(1e-12);
        direction.iter().map(|v| v / n).collect::<Vec<_>>()
    };
    let noise = Normal::new(0.0, REGRESSION_NOISE).expect("finite sigma");
    let blob = Normal::new(0.0, BLOB_SIGMA).expect("finite sigma");

    (0..spec.n_clients)
        .map(|k| {
            let mut r = rng(derive_seed(seed, "client_data", k as u64));
            let mut features = Vec::with_capacity(spec.samples_per_client);
            let mut labels = Vec::with_capacity(spec.samples_per_client);
            for _ in 0..spec.samples_per_client {
                match spec.task {
                    Task::Regression => {
                        let x: Vec<f64> = (0..d).map(|_| r.gen::<f64>()).collect();
                        let y = spec.separation * crate::numerics::dot(&direction, &x)
                            + bias
                            + noise.sample(&mut r);
                        features.push(x);
                        labels.push(y);
                    }
                    Task::Binary => {
                        let label = if r.gen_bool(0.5) { 1.0 } else { 0.0 };
                        let offset = (label - 0.5) * spec.separation;
                        let x = unit
                            .iter()
                            .map(|u| 0.5 + offset * u + blob.sample(&mut r))
                            .collect();
                        features.push(x);
                        labels.push(label);
                    }
                }
            }
            Dataset::new(features, labels)
        })
        .collect()
}

/// Zero parameters for the convex models; small seeded weights for the
/// perceptron so its hidden units are not symmetric.
pub fn init_model(kind: ModelKind, input_dim: usize, hidden: usize, seed: u64) -> Result<Model> {
    match kind {
        ModelKind::Linear | ModelKind::Logistic => Model::zeros(kind, input_dim, hidden),
        ModelKind::Mlp => {
            let mut r = rng(derive_seed(seed, "model_init", 0));
            let n = Model::param_len(kind, input_dim, hidden);
            let w = Normal::new(0.0, 0.5).expect("finite sigma");
            Model::new(kind, input_dim, hidden, (0..n).map(|_| w.sample(&mut r)).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub dataset: Dataset,
    pub distorted: Option<Dataset>,
    pub local_params: Vector,
}

impl ClientState {
    /// The data local training sees.
    pub fn training_data(&self) -> &Dataset {
        self.distorted.as_ref().unwrap_or(&self.dataset)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationState {
    pub global: Model,
    pub clients: Vec<ClientState>,
    pub round_index: usize,
    pub rng_seed: u64,
}

impl FederationState {
    pub fn new(global: Model, datasets: Vec<Dataset>, rng_seed: u64) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::invalid("federation needs at least one client"));
        }
        for data in &datasets {
            ensure_len(global.input_dim(), data.dim())?;
        }
        let clients = datasets
            .into_iter()
            .enumerate()
            .map(|(id, dataset)| ClientState {
                id,
                dataset,
                distorted: None,
                local_params: global.params().to_vec(),
            })
            .collect();
        Ok(Self {
            global,
            clients,
            round_index: 0,
            rng_seed,
        })
    }

    /// Mean clean-data loss of the global model across clients.
    pub fn clean_loss(&self) -> Result<f64> {
        clean_loss(&self.global, &self.clients)
    }
}

fn clean_loss(model: &Model, clients: &[ClientState]) -> Result<f64> {
    let mut total = 0.0;
    for c in clients {
        total += loss_mean(model, &c.dataset)?;
    }
    Ok(total / clients.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

/// Rewrites a client's clean data before local training.
pub trait DistortionHook: Sync {
    /// `None` leaves the client on its clean data.
    fn distort(&self, global: &Model, client: usize, round: usize, clean: &Dataset) -> Result<Option<Dataset>>;
}

pub struct IdentityHook;

impl DistortionHook for IdentityHook {
    fn distort(&self, _: &Model, _: usize, _: usize, _: &Dataset) -> Result<Option<Dataset>> {
        Ok(None)
    }
}

/// `epochs` full-batch gradient steps from `global`; returns `theta_k - theta`.
pub fn local_train(global: &Model, data: &Dataset, epochs: usize, lr: f64) -> Result<Vector> {
    if epochs == 0 {
        return Err(Error::invalid("epochs must be at least 1"));
    }
    let mut model = global.clone();
    for _ in 0..epochs {
        let g = grad_params(&model, data)?;
        model = model.with_params(gd_step(model.params(), &g, lr)?)?;
    }
    Ok(model
        .params()
        .iter()
        .zip(global.params())
        .map(|(a, b)| a - b)
        .collect())
}

/// `theta + mean(updates)`.
pub fn aggregate(theta: &[f64], updates: &[Vector]) -> Result<Vector> {
    if updates.is_empty() {
        return Err(Error::invalid("no updates to aggregate"));
    }
    let mut out = theta.to_vec();
    let k = updates.len() as f64;
    for u in updates {
        ensure_len(theta.len(), u.len())?;
        for (o, v) in out.iter_mut().zip(u) {
            *o += v / k;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round_index: usize,
    /// Parameters broadcast at the start of the round.
    pub broadcast: Vector,
    pub global_params: Vector,
    pub updates: Vec<Vector>,
    pub clean_loss: f64,
}

/// One FedAvg round. Clients run in parallel on the current rayon pool; the
/// update list keeps client order, so the result does not depend on
/// scheduling.
pub fn run_round(
    state: &FederationState,
    train: &TrainConfig,
    hook: &dyn DistortionHook,
) -> Result<(FederationState, RoundRecord)> {
    let global = &state.global;
    let round = state.round_index;
    let results: Vec<Result<(Option<Dataset>, Vector)>> = state
        .clients
        .par_iter()
        .map(|c| {
            let distorted = hook.distort(global, c.id, round, &c.dataset)?;
            if let Some(d) = &distorted {
                c.dataset.same_shape(d)?;
            }
            let data = distorted.as_ref().unwrap_or(&c.dataset);
            let update = local_train(global, data, train.epochs, train.lr)?;
            Ok((distorted, update))
        })
        .collect();

    let mut clients = Vec::with_capacity(state.clients.len());
    let mut updates = Vec::with_capacity(state.clients.len());
    for (c, r) in state.clients.iter().zip(results) {
        let (distorted, update) = r?;
        let local_params = global.params().iter().zip(&update).map(|(a, b)| a + b).collect();
        clients.push(ClientState {
            id: c.id,
            dataset: c.dataset.clone(),
            distorted,
            local_params,
        });
        updates.push(update);
    }
    let next = global.with_params(aggregate(global.params(), &updates)?)?;
    let loss = clean_loss(&next, &clients)?;
    let record = RoundRecord {
        round_index: round,
        broadcast: global.params().to_vec(),
        global_params: next.params().to_vec(),
        updates,
        clean_loss: loss,
    };
    Ok((
        FederationState {
            global: next,
            clients,
            round_index: round + 1,
            rng_seed: state.rng_seed,
        },
        record,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct History {
    pub initial_loss: f64,
    pub rounds: Vec<RoundRecord>,
}

pub fn run_federation(
    state: FederationState,
    rounds: usize,
    train: &TrainConfig,
    hook: &dyn DistortionHook,
) -> Result<(FederationState, History)> {
    if rounds == 0 {
        return Err(Error::invalid("rounds must be at least 1"));
    }
    let initial_loss = state.clean_loss()?;
    let mut state = state;
    let mut records = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let (next, record) = run_round(&state, train, hook)?;
        state = next;
        records.push(record);
    }
    Ok((
        state,
        History {
            initial_loss,
            rounds: records,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(task: Task, k: usize, n: usize) -> SyntheticSpec {
        SyntheticSpec {
            n_clients: k,
            samples_per_client: n,
            input_dim: 3,
            task,
            separation: 1.0,
        }
    }

    #[test]
    fn synthetic_shapes_and_determinism() {
        let s = spec(Task::Binary, 3, 5);
        let a = generate_synthetic(&s, 11).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|d| d.len() == 5 && d.dim() == 3));
        assert_eq!(a, generate_synthetic(&s, 11).unwrap());
        assert_ne!(a, generate_synthetic(&s, 12).unwrap());
        for d in &a {
            assert!(d.features().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            assert!(d.labels().iter().all(|&y| y == 0.0 || y == 1.0));
        }
        assert!(generate_synthetic(&spec(Task::Regression, 0, 5), 1).is_err());
    }

    #[test]
    fn zero_separation_labels_carry_no_signal() {
        let mut s = spec(Task::Binary, 1, 4000);
        s.separation = 0.0;
        let data = &generate_synthetic(&s, 5).unwrap()[0];
        let mean = |label: f64| {
            let rows: Vec<_> = data
                .features()
                .iter()
                .zip(data.labels())
                .filter(|(_, &y)| y == label)
                .map(|(x, _)| x[0])
                .collect();
            rows.iter().sum::<f64>() / rows.len() as f64
        };
        assert!((mean(0.0) - mean(1.0)).abs() < 0.02);
    }

    #[test]
    fn local_train_examples() {
        let data = generate_synthetic(&spec(Task::Regression, 1, 8), 3).unwrap().remove(0);
        let model = Model::new(ModelKind::Linear, 3, 0, vec![0.1, -0.2, 0.3, 0.05]).unwrap();
        let u = local_train(&model, &data, 5, 0.0).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));

        let g = grad_params(&model, &data).unwrap();
        let u = local_train(&model, &data, 1, 0.1).unwrap();
        for (a, b) in u.iter().zip(&g) {
            assert!((a + 0.1 * b).abs() < 1e-15);
        }

        // Train to optimality, then one more epoch barely moves.
        let mut m = Model::zeros(ModelKind::Linear, 3, 0).unwrap();
        for _ in 0..200 {
            let u = local_train(&m, &data, 50, 0.3).unwrap();
            m = m.with_params(m.params().iter().zip(&u).map(|(a, b)| a + b).collect()).unwrap();
        }
        let u = local_train(&m, &data, 1, 0.3).unwrap();
        assert!(norm(&u) <= 1e-6);
    }

    #[test]
    fn aggregate_examples() {
        let theta = vec![1.0, 2.0];
        assert_eq!(aggregate(&theta, &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(), theta);
        assert_eq!(aggregate(&theta, &[vec![0.5, 1.0], vec![0.5, 1.0]]).unwrap(), vec![1.5, 3.0]);
        assert_eq!(aggregate(&theta, &[vec![0.5, 1.0], vec![-0.5, -1.0]]).unwrap(), theta);
        assert!(aggregate(&theta, &[]).is_err());
        assert!(aggregate(&theta, &[vec![1.0]]).is_err());
    }

    #[test]
    fn round_examples() {
        let data = generate_synthetic(&spec(Task::Regression, 3, 4), 8).unwrap();
        let model = Model::zeros(ModelKind::Linear, 3, 0).unwrap();
        let state = FederationState::new(model.clone(), data.clone(), 8).unwrap();
        let frozen = TrainConfig { epochs: 2, lr: 0.0 };
        let (next, _) = run_round(&state, &frozen, &IdentityHook).unwrap();
        assert_eq!(next.global, state.global);
        assert_eq!(next.round_index, 1);

        let single = FederationState::new(model.clone(), vec![data[0].clone()], 8).unwrap();
        let train = TrainConfig { epochs: 2, lr: 0.1 };
        let (next, record) = run_round(&single, &train, &IdentityHook).unwrap();
        let expected = local_train(&model, &data[0], 2, 0.1).unwrap();
        assert_eq!(record.updates[0], expected);
        assert_eq!(next.global.params(), expected.as_slice());
    }

    #[test]
    fn convex_training_lowers_loss() {
        for seed in 0..10 {
            for (task, kind) in [(Task::Regression, ModelKind::Linear), (Task::Binary, ModelKind::Logistic)] {
                let data = generate_synthetic(&spec(task, 4, 8), seed).unwrap();
                let model = Model::zeros(kind, 3, 0).unwrap();
                let state = FederationState::new(model, data, seed).unwrap();
                let train = TrainConfig { epochs: 1, lr: 0.1 };
                let (_, history) = run_federation(state.clone(), 200, &train, &IdentityHook).unwrap();
                assert_eq!(history.rounds.len(), 200);
                let last = history.rounds.last().unwrap().clean_loss;
                assert!(last < history.initial_loss - 1e-3, "seed {seed} {kind:?}");
                let (_, again) = run_federation(state, 200, &train, &IdentityHook).unwrap();
                assert_eq!(serde_json::to_string(&history).unwrap(), serde_json::to_string(&again).unwrap());
            }
        }
    }

    #[test]
    fn single_round_history() {
        let data = generate_synthetic(&spec(Task::Binary, 2, 3), 1).unwrap();
        let model = init_model(ModelKind::Mlp, 3, 4, 1).unwrap();
        let state = FederationState::new(model, data, 1).unwrap();
        let train = TrainConfig { epochs: 1, lr: 0.1 };
        let (end, h) = run_federation(state.clone(), 1, &train, &IdentityHook).unwrap();
        assert_eq!(h.rounds.len(), 1);
        assert_eq!(end.round_index, 1);
        assert!(run_federation(state, 0, &train, &IdentityHook).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant_and_linear(
            updates in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6),
            c in -3.0f64..3.0,
        ) {
            let theta = vec![0.5, -0.5, 1.0];
            let base = aggregate(&theta, &updates).unwrap();
            let mut rev = updates.clone();
            rev.reverse();
            let flipped = aggregate(&theta, &rev).unwrap();
            for (a, b) in base.iter().zip(&flipped) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let scaled: Vec<Vector> = updates.iter().map(|u| u.iter().map(|v| c * v).collect()).collect();
            let got = aggregate(&theta, &scaled).unwrap();
            for (i, g) in got.iter().enumerate() {
                let mean = updates.iter().map(|u| u[i]).sum::<f64>() / updates.len() as f64;
                prop_assert!((g - (theta[i] + c * mean)).abs() < 1e-9);
            }
        }
    }
}
