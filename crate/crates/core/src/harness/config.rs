//! Scenario files.
//!
//! A scenario is a TOML document. Unknown keys are rejected everywhere.
//! Omitted keys take these defaults:
//!
//! | key | default |
//! |-----|---------|
//! | `master_seed` | `0` |
//! | `seeds` | `10` |
//! | `task.model` | `"linear"` |
//! | `task.kind` | `"regression"` for `linear`, `"binary"` otherwise |
//! | `task.hidden` | `8` for `mlp`, `0` otherwise |
//! | `task.input_dim` | `4` |
//! | `task.separation` | `1.0` |
//! | `federation.n_clients` | `8` |
//! | `federation.samples_per_client` | `1` |
//! | `federation.rounds` | `20` |
//! | `federation.epochs` | `1` |
//! | `federation.lr` | `0.1` |
//! | `distortion.mode` | `"identity"` |
//! | `distortion.inner_steps` / `inner_lr` | `20` / `0.1` |
//! | `attack.iters` | `500` |
//! | `attack.lr` | `0.1` |
//! | `attack.normalize` | `true` |
//! | `attack.target_client` | `0` |
//! | `attack.rounds` | every round |
//! | `attack.budget` | `0.5` |
//! | `bayes.corpus_size` | `500` |
//! | `bayes.alphas` | `[0.1, 0.25, 0.5, 0.75, 0.9]` |
//! | `bayes.corpus` | `"random"` |
//! | `output.dir` | `"out"` |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::bayesian_privacy::corpus::DEFAULT_ALPHAS;
use crate::bayesian_privacy::{FiniteWorld, ProtectionPair};
use crate::distort::{DistortionPlan, Mode};
use crate::error::{Error, Result};
use crate::federation::{SyntheticSpec, Task, TrainConfig, MAX_CLIENTS, MAX_DIM, MAX_SAMPLES};
use crate::numerics::{ModelKind, MAX_HIDDEN};

pub const MAX_SEEDS: usize = 1000;
pub const MAX_ROUNDS: usize = 10_000;
pub const MAX_ATTACK_ITERS: usize = 100_000;
pub const MAX_CORPUS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "defaults::seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default = "DistortionPlan::identity")]
    pub distortion: DistortionPlan,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub bayes: BayesSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    #[serde(default = "defaults::model")]
    pub model: ModelKind,
    #[serde(default)]
    pub kind: Option<Task>,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default = "defaults::input_dim")]
    pub input_dim: usize,
    #[serde(default = "defaults::separation")]
    pub separation: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            model: defaults::model(),
            kind: None,
            hidden: None,
            input_dim: defaults::input_dim(),
            separation: defaults::separation(),
        }
    }
}

impl TaskSection {
    pub fn task(&self) -> Task {
        self.kind.unwrap_or(match self.model {
            ModelKind::Linear => Task::Regression,
            _ => Task::Binary,
        })
    }

    pub fn hidden(&self) -> usize {
        match self.model {
            ModelKind::Mlp => self.hidden.unwrap_or(8),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    #[serde(default = "defaults::n_clients")]
    pub n_clients: usize,
    #[serde(default = "defaults::samples_per_client")]
    pub samples_per_client: usize,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
}

impl Default for FederationSection {
    fn default() -> Self {
        Self {
            n_clients: defaults::n_clients(),
            samples_per_client: defaults::samples_per_client(),
            rounds: defaults::rounds(),
            epochs: defaults::epochs(),
            lr: defaults::lr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default = "defaults::attack_iters")]
    pub iters: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::yes")]
    pub normalize: bool,
    #[serde(default)]
    pub target_client: usize,
    /// Rounds to attack; every round when absent.
    #[serde(default)]
    pub rounds: Option<Vec<usize>>,
    /// Leakage budget for the exterior-radius threshold column.
    #[serde(default = "defaults::budget")]
    pub budget: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            iters: defaults::attack_iters(),
            lr: defaults::lr(),
            normalize: true,
            target_client: 0,
            rounds: None,
            budget: defaults::budget(),
        }
    }
}

impl AttackSection {
    pub fn config(&self) -> AttackConfig {
        AttackConfig {
            iters: self.iters,
            lr: self.lr,
            normalize: self.normalize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Random,
    /// Random worlds with `p_o = p_d` for every client.
    Trivial,
}

/// One explicitly listed verification entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldEntry {
    pub alpha: f64,
    pub worlds: Vec<FiniteWorld>,
    pub pairs: Vec<ProtectionPair>,
    /// Uniform mixture of `pairs` when absent.
    #[serde(default)]
    pub aggregated: Option<ProtectionPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesSection {
    #[serde(default = "defaults::corpus_size")]
    pub corpus_size: usize,
    #[serde(default = "defaults::alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "defaults::corpus")]
    pub corpus: CorpusKind,
    /// Explicit entries verified in addition to the generated corpus.
    #[serde(default)]
    pub entries: Vec<WorldEntry>,
}

impl Default for BayesSection {
    fn default() -> Self {
        Self {
            corpus_size: defaults::corpus_size(),
            alphas: defaults::alphas(),
            corpus: defaults::corpus(),
            entries: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "defaults::out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: defaults::out_dir(),
        }
    }
}

mod defaults {
    use super::*;

    pub fn seeds() -> usize {
        10
    }
    pub fn model() -> ModelKind {
        ModelKind::Linear
    }
    pub fn input_dim() -> usize {
        4
    }
    pub fn separation() -> f64 {
        1.0
    }
    pub fn n_clients() -> usize {
        8
    }
    pub fn samples_per_client() -> usize {
        1
    }
    pub fn rounds() -> usize {
        20
    }
    pub fn epochs() -> usize {
        1
    }
    pub fn lr() -> f64 {
        0.1
    }
    pub fn attack_iters() -> usize {
        500
    }
    pub fn yes() -> bool {
        true
    }
    pub fn budget() -> f64 {
        0.5
    }
    pub fn corpus_size() -> usize {
        500
    }
    pub fn alphas() -> Vec<f64> {
        DEFAULT_ALPHAS.to_vec()
    }
    pub fn corpus() -> CorpusKind {
        CorpusKind::Random
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("out")
    }
}

impl ScenarioConfig {
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_clients: self.federation.n_clients,
            samples_per_client: self.federation.samples_per_client,
            input_dim: self.task.input_dim,
            task: self.task.task(),
            separation: self.task.separation,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.federation.epochs,
            lr: self.federation.lr,
        }
    }

    /// Rounds the attacker observes.
    pub fn attacked_rounds(&self) -> Vec<usize> {
        match &self.attack.rounds {
            Some(r) => r.clone(),
            None => (0..self.federation.rounds).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario.trim().is_empty() {
            return Err(Error::config("scenario", "must not be empty"));
        }
        if !self
            .scenario
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::config("scenario", "use letters, digits, `_` or `-`"));
        }
        range("seeds", self.seeds, 1, MAX_SEEDS)?;
        range("input_dim", self.task.input_dim, 1, MAX_DIM)?;
        if let Some(h) = self.task.hidden {
            range("hidden", h, 1, MAX_HIDDEN)?;
        }
        finite_nonneg("separation", self.task.separation)?;
        match (self.task.model, self.task.task()) {
            (ModelKind::Linear, Task::Regression) | (ModelKind::Logistic | ModelKind::Mlp, Task::Binary) => {}
            _ => {
                return Err(Error::config(
                    "task.kind",
                    "linear models need regression data, logistic and mlp need binary data",
                ))
            }
        }
        range("n_clients", self.federation.n_clients, 1, MAX_CLIENTS)?;
        range("samples_per_client", self.federation.samples_per_client, 1, MAX_SAMPLES)?;
        range("rounds", self.federation.rounds, 1, MAX_ROUNDS)?;
        range("epochs", self.federation.epochs, 1, MAX_ROUNDS)?;
        finite_nonneg("federation.lr", self.federation.lr)?;
        self.distortion.validate()?;
        if matches!(self.distortion.mode, Mode::MpcStub | Mode::HeStub) {
            return Err(Error::config("distortion.mode", "mpc_stub and he_stub cannot be executed"));
        }
        range("attack.iters", self.attack.iters, 1, MAX_ATTACK_ITERS)?;
        finite_nonneg("attack.lr", self.attack.lr)?;
        if self.attack.target_client >= self.federation.n_clients {
            return Err(Error::config("attack.target_client", "must index an existing client"));
        }
        if let Some(rounds) = &self.attack.rounds {
            if rounds.is_empty() {
                return Err(Error::config("attack.rounds", "must not be empty"));
            }
            if rounds.iter().any(|&r| r >= self.federation.rounds) {
                return Err(Error::config("attack.rounds", "every round must be below federation.rounds"));
            }
            let mut sorted = rounds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != rounds.len() {
                return Err(Error::config("attack.rounds", "duplicate round"));
            }
        }
        if !(0.0..=1.0).contains(&self.attack.budget) {
            return Err(Error::config("attack.budget", "must lie in [0, 1]"));
        }
        range("bayes.corpus_size", self.bayes.corpus_size, 0, MAX_CORPUS)?;
        if self.bayes.corpus_size == 0 && self.bayes.entries.is_empty() {
            return Err(Error::config("bayes.corpus_size", "corpus must contain at least one entry"));
        }
        if self.bayes.alphas.is_empty() {
            return Err(Error::config("bayes.alphas", "must not be empty"));
        }
        for &a in self.bayes.alphas.iter().chain(self.bayes.entries.iter().map(|e| &e.alpha)) {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config("bayes.alphas", "every alpha must lie in [0, 1]"));
            }
        }
        for (i, e) in self.bayes.entries.iter().enumerate() {
            if e.worlds.is_empty() || e.worlds.len() != e.pairs.len() {
                return Err(Error::config(
                    format!("bayes.entries[{i}]"),
                    "needs one pair per world and at least one world",
                ));
            }
        }
        Ok(())
    }
}

fn range(field: &str, v: usize, lo: usize, hi: usize) -> Result<()> {
    if v < lo || v > hi {
        Err(Error::config(field, format!("must be in {lo}..={hi}, got {v}")))
    } else {
        Ok(())
    }
}

fn finite_nonneg(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, "must be finite and non-negative"))
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    // An unreadable scenario file is a configuration problem, not a run failure.
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| e.context(path.display().to_string()))
}
