//! End-to-end runs: federate, distort, attack, score.

use rayon::prelude::*;
use serde::Serialize;

use super::config::ScenarioConfig;
use super::output::{format_flag, format_g, format_opt};
use crate::attack::{
    distortion_extent, epsilon1_threshold, fit_constants, invert, leakage_upper_bound, privacy_leakage_empirical,
    AttackTrace, EmpiricalConstants,
};
use crate::distort::{utility_loss_empirical, DistortedBatch, Mode, PlanHook};
use crate::error::{Error, Result};
use crate::federation::{generate_synthetic, init_model, run_federation, FederationState, IdentityHook};
use crate::numerics::{grad_params, Dataset, Model};
use crate::seed::{derive_path, derive_seed};

/// Slack allowed between measured leakage and its bound when counting
/// violations.
pub const BOUND_TOLERANCE: f64 = 0.05;
const PROBES_PER_RUN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1 }
    }
}

pub(crate) fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub scenario: String,
    pub seed: usize,
    pub eps1: f64,
    pub round: usize,
    pub eps_p: f64,
    /// Leakage before clamping to `[0, 1]`.
    pub eps_p_raw: f64,
    /// Clean-data loss of the protected global model minus that of the
    /// unprotected model trained from the same seed, after this round.
    pub eps_u: f64,
    /// Loss of the broadcast model on the target's distorted inputs minus its
    /// loss on the clean inputs.
    pub eps_u_inputs: f64,
    pub delta_extent: f64,
    /// Extent between the attack's final iterate and the clean data.
    pub final_iterate_extent: f64,
    pub final_mismatch: f64,
    pub leak_bound: Option<f64>,
    pub gate: Option<bool>,
    pub constants: Option<EmpiricalConstants>,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> Vec<String> {
        let c = self.constants.as_ref();
        vec![
            self.scenario.clone(),
            self.seed.to_string(),
            format_g(self.eps1),
            self.round.to_string(),
            format_g(self.eps_p),
            format_g(self.eps_u),
            format_g(self.delta_extent),
            format_opt(self.leak_bound),
            format_flag(self.gate),
            format_opt(c.map(|c| c.c2)),
            format_opt(c.map(|c| c.c_b)),
            format_opt(c.map(|c| c.p)),
        ]
    }

    pub fn bound_violated(&self) -> bool {
        matches!((self.gate, self.leak_bound), (Some(true), Some(b)) if self.eps_p > b + BOUND_TOLERANCE)
    }
}

fn sort_records(records: &mut [MetricsRecord]) {
    records.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(a.eps1.total_cmp(&b.eps1))
            .then(a.round.cmp(&b.round))
    });
}

/// Square-root of the dimension: the diameter of `[0, 1]^d`.
pub fn data_diameter(dim: usize) -> f64 {
    (dim as f64).sqrt()
}

pub fn run_seed_for(cfg: &ScenarioConfig, seed_index: usize) -> Result<Vec<MetricsRecord>> {
    let run_seed = derive_seed(cfg.master_seed, "run", seed_index as u64);
    let datasets = generate_synthetic(&cfg.synthetic_spec(), derive_seed(run_seed, "data", 0))?;
    let model = init_model(cfg.task.model, cfg.task.input_dim, cfg.task.hidden(), derive_seed(run_seed, "init", 0))?;
    let train = cfg.train_config();
    let rounds = cfg.federation.rounds;

    let start = FederationState::new(model, datasets, run_seed)?;
    let (_, baseline) = run_federation(start.clone(), rounds, &train, &IdentityHook)?;
    let mut plan = cfg.distortion.clone();
    plan.seed = derive_seed(run_seed, "distortion", plan.seed);
    let hook = PlanHook::recording(plan)?;
    let (_, protected) = run_federation(start.clone(), rounds, &train, &hook)?;
    let batches = hook.take_record();

    let target = cfg.attack.target_client;
    let clean = &start.clients[target].dataset;
    let diameter = data_diameter(cfg.task.input_dim);
    let attack = cfg.attack.config();
    let template = &start.global;

    cfg.attacked_rounds()
        .into_iter()
        .map(|round| {
            let broadcast = template.with_params(protected.rounds[round].broadcast.clone())?;
            let trained_on = batches
                .get(&(round, target))
                .map(|b: &DistortedBatch| &b.distorted)
                .unwrap_or(clean);
            let observed = grad_params(&broadcast, trained_on)?;
            let trace = invert(
                &broadcast,
                &observed,
                clean.labels(),
                &attack,
                derive_path(run_seed, "attack", &[round as u64]),
            )?;
            let leakage = privacy_leakage_empirical(&trace, clean, diameter)?;
            let extent = distortion_extent(trained_on, clean)?;
            let final_iterate = trace.iterates().last().expect("non-empty trace");
            let constants = run_constants(&broadcast, &trace, trained_on).ok();
            let bound = constants
                .as_ref()
                .map(|c| leakage_upper_bound(extent, trace.len(), c, diameter))
                .transpose()?;
            Ok(MetricsRecord {
                scenario: cfg.scenario.clone(),
                seed: seed_index,
                eps1: cfg.distortion.eps1,
                round,
                eps_p: leakage.eps_p,
                eps_p_raw: leakage.raw,
                eps_u: protected.rounds[round].clean_loss - baseline.rounds[round].clean_loss,
                eps_u_inputs: utility_loss_empirical(&broadcast, clean, trained_on)?,
                delta_extent: extent,
                final_iterate_extent: distortion_extent(final_iterate, clean)?,
                final_mismatch: *trace.mismatch().last().expect("non-empty trace"),
                leak_bound: bound.map(|b| b.value),
                gate: bound.map(|b| b.gate),
                constants,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.context(format!("scenario `{}`, seed {seed_index}", cfg.scenario)))
}

/// Constants from one attack run: its quarter, half and full prefixes, and
/// probes pairing log-spaced iterates with the attacked data.
pub fn run_constants(model: &Model, trace: &AttackTrace, attacked: &Dataset) -> Result<EmpiricalConstants> {
    let n = trace.len();
    let traces = [trace.prefix(n / 4), trace.prefix(n / 2), trace.clone()];
    let mut picks: Vec<usize> = (0..PROBES_PER_RUN)
        .map(|j| {
            let t = j as f64 / (PROBES_PER_RUN - 1) as f64;
            ((n as f64).powf(t).round() as usize).clamp(1, n) - 1
        })
        .collect();
    picks.dedup();
    let probes: Vec<(Dataset, Dataset)> = picks
        .into_iter()
        .map(|i| (trace.iterates()[i].clone(), attacked.clone()))
        .collect();
    fit_constants(&traces, &probes, |d| grad_params(model, d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRun {
    pub scenario: String,
    pub master_seed: u64,
    pub records: Vec<MetricsRecord>,
}

/// Runs every seed of `cfg`; seeds execute in parallel on `opts.jobs`
/// threads and rows come back sorted by `(seed, eps1, round)`.
pub fn run_scenario(cfg: &ScenarioConfig, opts: RunOptions) -> Result<ScenarioRun> {
    cfg.validate()?;
    let pool = pool(opts.jobs)?;
    let per_seed: Vec<Result<Vec<MetricsRecord>>> =
        pool.install(|| (0..cfg.seeds).into_par_iter().map(|s| run_seed_for(cfg, s)).collect());
    let mut records = Vec::new();
    for r in per_seed {
        records.extend(r?);
    }
    sort_records(&mut records);
    Ok(ScenarioRun {
        scenario: cfg.scenario.clone(),
        master_seed: cfg.master_seed,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierRow {
    pub eps1: f64,
    /// Seed mean of the per-seed mean leakage over attacked rounds.
    pub mean_eps_p: f64,
    /// Seed mean of the final attacked round's utility loss.
    pub mean_eps_u: f64,
    pub mean_leak_bound: Option<f64>,
    pub gate_fraction: f64,
    /// Mean exterior radius needed for the configured leakage budget.
    pub eps1_threshold: Option<f64>,
}

pub const FRONTIER_SCHEMA: &str = "fl-tradeoff-frontier/v1";
pub const FRONTIER_HEADER: &str = "eps1,mean_eps_p,mean_eps_u,mean_leak_bound,gate_fraction,eps1_threshold";

impl FrontierRow {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            format_g(self.eps1),
            format_g(self.mean_eps_p),
            format_g(self.mean_eps_u),
            format_opt(self.mean_leak_bound),
            format_g(self.gate_fraction),
            format_opt(self.eps1_threshold),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frontier {
    pub run: ScenarioRun,
    pub rows: Vec<FrontierRow>,
}

/// The scenario with its exterior radius replaced by `eps1`. An identity
/// plan becomes learn-to-distort; other mechanisms have no exterior radius.
pub fn with_eps1(cfg: &ScenarioConfig, eps1: f64) -> Result<ScenarioConfig> {
    let mut out = cfg.clone();
    match out.distortion.mode {
        Mode::LearnToDistort => {}
        Mode::Identity => out.distortion.mode = Mode::LearnToDistort,
        _ => {
            return Err(Error::config(
                "distortion.mode",
                "an eps1 sweep needs learn_to_distort or identity",
            ))
        }
    }
    out.distortion.eps1 = eps1;
    out.validate()?;
    Ok(out)
}

pub fn sweep_frontier(cfg: &ScenarioConfig, grid: &[f64], opts: RunOptions) -> Result<Frontier> {
    if grid.is_empty() {
        return Err(Error::config("eps1", "grid must not be empty"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("eps1", "duplicate grid value"));
    }
    let configs: Vec<ScenarioConfig> = grid.iter().map(|&e| with_eps1(cfg, e)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|g| (0..cfg.seeds).map(move |s| (g, s)))
        .collect();
    let pool = pool(opts.jobs)?;
    let results: Vec<Result<Vec<MetricsRecord>>> =
        pool.install(|| jobs.par_iter().map(|&(g, s)| run_seed_for(&configs[g], s)).collect());
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    sort_records(&mut records);

    let mut rows = Vec::with_capacity(grid.len());
    for c in &configs {
        rows.push(frontier_row(c, &records)?);
    }
    rows.sort_by(|a, b| a.eps1.total_cmp(&b.eps1));
    Ok(Frontier {
        run: ScenarioRun {
            scenario: cfg.scenario.clone(),
            master_seed: cfg.master_seed,
            records,
        },
        rows,
    })
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn frontier_row(cfg: &ScenarioConfig, records: &[MetricsRecord]) -> Result<FrontierRow> {
    let eps1 = cfg.distortion.eps1;
    let rows: Vec<&MetricsRecord> = records.iter().filter(|r| r.eps1 == eps1).collect();
    let last_round = *cfg.attacked_rounds().iter().max().expect("validated non-empty");
    let mut seed_eps_p = Vec::new();
    let mut seed_eps_u = Vec::new();
    for s in 0..cfg.seeds {
        let seed_rows: Vec<&&MetricsRecord> = rows.iter().filter(|r| r.seed == s).collect();
        seed_eps_p.push(mean(seed_rows.iter().map(|r| r.eps_p)).unwrap_or(0.0));
        if let Some(r) = seed_rows.iter().find(|r| r.round == last_round) {
            seed_eps_u.push(r.eps_u);
        }
    }
    let diameter = data_diameter(cfg.task.input_dim);
    let thresholds: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.constants.as_ref())
        .map(|c| epsilon1_threshold(cfg.attack.budget, diameter, c, cfg.attack.iters))
        .collect::<Result<_>>()?;
    Ok(FrontierRow {
        eps1,
        mean_eps_p: mean(seed_eps_p).unwrap_or(0.0),
        mean_eps_u: mean(seed_eps_u).unwrap_or(0.0),
        mean_leak_bound: mean(rows.iter().filter_map(|r| r.leak_bound)),
        gate_fraction: rows.iter().filter(|r| r.gate == Some(true)).count() as f64 / rows.len().max(1) as f64,
        eps1_threshold: mean(thresholds),
    })
}

pub const CONSTANTS_SCHEMA: &str = "fl-tradeoff-constants/v1";
pub const CONSTANTS_HEADER: &str = "scenario,seed,eps1,round,c1,c2,ca,cb,p_exp,regret_r2,probes_used,probes_excluded";

pub fn constants_rows(run: &ScenarioRun) -> Vec<Vec<String>> {
    run.records
        .iter()
        .map(|r| {
            let c = r.constants.as_ref();
            vec![
                r.scenario.clone(),
                r.seed.to_string(),
                format_g(r.eps1),
                r.round.to_string(),
                format_opt(c.map(|c| c.c1)),
                format_opt(c.map(|c| c.c2)),
                format_opt(c.map(|c| c.c_a)),
                format_opt(c.map(|c| c.c_b)),
                format_opt(c.map(|c| c.p)),
                format_opt(c.map(|c| c.diagnostics.regret_r2)),
                c.map(|c| c.diagnostics.probes_used.to_string()).unwrap_or_default(),
                c.map(|c| c.diagnostics.probes_excluded.to_string()).unwrap_or_default(),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema: &'static str,
    pub scenario: String,
    pub master_seed: u64,
    pub rows: usize,
    pub eps1_values: Vec<f64>,
    pub mean_eps_p: f64,
    pub mean_eps_u: f64,
    pub mean_eps_u_inputs: f64,
    pub clamp_events: usize,
    pub gated_rows: usize,
    /// Gated rows whose leakage exceeds the bound by more than the tolerance.
    pub bound_violations: usize,
    pub failed_fits: usize,
    pub frontier: Option<Vec<FrontierRow>>,
}

pub fn summarize(run: &ScenarioRun, frontier: Option<&[FrontierRow]>) -> RunSummary {
    let r = &run.records;
    let mut eps1_values: Vec<f64> = r.iter().map(|x| x.eps1).collect();
    eps1_values.sort_by(f64::total_cmp);
    eps1_values.dedup();
    RunSummary {
        schema: super::output::METRICS_SCHEMA,
        scenario: run.scenario.clone(),
        master_seed: run.master_seed,
        rows: r.len(),
        eps1_values,
        mean_eps_p: mean(r.iter().map(|x| x.eps_p)).unwrap_or(0.0),
        mean_eps_u: mean(r.iter().map(|x| x.eps_u)).unwrap_or(0.0),
        mean_eps_u_inputs: mean(r.iter().map(|x| x.eps_u_inputs)).unwrap_or(0.0),
        clamp_events: r.iter().filter(|x| x.eps_p != x.eps_p_raw).count(),
        gated_rows: r.iter().filter(|x| x.gate == Some(true)).count(),
        bound_violations: r.iter().filter(|x| x.bound_violated()).count(),
        failed_fits: r.iter().filter(|x| x.constants.is_none()).count(),
        frontier: frontier.map(|f| f.to_vec()),
    }
}
