//! Batch verification of the finite-world trade-off checks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{CorpusKind, ScenarioConfig};
use super::output::{format_g, format_opt};
use super::scenario::{pool, RunOptions};
use crate::bayesian_privacy::corpus::{aggregate, generate_corpus, trivial_corpus, CorpusEntry};
use crate::bayesian_privacy::{
    bound_lemma_check, utility_lower_bound_check, verify_tradeoff, LemmaKind, TradeoffKind, TradeoffReport,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const VERIFY_SCHEMA: &str = "fl-tradeoff-verify/v1";
pub const VERIFY_HEADER: &str = "entry,client,alpha,check,lhs,rhs,slack,holds,gating";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub entry: usize,
    pub client: Option<usize>,
    pub alpha: f64,
    pub check: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Counted towards the violation total.
    pub gating: bool,
}

impl CheckRow {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.entry.to_string(),
            self.client.map(|c| c.to_string()).unwrap_or_default(),
            format_g(self.alpha),
            self.check.to_string(),
            format_g(self.lhs),
            format_g(self.rhs),
            format_opt(Some(self.slack()).filter(|s| s.is_finite())),
            if self.holds { "1" } else { "0" }.to_string(),
            if self.gating { "1" } else { "0" }.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CheckTally {
    pub evaluated: usize,
    pub violations: usize,
    pub gating: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySummary {
    pub schema: &'static str,
    pub scenario: String,
    pub entries: usize,
    pub rows: usize,
    /// Violations among gating checks.
    pub violations: usize,
    pub checks: BTreeMap<&'static str, CheckTally>,
    /// Entries inside the utility lower bound's premise.
    pub premise_entries: usize,
    pub assumption_flags: usize,
    pub gamma_undefined: usize,
    /// Entries whose log-ratio leakage is unbounded; their JS checks are skipped.
    pub unbounded_leakage: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
    pub summary: VerifySummary,
}

/// The generated corpus followed by the scenario's explicit entries.
pub fn build_corpus(cfg: &ScenarioConfig) -> Result<Vec<CorpusEntry>> {
    let seed = derive_seed(cfg.master_seed, "bayes", 0);
    let b = &cfg.bayes;
    let mut entries = match b.corpus {
        CorpusKind::Random => generate_corpus(seed, b.corpus_size, &b.alphas)?,
        CorpusKind::Trivial => {
            let mut e = trivial_corpus(seed, b.corpus_size)?;
            for (i, x) in e.iter_mut().enumerate() {
                x.alpha = b.alphas[i % b.alphas.len()];
            }
            e
        }
    };
    let offset = entries.len();
    for (i, e) in b.entries.iter().enumerate() {
        let aggregated = match &e.aggregated {
            Some(a) => a.clone(),
            None => aggregate(&e.pairs)?,
        };
        entries.push(CorpusEntry {
            index: offset + i,
            alpha: e.alpha,
            worlds: e.worlds.clone(),
            pairs: e.pairs.clone(),
            aggregated,
        });
    }
    Ok(entries)
}

#[derive(Default)]
struct EntryOutcome {
    rows: Vec<CheckRow>,
    premise: bool,
    assumption_flag: bool,
    gamma_undefined: bool,
    unbounded: bool,
}

fn tradeoff_rows(entry: &CorpusEntry, report: &TradeoffReport, first: &'static str, names: [&'static str; 2]) -> Vec<CheckRow> {
    let row = |check, lhs, rhs, holds, gating| CheckRow {
        entry: entry.index,
        client: None,
        alpha: entry.alpha,
        check,
        lhs,
        rhs,
        holds,
        gating,
    };
    let mut rows = vec![row(first, report.lhs, report.eps_p_mean + report.bound_term, report.holds, true)];
    if let (Some(w), Some(h)) = (report.eps_p_mean_as_written, report.holds_as_written) {
        rows.push(row("thm2_first_as_written", report.lhs, w + report.bound_term, h, false));
    }
    if let Some(s) = &report.second_form {
        rows.push(row(names[0], s.lhs_main, s.rhs_main, s.holds_main, false));
        rows.push(row(names[1], s.lhs_appendix, s.rhs_appendix, s.holds_appendix, false));
    }
    rows
}

fn verify_entry(entry: &CorpusEntry) -> Result<EntryOutcome> {
    let mut out = EntryOutcome::default();
    let alpha = entry.alpha;
    for (k, (world, pair)) in entry.worlds.iter().zip(&entry.pairs).enumerate() {
        for (kind, name) in [(LemmaKind::Gjsd, "lemma_gjsd"), (LemmaKind::Dtv, "lemma_dtv")] {
            match bound_lemma_check(kind, world, pair, alpha) {
                Ok(c) => out.rows.push(CheckRow {
                    entry: entry.index,
                    client: Some(k),
                    alpha,
                    check: name,
                    lhs: c.lhs,
                    rhs: c.rhs,
                    holds: c.holds,
                    gating: true,
                }),
                Err(Error::UnboundedLeakage { .. }) => out.unbounded = true,
                Err(e) => return Err(e),
            }
        }
    }

    match verify_tradeoff(TradeoffKind::JsAlpha, &entry.worlds, &entry.pairs, &entry.aggregated, alpha) {
        Ok(r) => {
            out.gamma_undefined |= r.gamma.is_none();
            out.assumption_flag |= r.assumption_violated;
            out.rows
                .extend(tradeoff_rows(entry, &r, "thm1_first", ["thm1_second_main", "thm1_second_appendix"]));
        }
        Err(Error::UnboundedLeakage { .. }) => out.unbounded = true,
        Err(e) => return Err(e),
    }
    let r = verify_tradeoff(TradeoffKind::Tv, &entry.worlds, &entry.pairs, &entry.aggregated, alpha)?;
    out.gamma_undefined |= r.gamma.is_none();
    out.assumption_flag |= r.assumption_violated;
    out.rows
        .extend(tradeoff_rows(entry, &r, "thm2_first", ["thm2_second_main", "thm2_second_appendix"]));

    match utility_lower_bound_check(&entry.worlds, &entry.pairs, &entry.aggregated) {
        Ok(c) => {
            out.premise = c.optimal_support;
            out.rows.push(CheckRow {
                entry: entry.index,
                client: None,
                alpha,
                check: if c.optimal_support {
                    "utility_lower_bound"
                } else {
                    "utility_lower_bound_outside_premise"
                },
                lhs: c.lower_bound,
                rhs: c.eps_u,
                holds: c.holds,
                gating: c.optimal_support,
            });
        }
        Err(Error::AssumptionViolated { .. }) => out.assumption_flag = true,
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Runs every check on every corpus entry. Rows keep corpus order.
pub fn verify_bayes_suite(cfg: &ScenarioConfig, opts: RunOptions) -> Result<VerifyReport> {
    let entries = build_corpus(cfg)?;
    verify_entries(&cfg.scenario, &entries, opts)
}

pub fn verify_entries(scenario: &str, entries: &[CorpusEntry], opts: RunOptions) -> Result<VerifyReport> {
    if entries.is_empty() {
        return Err(Error::config("bayes.corpus_size", "corpus must contain at least one entry"));
    }
    let pool = pool(opts.jobs)?;
    let outcomes: Vec<Result<EntryOutcome>> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| verify_entry(e).map_err(|err| err.context(format!("corpus entry {}", e.index))))
            .collect()
    });
    let mut rows = Vec::new();
    let mut checks: BTreeMap<&'static str, CheckTally> = BTreeMap::new();
    let (mut premise, mut flags, mut gamma, mut unbounded) = (0, 0, 0, 0);
    for o in outcomes {
        let o = o?;
        premise += o.premise as usize;
        flags += o.assumption_flag as usize;
        gamma += o.gamma_undefined as usize;
        unbounded += o.unbounded as usize;
        for r in &o.rows {
            let t = checks.entry(r.check).or_default();
            t.evaluated += 1;
            t.violations += (!r.holds) as usize;
            t.gating = r.gating;
        }
        rows.extend(o.rows);
    }
    let violations = rows.iter().filter(|r| r.gating && !r.holds).count();
    Ok(VerifyReport {
        summary: VerifySummary {
            schema: VERIFY_SCHEMA,
            scenario: scenario.to_string(),
            entries: entries.len(),
            rows: rows.len(),
            violations,
            checks,
            premise_entries: premise,
            assumption_flags: flags,
            gamma_undefined: gamma,
            unbounded_leakage: unbounded,
        },
        rows,
    })
}
