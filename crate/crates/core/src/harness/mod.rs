//! Experiment orchestration and report files.
//!
//! Every command writes into one output directory:
//!
//! | command | files |
//! |---------|-------|
//! | run | `metrics.csv`, `summary.json` |
//! | sweep | `metrics.csv`, `frontier.csv`, `summary.json` |
//! | verify-bayes | `verify.csv`, `verify_summary.json` |
//! | fit-constants | `constants.csv`, `summary.json` |

pub mod config;
pub mod output;
pub mod scenario;
pub mod verify;

use std::fs;
use std::path::Path;

pub use config::{load_config, parse_config, ScenarioConfig};
pub use scenario::{
    run_scenario, sweep_frontier, Frontier, FrontierRow, MetricsRecord, RunOptions, RunSummary, ScenarioRun,
};
pub use verify::{verify_bayes_suite, CheckRow, VerifyReport, VerifySummary};

use crate::error::Result;
use output::{write_csv, write_json, METRICS_HEADER, METRICS_SCHEMA};

fn metrics_rows(run: &ScenarioRun) -> Vec<Vec<String>> {
    run.records.iter().map(|r| r.csv_row()).collect()
}

pub fn run_to_dir(cfg: &ScenarioConfig, opts: RunOptions, out: &Path) -> Result<RunSummary> {
    let run = run_scenario(cfg, opts)?;
    fs::create_dir_all(out)?;
    write_csv(&out.join("metrics.csv"), METRICS_SCHEMA, METRICS_HEADER, &metrics_rows(&run))?;
    let summary = scenario::summarize(&run, None);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn sweep_to_dir(cfg: &ScenarioConfig, grid: &[f64], opts: RunOptions, out: &Path) -> Result<RunSummary> {
    let frontier = sweep_frontier(cfg, grid, opts)?;
    fs::create_dir_all(out)?;
    write_csv(&out.join("metrics.csv"), METRICS_SCHEMA, METRICS_HEADER, &metrics_rows(&frontier.run))?;
    let rows: Vec<_> = frontier.rows.iter().map(|r| r.csv_row()).collect();
    write_csv(
        &out.join("frontier.csv"),
        scenario::FRONTIER_SCHEMA,
        scenario::FRONTIER_HEADER,
        &rows,
    )?;
    let summary = scenario::summarize(&frontier.run, Some(&frontier.rows));
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn verify_to_dir(cfg: &ScenarioConfig, opts: RunOptions, out: &Path) -> Result<VerifySummary> {
    let report = verify_bayes_suite(cfg, opts)?;
    fs::create_dir_all(out)?;
    let rows: Vec<_> = report.rows.iter().map(|r| r.csv_row()).collect();
    write_csv(&out.join("verify.csv"), verify::VERIFY_SCHEMA, verify::VERIFY_HEADER, &rows)?;
    write_json(&out.join("verify_summary.json"), &report.summary)?;
    Ok(report.summary)
}

pub fn fit_constants_to_dir(cfg: &ScenarioConfig, opts: RunOptions, out: &Path) -> Result<RunSummary> {
    let run = run_scenario(cfg, opts)?;
    fs::create_dir_all(out)?;
    write_csv(
        &out.join("constants.csv"),
        scenario::CONSTANTS_SCHEMA,
        scenario::CONSTANTS_HEADER,
        &scenario::constants_rows(&run),
    )?;
    let summary = scenario::summarize(&run, None);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
