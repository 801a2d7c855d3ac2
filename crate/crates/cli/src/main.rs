use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fl_tradeoff::harness::{self, load_config, RunOptions, ScenarioConfig};

#[derive(Parser)]
#[command(name = "fl-tradeoff", version, about = "Privacy-utility experiments for federated learning")]
struct Cli {
    /// Overrides the config's master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Strict {
    /// Exit with status 3 when a gated bound is violated.
    #[arg(long)]
    verify: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train, attack and measure one scenario.
    Run {
        config: PathBuf,
        #[command(flatten)]
        strict: Strict,
    },
    /// Repeat a scenario over a grid of distortion radii.
    Sweep {
        config: PathBuf,
        /// Comma separated radii, e.g. 0,0.5,1,2.
        #[arg(long, value_delimiter = ',', required = true)]
        eps1: Vec<f64>,
        #[command(flatten)]
        strict: Strict,
    },
    /// Exact checks of the divergence bounds and trade-off inequalities on finite worlds.
    VerifyBayes { config: PathBuf },
    /// Fit the attack regret and distance constants per attacked round.
    FitConstants { config: PathBuf },
}

enum Outcome {
    Ok,
    Violations(usize),
}

fn load(path: &Path, cli: &Cli) -> fl_tradeoff::Result<(ScenarioConfig, PathBuf)> {
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn execute(cli: &Cli) -> fl_tradeoff::Result<Outcome> {
    if cli.jobs == 0 {
        return Err(fl_tradeoff::Error::config("jobs", "must be at least 1"));
    }
    let opts = RunOptions { jobs: cli.jobs };
    match &cli.command {
        Command::Run { config, strict } => {
            let (cfg, out) = load(config, cli)?;
            let s = harness::run_to_dir(&cfg, opts, &out)?;
            println!(
                "{}: {} rows, mean eps_p {:.4}, mean eps_u {:.4}, {} bound violations -> {}",
                s.scenario,
                s.rows,
                s.mean_eps_p,
                s.mean_eps_u,
                s.bound_violations,
                out.display()
            );
            Ok(gate(strict.verify, s.bound_violations))
        }
        Command::Sweep { config, eps1, strict } => {
            let (cfg, out) = load(config, cli)?;
            let s = harness::sweep_to_dir(&cfg, eps1, opts, &out)?;
            println!("eps1\tmean_eps_p\tmean_eps_u");
            for row in s.frontier.iter().flatten() {
                println!("{}\t{:.4}\t{:.4}", row.eps1, row.mean_eps_p, row.mean_eps_u);
            }
            println!("{} bound violations -> {}", s.bound_violations, out.display());
            Ok(gate(strict.verify, s.bound_violations))
        }
        Command::VerifyBayes { config } => {
            let (cfg, out) = load(config, cli)?;
            let s = harness::verify_to_dir(&cfg, opts, &out)?;
            for (name, t) in &s.checks {
                let tag = if t.gating { "" } else { " (informational)" };
                println!("{name}: {}/{} hold{tag}", t.evaluated - t.violations, t.evaluated);
            }
            println!(
                "{} entries, {} gated violations, {} assumption flags -> {}",
                s.entries,
                s.violations,
                s.assumption_flags,
                out.display()
            );
            Ok(gate(true, s.violations))
        }
        Command::FitConstants { config } => {
            let (cfg, out) = load(config, cli)?;
            let s = harness::fit_constants_to_dir(&cfg, opts, &out)?;
            println!("{} rows, {} failed fits -> {}", s.rows, s.failed_fits, out.display());
            Ok(Outcome::Ok)
        }
    }
}

fn gate(strict: bool, violations: usize) -> Outcome {
    if strict && violations > 0 {
        Outcome::Violations(violations)
    } else {
        Outcome::Ok
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violations(n)) => {
            eprintln!("error: {n} bound violations");
            ExitCode::from(3)
        }
        Err(e) => {
            let code = if e.is_config_error() { 2 } else { 1 };
            eprintln!("error: {:#}", anyhow::Error::new(e));
            ExitCode::from(code)
        }
    }
}
