use std::fs;
use std::path::PathBuf;

use fl_tradeoff::distort::Mode;
use fl_tradeoff::harness::output::METRICS_HEADER;
use fl_tradeoff::harness::scenario::{run_seed_for, with_eps1};
use fl_tradeoff::harness::{self, load_config, parse_config, run_scenario, sweep_frontier, verify_bayes_suite, RunOptions};

fn configs() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    out.sort();
    out
}

#[test]
fn shipped_configs_validate() {
    let paths = configs();
    assert!(paths.len() >= 4);
    for p in paths {
        let cfg = load_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.validate().unwrap();
    }
}

#[test]
fn classifier_scenarios_emit_complete_rows() {
    for name in ["logistic_distorted", "mlp_gaussian"] {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.toml"));
        let mut cfg = load_config(path).unwrap();
        cfg.seeds = 2;
        let run = run_scenario(&cfg, RunOptions { jobs: 2 }).unwrap();
        assert_eq!(run.records.len(), 2 * cfg.attacked_rounds().len());
        let columns = METRICS_HEADER.split(',').count();
        for r in &run.records {
            let row = r.csv_row();
            assert_eq!(row.len(), columns);
            assert!((0.0..=1.0).contains(&r.eps_p));
            assert!(r.eps_u.is_finite());
            // Both scenarios distort client data.
            assert!(r.delta_extent > 0.0, "{name}: {r:?}");
        }
    }
}

#[test]
fn seed_runs_are_reproducible() {
    let cfg = parse_config("scenario = \"s\"\nseeds = 1\n[federation]\nrounds = 3\n[attack]\niters = 50\n").unwrap();
    let a = run_seed_for(&cfg, 0).unwrap();
    let b = run_seed_for(&cfg, 0).unwrap();
    assert_eq!(a, b);
    let c = run_seed_for(&cfg, 1).unwrap();
    assert_ne!(a[0].eps_p, c[0].eps_p);
}

#[test]
fn sweep_rows_follow_the_grid() {
    let cfg = parse_config("scenario = \"s\"\nseeds = 2\n[federation]\nrounds = 2\n[attack]\niters = 40\n").unwrap();
    let f = sweep_frontier(&cfg, &[1.0, 0.0], RunOptions::default()).unwrap();
    let eps: Vec<f64> = f.rows.iter().map(|r| r.eps1).collect();
    assert_eq!(eps, [0.0, 1.0]);
    assert_eq!(f.run.records.len(), 2 * 2 * 2);
    assert!(sweep_frontier(&cfg, &[], RunOptions::default()).is_err());
    assert!(sweep_frontier(&cfg, &[0.5, 0.5], RunOptions::default()).is_err());
}

#[test]
fn radius_override_only_applies_to_annulus_plans() {
    let cfg = parse_config("scenario = \"s\"").unwrap();
    assert_eq!(with_eps1(&cfg, 0.5).unwrap().distortion.mode, Mode::LearnToDistort);
    let g = parse_config("scenario = \"s\"\n[distortion]\nmode = \"gaussian\"\nsigma2_candidates = [0.01]\n").unwrap();
    assert!(with_eps1(&g, 0.5).unwrap_err().is_config_error());
}

#[test]
fn trivial_corpus_has_no_gated_violations() {
    let cfg = parse_config("scenario = \"t\"\n[bayes]\ncorpus = \"trivial\"\ncorpus_size = 50\n").unwrap();
    let report = verify_bayes_suite(&cfg, RunOptions::default()).unwrap();
    assert_eq!(report.summary.violations, 0);
    for r in report.rows.iter().filter(|r| r.check == "thm1_first" || r.check == "thm2_first") {
        // With p_o = p_d both sides coincide.
        assert!((r.lhs - r.rhs).abs() <= 1e-12, "{r:?}");
    }
}

#[test]
fn output_files_carry_schema_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config("scenario = \"s\"\nseeds = 1\n[federation]\nrounds = 2\n[attack]\niters = 30\n[bayes]\ncorpus_size = 5\n").unwrap();
    harness::run_to_dir(&cfg, RunOptions::default(), dir.path()).unwrap();
    harness::verify_to_dir(&cfg, RunOptions::default(), dir.path()).unwrap();
    harness::fit_constants_to_dir(&cfg, RunOptions::default(), dir.path()).unwrap();
    for (file, schema) in [
        ("metrics.csv", "fl-tradeoff-metrics/v1"),
        ("verify.csv", "fl-tradeoff-verify/v1"),
        ("constants.csv", "fl-tradeoff-constants/v1"),
    ] {
        let text = fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# schema: {schema}"));
    }
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().nth(1).unwrap(), METRICS_HEADER);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"], 2);
}
