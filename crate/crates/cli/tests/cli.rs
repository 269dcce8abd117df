use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stackelberg_ibr::analysis::AnalysisReport;
use stackelberg_ibr::error::exit;
use stackelberg_ibr::estimator::SamplingPlan;
use stackelberg_ibr::experiment::{self, ExperimentConfig};
use stackelberg_ibr::game::QuadraticGame;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stackelberg-ibr")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two seeds, 100 iterations: small enough to run in debug builds.
const QUICK: [&str; 4] = ["--seeds", "2", "--iters", "100"];

#[test]
fn generate_writes_parseable_instance() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("inst.toml");
    let out = cli(&["generate", "5", "4", "1", "--out", path(&file)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("lambda_min(H_f)"));
    assert!(stdout(&out).contains("kappa (tight)"));
    let text = fs::read_to_string(&file).unwrap();
    let game = QuadraticGame::from_toml(&text).unwrap();
    assert_eq!((game.n(), game.m(), game.seed()), (5, 4, Some(1)));
    assert_eq!(game.to_toml().unwrap(), text);
}

#[test]
fn generate_to_stdout_matches_seed_flag() {
    let a = cli(&["generate", "3", "2", "7"]);
    let b = cli(&["generate", "3", "2", "--seed", "7"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stderr(&a).contains("lambda_min(H_f)"));
}

#[test]
fn generate_rejects_zero_dimension() {
    let out = cli(&["generate", "0", "4"]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = cli(&[&["run", "--out", path(d)][..], &QUICK].concat());
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for file in [experiment::SUMMARY_FILE, experiment::ANALYSIS_FILE] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    experiment::verify_bundle(&a).unwrap();
    let rows = experiment::read_summary(&a).unwrap();
    assert_eq!(rows.len(), 10);
}

#[test]
fn exact_oracle_run_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--out", path(dir.path()), "--eps", "0", "--oracle", "exact", "--seeds", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = experiment::read_summary(dir.path()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].err_x < 1e-8, "{}", rows[0].err_x);
    assert!(rows[0].steady_state_error < 1e-8);
}

#[test]
fn emitted_csvs_have_only_finite_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[&["run", "--out", path(dir.path())][..], &QUICK].concat());
    assert!(out.status.success());
    let plots = dir.path().join("plots");
    assert!(cli(&["plot-data", path(dir.path()), "--out", path(&plots)]).status.success());
    let mut files = vec![
        dir.path().join(experiment::SUMMARY_FILE),
        dir.path().join(experiment::ANALYSIS_FILE),
        plots.join(experiment::CONVERGENCE_FILE),
        plots.join(experiment::TIGHTNESS_FILE),
    ];
    for entry in fs::read_dir(dir.path().join(experiment::TRACES_DIR)).unwrap() {
        files.push(entry.unwrap().path());
    }
    for f in files {
        let mut r = csv::Reader::from_path(&f).unwrap();
        for rec in r.records() {
            for field in rec.unwrap().iter() {
                if field.is_empty() || field == "true" || field == "false" {
                    continue;
                }
                let v: f64 = field.parse().unwrap_or_else(|_| panic!("{}: {field:?}", f.display()));
                assert!(v.is_finite(), "{}: {field}", f.display());
            }
        }
    }
}

#[test]
fn analyze_exact_limit() {
    let out = cli(&["analyze", "--eps", "0"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let value = |key: &str| {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line[22..].trim().to_string()
    };
    assert_eq!(value("b "), "0");
    assert_eq!(value("condition_value"), "-1");
    assert_eq!(value("theorem_bound "), "0");
    assert!(value("||M^+||").starts_with("7.0710678"));
}

#[test]
fn analyze_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["analyze", "--eps", "0.01,0.04,0.2", "--delta", "0.05", "--out", path(dir.path())]);
    assert!(out.status.success());
    let mut r = csv::Reader::from_path(dir.path().join(experiment::ANALYSIS_FILE)).unwrap();
    let from_cli: Vec<Vec<String>> = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();

    let mut cfg = ExperimentConfig::default();
    cfg.solver.delta = 0.05;
    let game = cfg.game().unwrap();
    let plan = SamplingPlan::standard(game.n(), 0.05).unwrap();
    let reports: Vec<AnalysisReport> = experiment::cmd_analyze(&game, &plan, &[0.01, 0.04, 0.2]).unwrap();
    let mut buf = Vec::new();
    stackelberg_ibr::analysis::write_reports_csv(&mut buf, &reports).unwrap();
    let mut r = csv::Reader::from_reader(buf.as_slice());
    let from_lib: Vec<Vec<String>> = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    assert_eq!(from_cli, from_lib);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, "epsilons = [0.02]\nseeds_per_epsilon = 3\n[solver]\niters = 20\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = cli(&["run", "--config", path(&cfg_path), "--out", path(&out_dir), "--seed", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = experiment::read_summary(&out_dir).unwrap();
    let seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![5, 6, 7]);
    assert!(rows.iter().all(|r| r.epsilon == 0.02 && r.iterations == 20));
}

#[test]
fn exit_code_config_error() {
    let out = cli(&["run", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    let out = cli(&["run", "--eps", "-1"]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
}

#[test]
fn exit_code_instance_error() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("bad.toml");
    fs::write(&inst, "n = 1\nm = 1\np1 = [[1.0]]\nq1 = [[2.0]]\ns1 = [[1.0]]\np2 = [[1.0]]\nq2 = [[0.0]]\ns2 = [[1.0]]\n").unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, "[instance]\nsource = \"file\"\npath = \"bad.toml\"\n").unwrap();
    let out = cli(&["analyze", "--config", path(&cfg_path)]);
    assert_eq!(out.status.code(), Some(exit::INSTANCE), "{}", stderr(&out));
}

#[test]
fn exit_code_oracle_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, "epsilons = [1e-9]\nseeds_per_epsilon = 1\n[oracle]\nkind = \"gd\"\nmax_iters = 2\n").unwrap();
    let out = cli(&["run", "--config", path(&cfg_path), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(exit::ORACLE), "{}", stderr(&out));
    assert!(stderr(&out).contains("k=0"));
}

#[test]
fn exit_code_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--out", path(dir.path()), "--alpha", "5", "--eps", "0.01", "--seeds", "1"]);
    assert_eq!(out.status.code(), Some(exit::DIVERGENCE), "{}", stderr(&out));
    assert!(stderr(&out).contains("eps=0.01, seed=0"));
}

#[test]
fn tightness_skips_and_notes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[&["tightness", "--out", path(dir.path()), "--eps", "0,0.01,0.2"][..], &QUICK].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("skipped eps = 0.2"));
    let manifest = experiment::read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.skipped_epsilons, vec![0.2]);
    let rows = experiment::read_summary(dir.path()).unwrap();
    assert!(rows.iter().all(|r| r.gap.is_some()));
}

#[test]
fn tightness_without_conforming_eps() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["tightness", "--out", path(dir.path()), "--eps", "0.5,1"]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    assert!(stderr(&out).contains("condition value"));
}

#[test]
fn plot_data_on_empty_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["plot-data", path(dir.path())]);
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn shipped_configs_are_valid() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["sweep.toml", "tightness.toml"] {
        let cfg = ExperimentConfig::load(&root.join(name)).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.game().unwrap(), ExperimentConfig::default().game().unwrap(), "{name}");
    }
}
