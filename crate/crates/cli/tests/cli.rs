use std::path::{Path, PathBuf};
use std::process::{Command as Process, Output};

use clap::Parser;
use maxsub_cli::config::{EndowmentConfig, ModelConfig};
use maxsub_cli::{Cli, Command, Experiment, ExperimentConfig};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs().join(name)).unwrap()
}

fn small_log() -> ExperimentConfig {
    let mut c = load("reference.toml");
    c.mc.paths = 4000;
    c.grid.steps = 20;
    c.search.grid_per_axis = 7;
    c.search.refine_iterations = 5;
    c.minimax.paths = Some(1000);
    c.minimax.steps = Some(10);
    c.minimax.strategy_points = 5;
    c.minimax.model_points = 7;
    c.characterize.steps = vec![10, 20];
    c
}

fn write_config(dir: &Path, config: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml().unwrap()).unwrap();
    path
}

fn maxsub(args: &[&str]) -> Output {
    Process::new(env!("CARGO_BIN_EXE_maxsub")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn shipped_configs_round_trip() {
    for name in ["reference.toml", "minimal.toml", "minimal.json"] {
        let c = load(name);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c, "{name} via TOML");
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c, "{name} via JSON");
    }
    assert_eq!(load("minimal.toml"), load("minimal.json"));
}

#[test]
fn tagged_sections_round_trip() {
    let mut c = small_log();
    c.endowment = EndowmentConfig::StockLinear {
        intercept: 0.1,
        slope: 0.5,
        cap: 2.0,
        stock: 0,
    };
    c.models = ModelConfig::Box {
        beta: (-1.0, -0.2),
        lower: vec![-0.5],
        upper: vec![0.5],
        include_subgradient: false,
    };
    assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("minimal.toml")).unwrap();

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, text.replace("[grid]", "[grid]\nstepz = 3")).unwrap();
    let o = maxsub(&["primal", "--config", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stepz"), "{}", stderr(&o));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replace("paths = 1000", "paths = 1")).unwrap();
    let o = maxsub(&["primal", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mc.paths"), "{}", stderr(&o));

    let sigma = dir.path().join("sigma.toml");
    std::fs::write(&sigma, text.replace("sigma = [[0.2]]", "sigma = [[0.0]]")).unwrap();
    let o = maxsub(&["primal", "--config", sigma.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("market"), "{}", stderr(&o));

    assert_eq!(maxsub(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(maxsub(&["primal"]).status.code(), Some(2));
    let o = maxsub(&["primal", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = maxsub(&["muckenhoupt", "--config", configs().join("minimal.toml").to_str().unwrap(), "--p", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("muckenhoupt.p"));
}

#[test]
fn numerical_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_log();
    // every model of the box violates beta + q^2 / 2 <= 0
    c.models = ModelConfig::Box {
        beta: (1.0, 2.0),
        lower: vec![-0.5],
        upper: vec![0.5],
        include_subgradient: false,
    };
    let path = write_config(dir.path(), &c);
    let out = dir.path().join("out");
    let o = maxsub(&["dual", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("duality::dual_search"), "{}", stderr(&o));
}

#[test]
fn minimal_configuration_has_no_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cli = Cli::parse_from([
        "maxsub",
        "run",
        "--config",
        configs().join("minimal.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let report = cli.execute().unwrap();
    let x = 1.0;
    let primal = report.primal.as_ref().unwrap();
    assert!((primal.value - x).abs() <= 1e-12);
    let dual = report.dual.as_ref().unwrap();
    assert!((dual.best_dual - x).abs() <= 1e-12);
    assert!(dual.relative_gap.abs() <= 1e-12);
    let gap = report.gap.as_ref().unwrap();
    assert!((gap.primal - x).abs() <= 1e-12 && (gap.dual - x).abs() <= 1e-12);
    assert!(gap.relative_gap <= 1e-12);
    let mm = report.minimax.as_ref().unwrap();
    assert!((mm.sup_inf - x).abs() <= 1e-12 && (mm.inf_sup - x).abs() <= 1e-12);
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn muckenhoupt_without_drift_prints_one() {
    let o = maxsub(&[
        "muckenhoupt",
        "--config",
        configs().join("minimal.toml").to_str().unwrap(),
        "--theta",
        "0",
        "--format",
        "json",
        "--out",
        tempfile::tempdir().unwrap().path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("muckenhoupt estimate: 1.0 "), "{}", stdout(&o));
}

#[test]
fn muckenhoupt_matches_lognormal_constant() {
    let mut c = small_log();
    c.mc.paths = 50_000;
    let report = Experiment::new(c).unwrap().run(Command::Muckenhoupt).unwrap();
    let m = report.muckenhoupt.unwrap();
    // theta = 0.25, p = 2: exp(theta^2 T)
    let exact = (0.25f64 * 0.25).exp();
    assert_eq!(m.analytic, Some(exact));
    assert!((m.estimate - exact).abs() <= 4.0 * m.std_error);
    assert!(m.deterministic_times_only);
}

#[test]
fn log_conditions_table() {
    let report = Experiment::new(small_log()).unwrap().run(Command::CheckConditions).unwrap();
    let c = report.conditions.unwrap();
    let row = |name: &str| c.rows.iter().find(|r| r.condition == name).unwrap().clone();
    for name in ["Conv", "Nor", "Pos", "Adm"] {
        assert!(row(name).passed, "{name}");
    }
    let qg = row("Qg");
    assert!(!qg.passed && !qg.note.is_empty());
    assert!(c.qg.blows_up_near_zero);
}

#[test]
fn check_conditions_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_log());
    let o = maxsub(&["check-conditions", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("Conv pass") && text.contains("Qg   fail"), "{text}");
}

#[test]
fn thread_count_does_not_change_the_report() {
    let c = small_log();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| Experiment::new(c.clone()).unwrap().run(Command::Run).unwrap().to_json().unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_log());
    let cli = Cli::parse_from(["maxsub", "simulate", "--config", path.to_str().unwrap(), "--seed", "9"]);
    let c = cli.load_config().unwrap();
    assert_eq!(c.mc.seed, 9);
    let a = Experiment::new(c.clone()).unwrap().run(Command::Simulate).unwrap();
    let b = Experiment::new(small_log()).unwrap().run(Command::Simulate).unwrap();
    assert_eq!(a.seed, 9);
    assert_ne!(a.simulate.unwrap().terminal_mean, b.simulate.unwrap().terminal_mean);
}

#[test]
fn report_files_and_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_log());
    let out = dir.path().join("out");
    let o = maxsub(&["run", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--format", "both"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    for key in [
        "primal",
        "dual",
        "gap",
        "minimax",
        "admissibility",
        "subsolution",
        "muckenhoupt",
        "conditions",
        "characterize",
        "seed",
        "version",
    ] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert!(json["config"].get("output").is_none());
    let mut sweep = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let header: Vec<String> = sweep.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["kind", "family", "p0", "p1", "value", "std_error", "feasible"]);
    let rows: Vec<csv::StringRecord> = sweep.records().map(|r| r.unwrap()).collect();
    assert!(rows.iter().any(|r| &r[0] == "primal") && rows.iter().any(|r| &r[0] == "dual"));
    for name in ["wealth_mean", "primal_vs_strategy", "dual_vs_model", "y_mean", "residual_vs_steps"] {
        assert!(out.join("series").join(format!("{name}.csv")).exists(), "{name}");
    }
    let json_only = dir.path().join("json");
    let o = maxsub(&[
        "muckenhoupt",
        "--config",
        path.to_str().unwrap(),
        "--out",
        json_only.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(json_only.join("report.json").exists() && !json_only.join("sweep.csv").exists());
}

#[test]
fn reference_strategy_closes_the_gap() {
    let report = Experiment::new(small_log()).unwrap().run(Command::Gap).unwrap();
    let gap = report.gap.unwrap();
    assert!(gap.relative_gap <= 0.01, "{}", gap.relative_gap);
    assert!(report.subsolution.unwrap().within_tolerance);
    assert!(report.admissibility.unwrap().max_abs <= 1e-12);
}

#[test]
fn dual_dominates_primal() {
    let report = Experiment::new(small_log()).unwrap().run(Command::Dual).unwrap();
    let d = report.dual.unwrap();
    assert!(d.weak_duality_holds(3.0));
    assert!(d.duals.iter().any(|r| r.family == "subgradient(certainty-equivalent(log))"));
}

#[test]
fn stock_linear_endowment() {
    let mut c = small_log();
    c.mc.paths = 50_000;
    c.endowment = EndowmentConfig::StockLinear {
        intercept: 0.0,
        slope: 1.0,
        cap: 1e9,
        stock: 0,
    };
    let e = Experiment::new(c.clone()).unwrap();
    let xi = e.endowment();
    let (mean, se) = maxsub::stats::mean_and_se(xi);
    // E[S_T / S_0] = exp(mu T)
    assert!((mean - 0.05f64.exp()).abs() <= 4.0 * se);
    c.endowment = EndowmentConfig::StockLinear {
        intercept: -0.9,
        slope: 1.0,
        cap: 0.2,
        stock: 0,
    };
    let e = Experiment::new(c).unwrap();
    assert!(e.endowment().iter().all(|v| (0.0..=0.2).contains(v)));
    assert!(e.endowment().contains(&0.2) && e.endowment().contains(&0.0));
}
