use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use sru_cli::{config_hash, ControlConfig, DriverConfig, ScenarioConfig};
use sru_core::Utility;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sru(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sru"));
    cmd.args(args).env_remove("SRU_OUTPUT_ROOT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("sru runs")
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sru(&args, &[])
}

fn rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            header
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn summary(dir: &Path) -> BTreeMap<String, (String, String)> {
    rows(&dir.join("summary.csv"))
        .into_iter()
        .map(|r| (r["quantity"].clone(), (r["value"].clone(), r["se"].clone())))
        .collect()
}

fn value(dir: &Path, quantity: &str) -> f64 {
    summary(dir)[quantity].0.parse().unwrap()
}

fn small_utility(dir: &Path, alpha: f64, extra: &str) -> PathBuf {
    let text = format!(
        r#"name = "small"
seed = 3
paths = 500

[grid]
horizon = 1.0
steps = 32

[model]
kind = "geometric"
x0 = 2.0
b0 = 0.05
sigma0 = 0.2

[driver]
kind = "utility"
h = {{ kind = "exponential", weight = 1.0 }}
g2 = {{ alpha = {alpha} }}

[control]
kind = "fixed_point"
{extra}"#
    );
    let p = dir.join("small.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn zero_candidate(dir: &Path, steps: usize) -> PathBuf {
    let mut s = String::from("t,xi\n");
    for i in 0..=steps {
        s.push_str(&format!("{},0\n", i as f64 / steps as f64));
    }
    let p = dir.join("zero.csv");
    std::fs::write(&p, s).unwrap();
    p
}

#[test]
fn remaining_time_is_exact() {
    let tmp = TempDir::new().unwrap();
    let out = run(&configs().join("remaining_time.toml"), tmp.path(), &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let s = summary(tmp.path());
    let y0: f64 = s["y0"].0.parse().unwrap();
    assert!((y0 - 1.0).abs() < 1e-12);
    assert_eq!(s["y0"].1.parse::<f64>().unwrap(), 0.0);
    for r in rows(&tmp.path().join("nodes.csv")) {
        let (t, y) = (
            r["t"].parse::<f64>().unwrap(),
            r["y_mean"].parse::<f64>().unwrap(),
        );
        assert!((y - (1.0 - t)).abs() < 1e-12, "Y({t}) = {y}");
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("linear.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(
        run(&cfg, &a, &["--paths", "500", "--threads", "1"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run(&cfg, &b, &["--paths", "500", "--threads", "3"])
            .status
            .code(),
        Some(0)
    );
    for f in [
        "nodes.csv",
        "residuals.csv",
        "martingale.csv",
        "summary.csv",
        "config.toml",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn negative_path_count_is_a_config_error_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    let out = run(
        &configs().join("linear.toml"),
        tmp.path(),
        &["--paths", "-5"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths"));
    assert!(!tmp.path().join("summary.csv").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let text = std::fs::read_to_string(configs().join("linear.toml")).unwrap();
    let cfg = tmp.path().join("typo.toml");
    std::fs::write(&cfg, text.replace("steps = 128", "steps = 128\nstpes = 4")).unwrap();
    let out = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stpes"));
}

#[test]
fn report_hash_matches_the_config_copy() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("remaining_time.toml");
    assert_eq!(run(&cfg, tmp.path(), &[]).status.code(), Some(0));
    let copy = std::fs::read(tmp.path().join("config.toml")).unwrap();
    assert_eq!(copy, std::fs::read(&cfg).unwrap());
    let report: toml::Table = std::fs::read_to_string(tmp.path().join("report.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(report["config_hash"].as_str().unwrap(), config_hash(&copy));
    assert_eq!(report["outcome"].as_str().unwrap(), "success");
}

#[test]
fn overrides_are_recorded_in_the_config_copy() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        run(
            &configs().join("remaining_time.toml"),
            tmp.path(),
            &["--seed", "99", "--paths", "10"]
        )
        .status
        .code(),
        Some(0)
    );
    let copy = std::fs::read_to_string(tmp.path().join("config.toml")).unwrap();
    let cfg = ScenarioConfig::from_toml(&copy).unwrap();
    assert_eq!((cfg.seed, cfg.paths), (99, 10));
}

#[test]
fn output_root_variable_is_respected() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("remaining_time.toml");
    let out = sru(
        &["run", cfg.to_str().unwrap()],
        &[("SRU_OUTPUT_ROOT", tmp.path())],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(tmp
        .path()
        .join("remaining_time")
        .join("summary.csv")
        .exists());
}

#[test]
fn sweep_limit_exits_three_and_keeps_the_trace() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_utility(tmp.path(), 0.4, "\n[reflection]\nmax_sweeps = 2\n");
    let out = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = rows(&tmp.path().join("out").join("trace.csv"));
    assert_eq!(trace.len(), 2);
    let report = std::fs::read_to_string(tmp.path().join("out").join("report.toml")).unwrap();
    assert!(
        report.contains("non_convergence") || report.contains("nonconvergence"),
        "{report}"
    );
}

#[test]
fn zero_consumption_fails_the_battery_when_recursion_rewards_consuming() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_utility(tmp.path(), 0.4, "");
    let cand = zero_candidate(tmp.path(), 32);
    let out = sru(
        &[
            "battery",
            cfg.to_str().unwrap(),
            "--candidate",
            cand.to_str().unwrap(),
            "--out",
            tmp.path().join("out").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = rows(&tmp.path().join("out").join("battery.csv"));
    assert!(rows.iter().any(|r| r["status"] == "violated"));
}

#[test]
fn increasing_variations_lower_the_objective_without_recursion() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_utility(tmp.path(), 0.0, "");
    let cand = zero_candidate(tmp.path(), 32);
    let out = sru(
        &[
            "battery",
            cfg.to_str().unwrap(),
            "--candidate",
            cand.to_str().unwrap(),
            "--out",
            tmp.path().join("out").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let evaluated: Vec<_> = rows(&tmp.path().join("out").join("battery.csv"))
        .into_iter()
        .filter(|r| r["status"] != "skipped")
        .collect();
    assert!(!evaluated.is_empty());
    for r in evaluated {
        assert!(r["numeric"].parse::<f64>().unwrap() < 0.0, "{r:?}");
        assert!(r["analytic"].parse::<f64>().unwrap() < 0.0, "{r:?}");
    }
}

#[test]
fn no_recursion_fixed_point_is_zero() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_utility(tmp.path(), 0.0, "");
    assert_eq!(
        run(&cfg, &tmp.path().join("out"), &[]).status.code(),
        Some(0)
    );
    for r in rows(&tmp.path().join("out").join("nodes.csv")) {
        assert_eq!(r["xi"].parse::<f64>().unwrap(), 0.0);
    }
    assert_eq!(value(&tmp.path().join("out"), "sweeps"), 1.0);
}

fn converge(tmp: &Path, axis: &str, levels: &str, extra: &[&str]) -> Output {
    let cfg = configs().join("linear.toml");
    let mut args = vec![
        "converge",
        cfg.to_str().unwrap(),
        "--axis",
        axis,
        "--levels",
        levels,
        "--out",
        tmp.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    sru(&args, &[])
}

#[test]
fn grid_refinement_is_first_order() {
    let tmp = TempDir::new().unwrap();
    let out = converge(tmp.path(), "grid", "16,32,64,128", &["--paths", "2000"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let order = value(tmp.path(), "fitted_order");
    assert!((order - 1.0).abs() < 0.2, "order {order}");
}

#[test]
fn path_count_refinement_is_half_order() {
    let tmp = TempDir::new().unwrap();
    let out = converge(
        tmp.path(),
        "paths",
        "100,400,1600,6400",
        &["--replicates", "32"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let order = value(tmp.path(), "fitted_order");
    assert!((order + 0.5).abs() < 0.1, "order {order}");
}

#[test]
fn picard_error_decreases_with_iterations() {
    // later iterates sit at the grid bias of the closed-form reference
    let tmp = TempDir::new().unwrap();
    let out = converge(tmp.path(), "picard-iters", "1,2,3", &["--paths", "2000"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let errors: Vec<f64> = rows(&tmp.path().join("convergence.csv"))
        .iter()
        .map(|r| r["error"].parse().unwrap())
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    assert!(value(tmp.path(), "fitted_rate") < 0.2);
}

#[test]
fn single_level_study_is_rejected() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        converge(tmp.path(), "grid", "32", &[]).status.code(),
        Some(2)
    );
}

fn utility() -> impl Strategy<Value = Utility> {
    prop_oneof![
        Just(Utility::Zero),
        (-2.0..2.0f64, -2.0..2.0f64)
            .prop_map(|(intercept, slope)| Utility::Affine { intercept, slope }),
        (0.1..3.0f64).prop_map(|weight| Utility::Exponential { weight }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn configs_round_trip_through_toml(
        seed in any::<u64>(),
        paths in 2i64..100_000,
        steps in 1usize..1000,
        horizon in 0.1..5.0f64,
        (phi, alpha, c) in (-2.0..2.0f64, -1.0..1.0f64, -1.0..1.0f64),
        terminal in utility(),
        rate in prop_oneof![Just(None), (0.0..3.0f64).prop_map(Some)],
    ) {
        let base = std::fs::read_to_string(configs().join("linear.toml")).unwrap();
        let mut cfg = ScenarioConfig::from_toml(&base).unwrap();
        cfg.seed = seed;
        cfg.paths = paths;
        cfg.grid.steps = steps;
        cfg.grid.horizon = horizon;
        cfg.driver = DriverConfig::Linear { phi, alpha, c, terminal };
        cfg.control = match rate {
            Some(rate) => ControlConfig::Linear { rate },
            None => ControlConfig::Zero,
        };
        let text = cfg.to_toml();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(config_hash(back.to_toml().as_bytes()), config_hash(text.as_bytes()));
    }
}
