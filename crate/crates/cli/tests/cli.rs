use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fabcap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fabcap"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("FABCAP_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = fabcap(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

fn records(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

fn opt_f64(s: &str) -> Option<f64> {
    if s.is_empty() { None } else { Some(s.parse().expect("numeric field")) }
}

const METRICS: [&str; 11] = [
    "epoch",
    "env",
    "step",
    "reward",
    "dgr_with",
    "dgr_without",
    "completed_lots",
    "avg_cycle_time_days",
    "policy_loss",
    "critic_loss",
    "clip_fraction",
];

/// Checks the metrics schema and returns (epoch rows, step rows).
fn validate_metrics(path: &Path) -> (Vec<csv::StringRecord>, Vec<csv::StringRecord>) {
    assert_eq!(header(path), METRICS);
    let rows = records(path);
    for r in &rows {
        assert_eq!(r.len(), 11);
        r[0].parse::<usize>().unwrap();
        assert_eq!(r[1].is_empty(), r[2].is_empty());
        if !r[1].is_empty() {
            r[1].parse::<usize>().unwrap();
            r[2].parse::<usize>().unwrap();
        }
        assert!(r[3].parse::<f64>().unwrap().is_finite());
        r[4].parse::<f64>().unwrap();
        for k in 5..11 {
            opt_f64(&r[k]);
        }
    }
    rows.into_iter().partition(|r| r[1].is_empty())
}

fn validate_actions(path: &Path) -> Vec<csv::StringRecord> {
    assert_eq!(header(path), ["epoch", "step", "head", "machine_id", "op_id", "family"]);
    let rows = records(path);
    for r in &rows {
        r[0].parse::<usize>().unwrap();
        r[1].parse::<usize>().unwrap();
        assert!(["uptime", "efficiency", "dedication_add", "dedication_remove"].contains(&&r[2]));
        r[3].parse::<usize>().unwrap();
        let machine_head = &r[2] == "uptime" || &r[2] == "efficiency";
        assert_eq!(r[4].is_empty(), machine_head);
        assert!(!r[5].is_empty());
    }
    rows
}

fn validate_manifest(dir: &Path, command: &str) -> serde_json::Value {
    let files: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.iter().filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("manifest")).count(), 1);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], command);
    assert_eq!(m["scenario"]["hash"].as_str().unwrap().len(), 64);
    assert!(m["seeds"].is_array());
    assert!(m["config"].is_object());
    assert!(m["git_describe"].is_string());
    assert!(m["finished_unix"].as_u64().unwrap() >= m["started_unix"].as_u64().unwrap());
    m
}

#[test]
fn train_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    ok(&["train", "--scenario", "minifab", "--epochs", "2", "--batch", "4", "--seed", "1", "--out", "run"], tmp.path());
    let dir = tmp.path().join("run");
    for f in ["metrics.csv", "actions.csv", "last.ckpt", "best.ckpt", "trainer_state.json", "config.toml", "training_curves.svg", "action_frequency.svg"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let (epochs, steps) = validate_metrics(&dir.join("metrics.csv"));
    assert_eq!(epochs.len(), 2);
    assert_eq!(steps.len(), 2 * 4 * 5);
    validate_actions(&dir.join("actions.csv"));
    let m = validate_manifest(&dir, "train");
    assert_eq!(m["seeds"].as_array().unwrap().len(), 8);
    assert_eq!(m["config"]["batch_envs"], 4);
    let svg = std::fs::read_to_string(dir.join("training_curves.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn single_worker_training_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let args = |out: &'static str| ["train", "--epochs", "1", "--batch", "2", "--seed", "5", "--workers", "1", "--out", out];
    ok(&args("a"), tmp.path());
    ok(&args("b"), tmp.path());
    for f in ["metrics.csv", "actions.csv", "last.ckpt"] {
        assert_eq!(std::fs::read(tmp.path().join("a").join(f)).unwrap(), std::fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("cfg.toml"), "epochs = 3\nbatch_envs = 3\nk_epochs = 2\nval_instances = 0\n").unwrap();
    ok(&["train", "--config", "cfg.toml", "--epochs", "1", "--out", "run"], tmp.path());
    let (epochs, steps) = validate_metrics(&tmp.path().join("run/metrics.csv"));
    assert_eq!(epochs.len(), 1);
    assert_eq!(steps.len(), 3 * 5);
    assert!(!tmp.path().join("run/best.ckpt").exists());
    let cfg = std::fs::read_to_string(tmp.path().join("run/config.toml")).unwrap();
    assert!(cfg.contains("epochs = 1") && cfg.contains("batch_envs = 3"));
}

#[test]
fn ema_reward_mode_is_visible_in_metrics() {
    let tmp = TempDir::new().unwrap();
    ok(&["train", "--epochs", "2", "--batch", "2", "--reward-mode", "ema", "--val-instances", "0", "--out", "run"], tmp.path());
    let (_, steps) = validate_metrics(&tmp.path().join("run/metrics.csv"));
    for r in &steps {
        if &r[0] == "1" {
            assert_eq!(&r[5], "");
            assert_eq!(r[3].parse::<f64>().unwrap(), 0.0);
        } else {
            let with: f64 = r[4].parse().unwrap();
            let without: f64 = r[5].parse().unwrap();
            assert!((r[3].parse::<f64>().unwrap() - (with - without)).abs() < 1e-9);
        }
    }
}

#[test]
fn resume_appends_epochs() {
    let tmp = TempDir::new().unwrap();
    ok(&["train", "--epochs", "1", "--batch", "2", "--k-epochs", "2", "--out", "run"], tmp.path());
    ok(&["train", "--epochs", "2", "--batch", "2", "--k-epochs", "2", "--resume", "run"], tmp.path());
    let (epochs, _) = validate_metrics(&tmp.path().join("run/metrics.csv"));
    assert_eq!(epochs.iter().map(|r| r[0].to_string()).collect::<Vec<_>>(), ["1", "2"]);
}

#[test]
fn config_and_scenario_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(fabcap(&["train", "--scenario", "missing.toml"], tmp.path()).status.code(), Some(2));
    std::fs::write(tmp.path().join("bad.toml"), "epochz = 3\n").unwrap();
    assert_eq!(fabcap(&["train", "--config", "bad.toml"], tmp.path()).status.code(), Some(2));
    assert_eq!(fabcap(&["train", "--epochs", "1", "--batch", "0"], tmp.path()).status.code(), Some(2));
    std::fs::write(tmp.path().join("broken.toml"), "name = \"x\"\n").unwrap();
    assert_eq!(fabcap(&["simulate", "--scenario", "broken.toml"], tmp.path()).status.code(), Some(2));
    assert_eq!(fabcap(&["compare", "--strategies", "oracle"], tmp.path()).status.code(), Some(2));
    assert_eq!(fabcap(&["compare", "--strategies", "policy"], tmp.path()).status.code(), Some(2));
}

#[test]
fn compare_tables_and_hash_mismatch() {
    let tmp = TempDir::new().unwrap();
    ok(&["compare", "--strategies", "no_action,random", "--instances", "16", "--out", "cmp"], tmp.path());
    let dir = tmp.path().join("cmp");
    assert_eq!(
        header(&dir.join("compare.csv")),
        [
            "strategy",
            "instances",
            "completed_lots",
            "completed_lots_std",
            "avg_cycle_time_days",
            "avg_cycle_time_days_std",
            "daily_going_rate",
            "daily_going_rate_std"
        ]
    );
    let rows = records(&dir.join("compare.csv"));
    assert_eq!(rows.len(), 2);
    let lots = |i: usize| rows[i][2].parse::<f64>().unwrap();
    assert!(lots(0) <= lots(1), "no_action {} vs random {}", lots(0), lots(1));
    assert_eq!(header(&dir.join("improvements.csv")), ["strategy", "baseline", "completed_lots", "avg_cycle_time_days", "daily_going_rate"]);
    let imp = records(&dir.join("improvements.csv"));
    assert_eq!(&imp[0][2], "0.00% (+0.00)");
    let pattern = |s: &str| s.ends_with(')') && s.contains("% (") && s.split("% (").next().unwrap().parse::<f64>().is_ok();
    assert!(imp.iter().all(|r| (2..5).all(|k| pattern(&r[k]))));
    assert_eq!(header(&dir.join("instances.csv")), ["strategy", "instance", "seed", "completed_lots", "avg_cycle_time_days", "daily_going_rate"]);
    assert_eq!(records(&dir.join("instances.csv")).len(), 32);
    assert!(dir.join("compare.svg").exists());
    validate_manifest(&dir, "compare");

    ok(&["compare", "--strategies", "random", "--instances", "2", "--out", "one"], tmp.path());
    assert_eq!(records(&tmp.path().join("one/compare.csv")).len(), 1);
    assert_eq!(&records(&tmp.path().join("one/improvements.csv"))[0][4], "0.00% (+0.00)");

    let spec = "name = \"small\"\nmachines = 40\nfamilies = 8\nroute_len_min = 20\nroute_len_max = 30\ntotal_operations = 75\n";
    std::fs::write(tmp.path().join("spec.toml"), spec).unwrap();
    ok(&["generate-scenario", "--spec", "spec.toml", "--out", "small.toml"], tmp.path());
    ok(&["train", "--scenario", "small.toml", "--epochs", "1", "--batch", "1", "--k-epochs", "1", "--val-instances", "0", "--hidden", "8", "--out", "small"], tmp.path());
    let out = fabcap(&["compare", "--strategies", "no_action,policy", "--checkpoint", "small/last.ckpt", "--instances", "2", "--out", "bad"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let out = fabcap(&["evaluate", "--checkpoint", "small/last.ckpt", "--instances", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let out = fabcap(&["train", "--epochs", "2", "--batch", "1", "--resume", "small"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn evaluate_reports_every_instance() {
    let tmp = TempDir::new().unwrap();
    ok(&["train", "--epochs", "1", "--batch", "2", "--k-epochs", "2", "--hidden", "16", "--out", "run"], tmp.path());
    ok(&["evaluate", "--checkpoint", "run/best.ckpt", "--instances", "4", "--seed", "3", "--out", "ev"], tmp.path());
    let rows = records(&tmp.path().join("ev/evaluate.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| &r[0] == "policy"));
    assert_eq!(records(&tmp.path().join("ev/summary.csv")).len(), 1);
    validate_manifest(&tmp.path().join("ev"), "evaluate");
}

#[test]
fn simulate_is_reproducible_and_dumps_events() {
    let tmp = TempDir::new().unwrap();
    ok(&["simulate", "--scenario", "minifab", "--periods", "5", "--seed", "7", "--out", "a"], tmp.path());
    let out = ok(&["simulate", "--scenario", "minifab", "--periods", "5", "--seed", "7", "--dump-events", "--out", "b"], tmp.path());
    assert!(String::from_utf8_lossy(&out.stdout).contains("events/s"));
    let a = std::fs::read(tmp.path().join("a/kpi.csv")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b/kpi.csv")).unwrap());
    assert_eq!(header(&tmp.path().join("a/kpi.csv")), ["scope", "start_day", "end_day", "completed_lots", "avg_cycle_time_days", "daily_going_rate"]);
    let kpi = records(&tmp.path().join("a/kpi.csv"));
    assert_eq!(kpi.len(), 6);
    assert_eq!(&kpi[5][0], "total");

    let log = std::fs::read_to_string(tmp.path().join("b/events.log")).unwrap();
    let kinds = ["lot_arrival", "process_end", "setup_end", "machine_down", "machine_up", "period_boundary", "batch_timeout"];
    let mut last = f64::NEG_INFINITY;
    let mut n = 0;
    for line in log.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 4, "{line}");
        let t: f64 = f[0].parse().unwrap();
        assert!(t >= last && t <= 5.0 * 1440.0);
        last = t;
        f[1].parse::<u64>().unwrap();
        assert!(kinds.contains(&f[2]), "{}", f[2]);
        let _: serde_json::Value = serde_json::from_str(f[3]).unwrap();
        n += 1;
    }
    assert!(n > 100);
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fabcap"))
        .args(["simulate", "--periods", "1", "--seed", "2"])
        .current_dir(tmp.path())
        .env("FABCAP_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("root/simulate-seed2/kpi.csv").exists());
    validate_manifest(&tmp.path().join("root/simulate-seed2"), "simulate");
}

#[test]
fn generated_scenarios_load() {
    let tmp = TempDir::new().unwrap();
    ok(&["generate-scenario", "--preset", "midfab", "--seed", "4", "--out", "mid.toml"], tmp.path());
    ok(&["generate-scenario", "--preset", "minifab", "--out", "mini.toml"], tmp.path());
    ok(&["simulate", "--scenario", "mid.toml", "--periods", "1", "--out", "s"], tmp.path());
    let a = ok(&["generate-scenario", "--preset", "midfab", "--seed", "4", "--out", "mid2.toml"], tmp.path());
    assert!(String::from_utf8_lossy(&a.stdout).contains("200 machines"));
    assert_eq!(std::fs::read(tmp.path().join("mid.toml")).unwrap(), std::fs::read(tmp.path().join("mid2.toml")).unwrap());
}
