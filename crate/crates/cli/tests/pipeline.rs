use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Instant, SystemTime};

use dlnice_core::evaluation::BiasReport;
use dlnice_core::montecarlo::read_risk_csv;
use serde_json::{json, Value};

fn smoke_config(out: &Path, name: &str) -> Value {
    json!({
        "name": name,
        "scenario": "simple",
        "sample_sizes": [100],
        "horizon": 10,
        "seeds": {"simulation": 1, "training": 2, "monte_carlo": 3, "truth": 4},
        "truth_n": 100000,
        "methods": ["parametric:dgp_matched", "parametric:lag1", "parametric:lag_cumavg", "dl"],
        "mc_samples": 500,
        "output_dir": out
    })
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    write_config_as(dir, v["name"].as_str().unwrap(), v)
}

fn write_config_as(dir: &Path, file: &str, v: &Value) -> PathBuf {
    let p = dir.join(format!("{file}.json"));
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn dlnice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlnice"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn mtimes(dir: &Path) -> Vec<(PathBuf, SystemTime)> {
    files(dir)
        .into_iter()
        .filter(|p| !p.ends_with("manifest.json"))
        .map(|p| {
            let t = fs::metadata(&p).unwrap().modified().unwrap();
            (p, t)
        })
        .collect()
}

fn manifest(run: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn smoke_run_then_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &smoke_config(tmp.path(), "smoke"));
    let start = Instant::now();
    let out = dlnice(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs() < 60);
    let run = tmp.path().join("smoke");

    let mut expected = vec!["data/cohort_100.csv".to_string(), "models/dl_100/covariate.nn".into()];
    for s in ["natural", "always", "never"] {
        expected.push(format!("data/truth_{s}.csv"));
        for m in ["parametric_dgp_matched", "parametric_lag1", "parametric_lag_cumavg", "dl"] {
            expected.push(format!("risks/{m}_100_{s}.csv"));
            expected.push(format!("risks/{m}_100_{s}.json"));
        }
    }
    for q in ["natural", "always", "never", "rd", "rr"] {
        expected.push(format!("report/fig_simple_100_{q}.csv"));
    }
    for t in ["simple_100", "simple_1000", "simple_10000", "complex_1000", "complex_10000"] {
        expected.push(format!("report/table_{t}.md"));
        expected.push(format!("report/table_{t}.csv"));
    }
    for e in &expected {
        assert!(run.join(e).is_file(), "missing {e}");
    }
    assert!(files(&run).iter().all(|p| !p.to_string_lossy().contains(".partial")));

    // Invariants of the outputs.
    for p in files(&run.join("risks")).iter().filter(|p| p.extension().unwrap() == "csv") {
        let (curve, se) = read_risk_csv(p).unwrap();
        assert_eq!(curve.len(), 10);
        assert!(curve.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(curve.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(se.iter().all(|s| *s >= 0.0));
    }
    let reports: Vec<BiasReport> =
        serde_json::from_str(&fs::read_to_string(run.join("report/bias_reports.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 4);
    for r in &reports {
        for b in [&r.natural, &r.always, &r.never, &r.effect.rd] {
            assert!(b.mean.abs() <= b.mean_abs + 1e-15);
        }
    }
    let table = fs::read_to_string(run.join("report/table_simple_100.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);

    // Rerun: nothing recomputed, same hash, same bytes.
    let hash = manifest(&run)["config_hash"].clone();
    let before = mtimes(&run);
    let bytes: Vec<Vec<u8>> = files(&run.join("report")).iter().map(|p| fs::read(p).unwrap()).collect();
    std::thread::sleep(std::time::Duration::from_millis(20));
    let out = dlnice(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let m = manifest(&run);
    assert_eq!(m["config_hash"], hash);
    assert_eq!(m["stages"]["estimate"]["computed"], 0);
    assert_eq!(m["stages"]["simulate"]["skipped"], 1);
    let after = mtimes(&run);
    // Evaluation and report outputs are rewritten, with identical bytes.
    let upstream = |v: &[(PathBuf, SystemTime)]| -> Vec<(PathBuf, SystemTime)> {
        v.iter().filter(|(p, _)| !p.starts_with(run.join("report"))).cloned().collect()
    };
    assert_eq!(upstream(&before), upstream(&after));
    let bytes2: Vec<Vec<u8>> = files(&run.join("report")).iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(bytes, bytes2);
}

#[test]
fn separate_runs_of_one_config_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = smoke_config(tmp.path(), "a");
    v["methods"] = json!(["parametric:lag1", "dl"]);
    v["sample_sizes"] = json!([60]);
    v["horizon"] = json!(6);
    let a = write_config(tmp.path(), &v);
    let out_b = tmp.path().join("other");
    v["output_dir"] = json!(out_b);
    let b = write_config_as(tmp.path(), "b", &v);
    assert!(dlnice(&["run", "--config", a.to_str().unwrap()]).status.success());
    assert!(dlnice(&["run", "--config", b.to_str().unwrap(), "--threads", "1"]).status.success());
    let ra = tmp.path().join("a");
    let rb = out_b.join("a");
    for sub in ["data", "models", "risks"] {
        for p in files(&ra.join(sub)) {
            if p.extension().is_some_and(|e| e == "json") && sub == "risks" {
                continue; // timing
            }
            let q = rb.join(p.strip_prefix(&ra).unwrap());
            assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap(), "{}", p.display());
        }
    }
}

#[test]
fn flags_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().to_str().unwrap();
    let base = [
        ("--name", "flags"),
        ("--scenario", "complex"),
        ("--sample-sizes", "50"),
        ("--horizon", "4"),
        ("--seed-simulation", "1"),
        ("--seed-training", "2"),
        ("--seed-monte-carlo", "3"),
        ("--seed-truth", "4"),
        ("--methods", "parametric:lag1"),
        ("--truth-n", "1000"),
        ("--mc-samples", "50"),
        ("--output-dir", out_dir),
    ];
    // Base flags with some values replaced, plus extra switches.
    let with = |cmd: &str, replace: &[(&str, &str)], extra: &[&str]| {
        let mut args = vec![cmd];
        for (flag, value) in base {
            args.push(flag);
            args.push(replace.iter().find(|(f, _)| *f == flag).map_or(value, |(_, v)| v));
        }
        args.extend_from_slice(extra);
        dlnice(&args)
    };
    // Downstream command without its inputs: config error, one JSON line.
    let out = with("estimate", &[], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let first: Value = serde_json::from_str(stderr.lines().next().unwrap()).unwrap();
    assert_eq!(first["error"], "config");
    assert!(first["message"].as_str().unwrap().contains("cohort_50.csv"));

    assert!(with("simulate", &[], &[]).status.success());
    assert!(tmp.path().join("flags/data/cohort_50.csv").is_file());
    assert!(with("fit-parametric", &[], &[]).status.success());
    assert!(with("estimate", &[], &[]).status.success());
    assert_eq!(with("evaluate", &[], &[]).status.code(), Some(2));
    assert!(with("truth", &[], &[]).status.success());
    let out = with("evaluate", &[], &[]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("complex n=50 parametric:lag1"));
    assert!(with("report", &[], &[]).status.success());

    // Same name, different config.
    let out = with("simulate", &[("--horizon", "5")], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different config"), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(with("simulate", &[("--horizon", "5")], &["--force"]).status.success());

    // Field-naming validation.
    let out = with("run", &[("--methods", "parametric:lag1,forest")], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("methods[1]"));
    let out = dlnice(&["config", "--name", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario"));
    let out = with("config", &[], &[]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"truth_n\": 1000"));
}

#[test]
fn search_then_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = smoke_config(tmp.path(), "search");
    v["methods"] = json!(["dl"]);
    v["sample_sizes"] = json!([40]);
    v["horizon"] = json!(4);
    v["truth_n"] = json!(2000);
    v["mc_samples"] = json!(50);
    v["network"] = json!({"search": {"trials": 2, "max_epochs": 1, "patience": 1}});
    let cfg = write_config(tmp.path(), &v);
    let c = cfg.to_str().unwrap();
    assert!(dlnice(&["simulate", "--config", c]).status.success());
    assert_eq!(dlnice(&["fit-dl", "--config", c]).status.code(), Some(2));
    assert!(dlnice(&["search-dl", "--config", c]).status.success());
    let run = tmp.path().join("search");
    let log: Value = serde_json::from_str(&fs::read_to_string(run.join("models/search_covariate_40.json")).unwrap()).unwrap();
    assert_eq!(log["trials"].as_array().unwrap().len(), 2);
    assert!(dlnice(&["run", "--config", c]).status.success());
    let best = log["best"]["hidden_size"].as_u64().unwrap();
    let ck = dlnice_deepnet::load_checkpoint(run.join("models/dl_40/covariate.nn")).unwrap();
    assert_eq!(ck.config.hidden_size as u64, best);
}
