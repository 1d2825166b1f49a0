use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfbd_core::export::{read_field_csv, read_table};
use mfbd_core::presets::{self, Interaction};
use mfbd_core::quad::uniform_grid;
use mfbd_core::{solve_scf, ScfConfig};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn mfbd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfbd")).args(args).output().expect("failed to run mfbd")
}

fn run_ok(args: &[&str]) -> Output {
    let out = mfbd(args);
    assert!(
        out.status.success(),
        "mfbd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

fn scf_table(config: &str, out: &Path) -> (Vec<f64>, Vec<Vec<f64>>) {
    let cfg = configs().join(config);
    run_ok(&["scf", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    read_table(std::fs::File::open(out.join("field.csv")).unwrap()).unwrap()
}

fn totals(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().sum()).collect()
}

fn frequency_cv(r: &[f64]) -> f64 {
    let s: f64 = r.iter().sum();
    let f: Vec<f64> = r.iter().map(|x| x / s).collect();
    let m = f.iter().sum::<f64>() / f.len() as f64;
    let var = f.iter().map(|x| (x - m).powi(2)).sum::<f64>() / f.len() as f64;
    var.sqrt() / m
}

#[test]
fn carrying_capacity_totals_plateau() {
    let dir = tempfile::tempdir().unwrap();
    let (_, rows) = scf_table("figure1_e.json", dir.path());
    let tot = totals(&rows);
    let tail = &tot[tot.len() * 9 / 10..];
    let max = tail.iter().cloned().fold(f64::MIN, f64::max);
    let min = tail.iter().cloned().fold(f64::MAX, f64::min);
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(max - min <= 0.01 * mean, "spread {} vs mean {mean}", max - min);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scf.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    assert!(report["iterations"].as_u64().unwrap() < 50);
    assert!(report["final_residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(report["steady_states"]["roots"].as_array().unwrap().len(), 2);
    assert!(report["steady_states"]["skipped"].as_array().unwrap().is_empty());
}

#[test]
fn negative_frequency_is_more_balanced_than_positive() {
    let dir = tempfile::tempdir().unwrap();
    let (_, f_rows) = scf_table("figure1_f.json", &dir.path().join("f"));
    let (_, g_rows) = scf_table("figure1_g.json", &dir.path().join("g"));
    let cv_f = frequency_cv(f_rows.last().unwrap());
    let cv_g = frequency_cv(g_rows.last().unwrap());
    assert!(cv_f < cv_g, "cv F {cv_f} vs cv G {cv_g}");
}

#[test]
fn without_interaction_totals_increase() {
    let dir = tempfile::tempdir().unwrap();
    let (_, rows) = scf_table("figure1_d.json", dir.path());
    let tot = totals(&rows);
    assert!(tot.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn field_csv_reproduces_the_solution_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("figure1_e.json");
    run_ok(&[
        "scf",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--grid",
        "97",
    ]);
    let back = read_field_csv(std::fs::File::open(dir.path().join("field.csv")).unwrap()).unwrap();

    let spec = presets::figure1(Interaction::CarryingCapacity);
    let sol = solve_scf(&spec, presets::FIGURE1_TAU, &ScfConfig::default()).unwrap();
    for t in uniform_grid(0.0, presets::FIGURE1_TAU, 97) {
        assert_eq!(back.eval(t), sol.field.eval(t), "t = {t}");
    }
}

#[test]
fn stdout_carries_only_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("logistic.json");
    let out = run_ok(&[
        "scf",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--grid",
        "5",
        "--stdout",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], "t,r_1");
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn steady_reports_the_logistic_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("logistic.json");
    let out = run_ok(&["steady", "--config", cfg.to_str().unwrap(), "--stdout"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let roots = v["roots"].as_array().unwrap();
    assert_eq!(roots.len(), 2);
    assert_eq!(roots[0][0], 0.0);
    assert!((roots[1][0].as_f64().unwrap() - 100.0).abs() < 1e-10);

    // a subcritical model has only the trivial root and still succeeds
    let sub = write_config(
        dir.path(),
        "sub.json",
        r#"{"model": {"d": 1, "lambda": [0.5], "mu": [1.0], "gamma": [[0.0]], "w": [[0.01]], "r0": [1.0]}}"#,
    );
    let out = run_ok(&["steady", "--config", sub.to_str().unwrap(), "--stdout"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["roots"].as_array().unwrap().len(), 1);
}

#[test]
fn master_writes_distribution_and_moments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "m.json",
        r#"{
            "model": {"d": 1, "lambda": [0.0], "mu": [1.0], "gamma": [[0.0]], "w": [[0.0]], "r0": [3.0]},
            "tau": 1.0,
            "master": {"kappa": 5, "initial": {"point": [3]}},
            "output": {"grid": 3}
        }"#,
    );
    let out_dir = dir.path().join("out");
    run_ok(&["master", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    let (times, rows) = read_table(std::fs::File::open(out_dir.join("moments.csv")).unwrap()).unwrap();
    assert_eq!(times, vec![0.0, 0.5, 1.0]);
    for (t, r) in times.iter().zip(&rows) {
        // pure death: mean 3 e^{-t}, no mass lost
        assert!((r[0] - 3.0 * (-t).exp()).abs() < 1e-6);
        assert!((r[1] - 1.0).abs() < 1e-10);
    }
    let dist = std::fs::read_to_string(out_dir.join("distribution.csv")).unwrap();
    assert!(dist.starts_with("t,y_1,prob\n"));
}

#[test]
fn lattice_limit_comes_from_the_environment() {
    let cfg = configs().join("two_type_tree.json");
    let out = Command::new(env!("CARGO_BIN_EXE_mfbd"))
        .args(["master", "--config", cfg.to_str().unwrap(), "--stdout"])
        .env("MFBD_MAX_STATES", "1000")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("use kappa <="));
    assert!(out.stdout.is_empty());
}

#[test]
fn simulate_is_reproducible_and_seed_overrides() {
    let cfg = configs().join("two_type_tree.json");
    let c = cfg.to_str().unwrap();
    let a = run_ok(&["simulate", "--config", c, "--stdout"]).stdout;
    let b = run_ok(&["simulate", "--config", c, "--stdout"]).stdout;
    let other = run_ok(&["simulate", "--config", c, "--stdout", "--seed", "99"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, other);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,mean_1,mean_2,events_birth,events_death,events_mutation\n"));
    assert_eq!(text.lines().count(), 1 + 21);
}

#[test]
fn loglik_reports_value_and_diagnostics() {
    let cfg = configs().join("two_type_tree.json");
    let out = run_ok(&["loglik", "--config", cfg.to_str().unwrap(), "--stdout"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ll = v["loglik"].as_f64().unwrap();
    assert!(ll.is_finite() && ll < 0.0);
    assert_eq!(v["conditioned"], true);
    assert!((v["tau"].as_f64().unwrap() - 2.2).abs() < 1e-12);
    assert_eq!(v["diagnostics"]["tips"], 3);
    let p_root = v["diagnostics"]["p_root"].as_f64().unwrap();
    let uncond = v["diagnostics"]["unconditioned_loglik"].as_f64().unwrap();
    assert!((ll - (uncond - (1.0 - p_root).ln())).abs() < 1e-12);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let c = |name: &str, json: &str| write_config(dir.path(), name, json);

    // validation failures
    let bad_rate = c(
        "bad.json",
        r#"{"model": {"d": 1, "lambda": [-1.0], "mu": [1.0], "gamma": [[0.0]], "w": [[0.0]], "r0": [1.0]}, "tau": 1.0}"#,
    );
    let unknown_key = c("unknown.json", r#"{"model": {"preset": "logistic"}, "tau": 1.0, "bogus": 1}"#);
    let no_tau = c("notau.json", r#"{"model": {"preset": "logistic"}}"#);
    let no_master = c("nomaster.json", r#"{"model": {"preset": "logistic"}, "tau": 1.0}"#);
    let bad_sampling = c(
        "sampling.json",
        r#"{"model": {"preset": "logistic"}, "sampling": {"rho": 1.5, "sigma": 0.0}, "tau": 1.0}"#,
    );
    let bad_tree = dir.path().join("bad.nwk");
    std::fs::write(&bad_tree, "((A[&type=1]:1,B[&type=1]:1)[&type=1]:0.5").unwrap();
    let tree_cfg = c(
        "tree.json",
        r#"{"model": {"preset": "logistic"}, "sampling": {"rho": 0.5, "sigma": 0.0}}"#,
    );
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    let p = |p: &PathBuf| p.to_str().unwrap().to_string();
    let cases: Vec<(Vec<String>, i32)> = vec![
        (vec!["scf".into(), "--config".into(), p(&bad_rate), "--out".into(), o.into()], 2),
        (vec!["scf".into(), "--config".into(), p(&unknown_key), "--out".into(), o.into()], 2),
        (vec!["scf".into(), "--config".into(), p(&no_tau), "--out".into(), o.into()], 2),
        (vec!["master".into(), "--config".into(), p(&no_master), "--out".into(), o.into()], 2),
        (vec!["loglik".into(), "--config".into(), p(&bad_sampling), "--tree".into(), p(&bad_tree)], 2),
        (vec!["loglik".into(), "--config".into(), p(&tree_cfg), "--tree".into(), p(&bad_tree)], 2),
        (vec!["scf".into(), "--config".into(), "/nonexistent/config.json".into()], 2),
        (vec!["frobnicate".into()], 2),
    ];
    for (args, code) in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let res = mfbd(&args);
        assert_eq!(res.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(!res.stderr.is_empty());
    }

    let tree_err = mfbd(&["loglik", "--config", tree_cfg.to_str().unwrap(), "--tree", bad_tree.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&tree_err.stderr).contains("line 1, column"));

    // non-convergence still writes the last iterate
    let capped = c(
        "capped.json",
        r#"{"model": {"preset": "figure1", "interaction": "carrying_capacity"}, "tau": 25.0, "scf": {"max_iters": 3}}"#,
    );
    let res = mfbd(&["scf", "--config", capped.to_str().unwrap(), "--out", o]);
    assert_eq!(res.status.code(), Some(3));
    let (times, rows) = read_table(std::fs::File::open(out.join("field.csv")).unwrap()).unwrap();
    assert_eq!(times.len(), 201);
    assert_eq!(rows[0].len(), 5);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("scf.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
}
