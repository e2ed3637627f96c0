use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sectional"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&Path], threads: Option<usize>) -> Output {
    let mut cmd = bin();
    cmd.arg(if args.len() == 1 { "run" } else { "verify" });
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("THREADS", n.to_string()),
        None => cmd.env_remove("THREADS"),
    };
    cmd.output().unwrap()
}

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn fixpoint_emits_convergence_and_atom_cloud() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"experiment":"fixpoint","system":{"system":"bernoulli","alpha":0.5,"beta":0.5},"output":"out"}"#,
    );
    let o = run(&[&cfg], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("out");
    let conv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(conv.starts_with("iter,dist,ratio\n"));
    let cloud = fs::read_to_string(out.join("fixed_point/node_0.csv")).unwrap();
    assert!(cloud.starts_with("x,w\n"));
    assert_eq!(cloud.lines().count(), 257);

    let m = manifest(&out);
    let listed: BTreeSet<String> = m["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_owned()).collect();
    assert_eq!(listed, files_under(&out));
    assert_eq!(m["config"]["experiment"], "fixpoint");
    assert!(m["results"]["w1_uniform"].as_f64().unwrap() <= 1e-3 + 1.0 / 256.0);
}

#[test]
fn rerun_replaces_previous_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"experiment":"fixpoint","system":{"system":"doubling","lambda_fib":0.4,"grid_M":8},"output":"out"}"#,
    );
    assert!(run(&[&cfg], None).status.success());
    assert!(run(&[&cfg], None).status.success());
    fs::write(tmp.path().join("out/stray.txt"), "x").unwrap();
    assert_eq!(run(&[&cfg], None).status.code(), Some(3));
}

#[test]
fn shipped_bernoulli_expectations_pass() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["bernoulli_fixpoint", "bernoulli_response_beta", "bernoulli_response_alpha"] {
        let text = fs::read_to_string(configs().join(format!("{name}.json"))).unwrap();
        let cfg = write_config(tmp.path(), &format!("{name}.json"), &text);
        let exp = configs().join(format!("{name}.expect.json"));
        let o = run(&[&cfg, &exp], None);
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(o.status.success(), "{stdout}{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 2);
        assert!(!stdout.contains("FAIL"));
    }
    let m = manifest(&tmp.path().join("out/bernoulli_response_beta"));
    assert!((m["results"]["response.x.resolvent"].as_f64().unwrap() - 2.0).abs() <= 1e-3);
}

#[test]
fn tightened_expectations_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("bernoulli_response_alpha.json")).unwrap();
    let cfg = write_config(tmp.path(), "c.json", &text);
    let exp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(configs().join("bernoulli_response_alpha.expect.json")).unwrap()).unwrap();
    let mut tight = exp.clone();
    for e in tight["expectations"].as_array_mut().unwrap() {
        for key in ["tol", "rel_tol"] {
            if let Some(t) = e.get(key).and_then(|v| v.as_f64()) {
                e[key] = serde_json::json!(t / 100.0);
            }
        }
    }
    let p = write_config(tmp.path(), "tight.json", &tight.to_string());
    let o = run(&[&cfg, &p], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL response.x_squared.resolvent"));
}

#[test]
fn missing_scalar_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("bernoulli_response_beta.json")).unwrap();
    let cfg = write_config(tmp.path(), "c.json", &text);
    let p = write_config(tmp.path(), "e.json", r#"{"expectations":[{"name":"nope","target":0,"tol":1}]}"#);
    assert_eq!(run(&[&cfg, &p], None).status.code(), Some(3));
}

#[test]
fn config_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = [
        r#"{"experiment":"spectrum","system":{"system":"bernoulli","alpha":0.5,"beta":0.5},"output":"o"}"#,
        r#"{"experiment":"fixpoint","system":{"system":"bernoulli","alpha":0.5,"beta":0.5},"output":"o","extra":1}"#,
        r#"{"experiment":"fixpoint","system":{"system":"bernoulli","alpha":1.5,"beta":0.5},"output":"o"}"#,
        r#"{"experiment":"tails","system":{"system":"doubling","lambda_fib":0.4},"output":"o"}"#,
    ];
    for (i, body) in bad.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{i}.json"), body);
        let o = run(&[&cfg], None);
        assert_eq!(o.status.code(), Some(3), "{body}");
        assert!(!o.stderr.is_empty());
    }
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn solver_failure_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"experiment":"fixpoint","system":{"system":"doubling","lambda_fib":0.9},"n_max":2,"output":"out"}"#,
    );
    let o = run(&[&cfg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no convergence"));
}

#[test]
fn tails_slope_near_minus_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"experiment":"tails","system":{"system":"solenoid","alpha":0.5,"lambda_fib":0.3},"samples":1000000,"seed":3,"output":"out"}"#,
    );
    let o = run(&[&cfg], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&tmp.path().join("out"));
    let slope = m["results"]["tail_slope"].as_f64().unwrap();
    assert!((slope + 2.0).abs() <= 0.15, "slope {slope}");
    let csv = fs::read_to_string(tmp.path().join("out/tails.csv")).unwrap();
    assert!(csv.starts_with("k,survival,count\n"));
}

/// All data files except the manifest (which records wall time) must be
/// byte-identical across thread counts.
fn assert_deterministic(body: &str) {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for threads in [1, 4] {
        let d = tmp.path().join(format!("t{threads}"));
        fs::create_dir(&d).unwrap();
        let cfg = write_config(&d, "c.json", body);
        let o = run(&[&cfg], Some(threads));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        dirs.push(d.join("out"));
    }
    let files = files_under(&dirs[0]);
    assert_eq!(files, files_under(&dirs[1]));
    assert!(files.len() > 1);
    for f in files.iter().filter(|f| f.as_str() != "manifest.json") {
        assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(manifest(&dirs[0])["results"], manifest(&dirs[1])["results"]);
}

#[test]
fn doubling_runs_are_identical_across_thread_counts() {
    assert_deterministic(
        r#"{"experiment":"tangent","system":{"system":"doubling","lambda_fib":0.4,"grid_M":32},"output":"out"}"#,
    );
}

#[test]
fn tails_runs_are_identical_across_thread_counts() {
    assert_deterministic(
        r#"{"experiment":"tails","system":{"system":"solenoid","alpha":0.75,"lambda_fib":0.3},"samples":200000,"seed":11,"output":"out"}"#,
    );
}
