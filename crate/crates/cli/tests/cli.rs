use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dpdag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpdag")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dpdag(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, seed: &str) -> PathBuf {
    let sim = dir.join("sim");
    ok(&["simulate", "--q", "4", "--nk", "30", "--seed", seed, "--out", s(&sim)]);
    sim
}

fn fit(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["fit", "--data", s(data), "--out", s(out), "--iterations", "300", "--burn-in", "100", "--seed", "7"];
    args.extend_from_slice(extra);
    ok(&args);
}

/// Every file below `dir`, relative path and bytes, sorted.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_fit_summarize() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), "3");
    for f in ["data.csv", "labels.csv", "truth/dag_1.txt", "truth/omega_2.csv", "truth/mu_1.csv", "manifest.json"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    let run = t.path().join("run");
    fit(&sim.join("data.csv"), &run, &[]);
    let trace = run.join("trace");
    let alloc = fs::read_to_string(trace.join("alloc.csv")).unwrap();
    assert_eq!(alloc.lines().count(), 201);
    assert!(trace.join("omega_300_1.csv").exists());

    let report = ok(&["summarize", "--run", s(&run), "--truth", s(&sim), "--subjects", "1,2"]);
    assert!(report.contains("variation of information"), "{report}");
    let summary = run.join("summary");
    let metrics = fs::read_to_string(summary.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("binder_loss,variation_of_information"));
    assert_eq!(fs::read_to_string(summary.join("partition.csv")).unwrap().lines().count(), 61);
    assert!(summary.join("edge_probs/subject_2.csv").exists());

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn same_seed_same_bytes() {
    let t = tempfile::tempdir().unwrap();
    let a = simulate(&t.path().join("a"), "5");
    let b = simulate(&t.path().join("b"), "5");
    assert_eq!(tree(&a), tree(&b));
    let c = simulate(&t.path().join("c"), "6");
    assert_ne!(fs::read(a.join("data.csv")).unwrap(), fs::read(c.join("data.csv")).unwrap());

    let (ra, rb) = (t.path().join("ra"), t.path().join("rb"));
    fit(&a.join("data.csv"), &ra, &[]);
    fit(&a.join("data.csv"), &rb, &[]);
    assert_eq!(tree(&ra), tree(&rb));
}

#[test]
fn light_trace_summaries_match_full_trace() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), "11");
    let (full, light) = (t.path().join("full"), t.path().join("light"));
    fit(&sim.join("data.csv"), &full, &[]);
    fit(&sim.join("data.csv"), &light, &["--light-trace"]);
    assert!(!light.join("trace/omega_300_1.csv").exists());
    for r in [&full, &light] {
        ok(&["summarize", "--run", s(r), "--truth", s(&sim)]);
    }
    for f in ["similarity.csv", "partition.csv", "dag_estimates.csv", "causal_effects.csv", "metrics.csv"] {
        assert_eq!(
            fs::read_to_string(full.join("summary").join(f)).unwrap(),
            fs::read_to_string(light.join("summary").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn fixed_modes_keep_their_partition() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), "2");
    let naive = t.path().join("naive");
    fit(&sim.join("data.csv"), &naive, &["--mode", "one-group-naive"]);
    let alloc = fs::read_to_string(naive.join("trace/alloc.csv")).unwrap();
    assert!(alloc.lines().skip(1).all(|l| l.split(',').skip(1).all(|c| c == "1")));

    let oracle = t.path().join("oracle");
    let labels = sim.join("labels.csv");
    fit(&sim.join("data.csv"), &oracle, &["--mode", "k-group-oracle", "--labels", s(&labels)]);
    ok(&["summarize", "--run", s(&oracle), "--truth", s(&sim)]);
    let metrics = fs::read_to_string(oracle.join("summary/metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "0");
    assert_eq!(row[1], "0");
}

#[test]
fn config_file_and_flags() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), "4");
    let cfg = t.path().join("cfg.json");
    fs::write(&cfg, r#"{"iterations": 50, "burn_in": 10, "thin": 4, "c": 2.0}"#).unwrap();
    let run = t.path().join("run");
    ok(&["fit", "--data", s(&sim.join("data.csv")), "--out", s(&run), "--config", s(&cfg), "--burn-in", "18"]);
    let used: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(used["iterations"], 50);
    assert_eq!(used["burn_in"], 18);
    assert_eq!(used["c"], 2.0);
    assert_eq!(fs::read_to_string(run.join("trace/alloc.csv")).unwrap().lines().count(), 1 + 8);

    fs::write(&cfg, r#"{"iterations": 50, "burnin": 10}"#).unwrap();
    let out = dpdag(&["fit", "--data", s(&sim.join("data.csv")), "--out", s(&run), "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("burnin"));
}

#[test]
fn bad_input_is_reported() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("bad.csv");
    fs::write(&data, "X1,X2\n1,2\n3,oops\n").unwrap();
    let out = dpdag(&["fit", "--data", s(&data), "--out", s(&t.path().join("r"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3, column 2"), "{err}");

    fs::write(&data, "1,2\n3,4\n5,6\n").unwrap();
    let out = dpdag(&["fit", "--data", s(&data), "--out", s(&t.path().join("r")), "--mode", "k-group-oracle"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("label"));

    let out = dpdag(&["fit", "--data", s(&data), "--out", s(&t.path().join("r")), "--iterations", "10", "--burn-in", "10"]);
    assert!(!out.status.success());

    let out = dpdag(&["summarize", "--run", s(&t.path().join("missing"))]);
    assert!(!out.status.success());
}

#[test]
fn tiny_bench_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "bench".to_string(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--q".into(),
            "3".into(),
            "--nk".into(),
            "10,15".into(),
            "--replicates".into(),
            "2".into(),
            "--iterations".into(),
            "60".into(),
            "--burn-in".into(),
            "20".into(),
        ]
    };
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        let v = args(d);
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    }
    assert_eq!(tree(&a), tree(&b));
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 3);
    let table = fs::read_to_string(a.join("table_causal.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "method,b,n_k=10,n_k=15");
}
