//! End-to-end tests of the `cfbo` binary: every subcommand over real files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfbo"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary spawns");
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cfbo-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("temp dir creates");
    dir
}

fn gen_task(dir: &Path, name: &str, n: u32, t: u32, noise: f64, seed: u64, format: &str) -> PathBuf {
    let ext = if format == "json" { "json" } else { "csv" };
    let path = dir.join(format!("{name}.{ext}"));
    run_ok(&[
        "gen-synth",
        "--name",
        name,
        "--n",
        &n.to_string(),
        "--t",
        &t.to_string(),
        "--dx",
        "2",
        "--noise",
        &noise.to_string(),
        "--seed",
        &seed.to_string(),
        "--format",
        format,
        "--out",
        path.to_str().unwrap(),
    ]);
    path
}

#[test]
fn gen_synth_is_deterministic_and_loadable() {
    let dir = tmp_dir("gen");
    let a = gen_task(&dir, "det", 10, 6, 0.01, 7, "csv");
    let text_a = std::fs::read_to_string(&a).unwrap();
    let b_dir = tmp_dir("gen2");
    let b = gen_task(&b_dir, "det", 10, 6, 0.01, 7, "csv");
    let text_b = std::fs::read_to_string(&b).unwrap();
    assert_eq!(text_a, text_b, "same spec must produce identical bytes");

    // The generated file passes task validation on reload.
    let task = cfbo::lc_data::load_task(&a, cfbo::lc_data::TaskFormat::Csv).unwrap();
    assert_eq!(task.n_configs(), 10);
    assert_eq!(task.epochs(), 6);
}

#[test]
fn run_zero_penalty_reaches_full_budget() {
    let dir = tmp_dir("run0");
    // N*T = 40*10 = 400 >= budget, so exhaustion cannot preempt the budget.
    let task = gen_task(&dir, "free", 40, 10, 0.01, 0, "json");
    let out_dir = dir.join("traces");
    let out = run_ok(&[
        "run",
        "--task",
        task.to_str().unwrap(),
        "--alpha",
        "0",
        "--c",
        "1",
        "--budget",
        "300",
        "--raw-samples",
        "100",
        "--group-size",
        "5",
        "--seeds",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("stop_step=300"), "stdout: {stdout}");
    let trace = cfbo::engine::BOTrace::read_file(&out_dir.join("free__cfbo__seed0.jsonl")).unwrap();
    assert_eq!(trace.stop_step(), 300);
}

#[test]
fn run_missing_task_file_names_the_path() {
    let out = bin()
        .args([
            "run",
            "--task",
            "/nonexistent/task.csv",
            "--out",
            "/tmp/unused-cfbo-out",
        ])
        .output()
        .expect("binary spawns");
    assert_eq!(out.status.code(), Some(3), "missing file is a data error");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/nonexistent/task.csv"), "stderr: {stderr}");
}

#[test]
fn run_random_method_never_stops_early() {
    let dir = tmp_dir("runrand");
    let task = gen_task(&dir, "rnd", 12, 5, 0.01, 3, "csv");
    let out_dir = dir.join("traces");
    run_ok(&[
        "run",
        "--task",
        task.to_str().unwrap(),
        "--method",
        "random",
        "--alpha",
        "0.25",
        "--budget",
        "30",
        "--seeds",
        "0,1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    for seed in [0, 1] {
        let trace =
            cfbo::engine::BOTrace::read_file(&out_dir.join(format!("rnd__random__seed{seed}.jsonl"))).unwrap();
        assert_eq!(trace.stop_step(), 30, "random runs to the budget");
        // Incumbent series is nondecreasing.
        let inc = trace.incumbents();
        assert!(inc.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn simulate_fit_round_trip_recovers_alpha() {
    let dir = tmp_dir("fit");
    // Ground-truth utility file: linear alpha = 0.3, B = 300.
    let truth = dir.join("truth.json");
    std::fs::write(
        &truth,
        "{\"B\":300,\"terms\":[{\"form\":\"power\",\"c\":1.0,\"alpha\":0.3}],\"weights\":[1.0]}\n",
    )
    .unwrap();

    let prefs = dir.join("prefs.csv");
    run_ok(&[
        "simulate-prefs",
        "--utility",
        truth.to_str().unwrap(),
        "--mode",
        "uniform",
        "--n",
        "1000",
        "--seed",
        "4",
        "--out",
        prefs.to_str().unwrap(),
    ]);
    let fitted = dir.join("fitted.json");
    let out = run_ok(&[
        "fit-utility",
        "--prefs",
        prefs.to_str().unwrap(),
        "--family",
        "linear",
        "--budget",
        "300",
        "--out",
        fitted.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final bce loss"), "stdout: {stdout}");

    let fitted = cfbo::utility::UtilityFn::from_json_file(&fitted).unwrap();
    match fitted.terms[0] {
        cfbo::utility::UtilityTerm::Power { alpha, .. } => {
            assert!((alpha - 0.3).abs() <= 0.05, "recovered alpha = {alpha}");
        }
        _ => panic!("expected a power term"),
    }
}

#[test]
fn simulate_prefs_rows_are_meaningful_and_deterministic() {
    let dir = tmp_dir("prefs");
    let truth = dir.join("truth.json");
    std::fs::write(
        &truth,
        "{\"B\":100,\"terms\":[{\"form\":\"power\",\"c\":1.0,\"alpha\":0.2}],\"weights\":[1.0]}\n",
    )
    .unwrap();
    let out_a = dir.join("a.csv");
    let out_b = dir.join("b.csv");
    for out in [&out_a, &out_b] {
        run_ok(&[
            "simulate-prefs",
            "--utility",
            truth.to_str().unwrap(),
            "--n",
            "30",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let text = std::fs::read_to_string(&out_a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&out_b).unwrap());
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 30);

    let u = cfbo::utility::UtilityFn::from_json_file(&truth).unwrap();
    let pairs = cfbo::utility::prefs_from_csv(&text, "a.csv").unwrap();
    for p in &pairs {
        use cfbo::utility::Utility;
        let dominated = (p.left.perf > p.right.perf && p.left.budget < p.right.budget)
            || (p.right.perf > p.left.perf && p.right.budget < p.left.budget)
            || p.left.budget == p.right.budget;
        assert!(!dominated, "dominated pair in output");
        let expect = u.eval(p.left.budget, p.left.perf) > u.eval(p.right.budget, p.right.perf);
        assert_eq!(p.preferred_left, expect, "label inconsistent with utility");
    }
}

#[test]
fn simulate_prefs_trajectory_mode_uses_a_trace() {
    let dir = tmp_dir("traj");
    let task = gen_task(&dir, "traj", 10, 8, 0.01, 1, "csv");
    let spec = dir.join("u.json");
    std::fs::write(
        &spec,
        "{\"B\":60,\"terms\":[{\"form\":\"power\",\"c\":1.0,\"alpha\":0.1}],\"weights\":[1.0]}\n",
    )
    .unwrap();
    let traces = dir.join("traces");
    run_ok(&[
        "run",
        "--task",
        task.to_str().unwrap(),
        "--method",
        "random",
        "--utility",
        spec.to_str().unwrap(),
        "--budget",
        "60",
        "--seeds",
        "0",
        "--out",
        traces.to_str().unwrap(),
    ]);
    let trace_file = traces.join("traj__random__seed0.jsonl");
    let prefs = dir.join("prefs.csv");
    run_ok(&[
        "simulate-prefs",
        "--utility",
        spec.to_str().unwrap(),
        "--mode",
        "trajectory",
        "--trace",
        trace_file.to_str().unwrap(),
        "--n",
        "20",
        "--seed",
        "0",
        "--out",
        prefs.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&prefs).unwrap();
    let pairs = cfbo::utility::prefs_from_csv(&text, "prefs.csv").unwrap();
    assert_eq!(pairs.len(), 20);
    // Trajectory pairs share a budget beyond the skipped prefix.
    for p in &pairs {
        assert_eq!(p.left.budget, p.right.budget);
        assert!(p.left.budget > 50);
    }
}

#[test]
fn fit_utility_rejects_malformed_csv_naming_the_line() {
    let dir = tmp_dir("badcsv");
    let prefs = dir.join("bad.csv");
    std::fs::write(&prefs, "b,y,b2,y2,label\n10,0.5,20,0.6,1\n15,oops,30,0.4,0\n").unwrap();
    let out = bin()
        .args([
            "fit-utility",
            "--prefs",
            prefs.to_str().unwrap(),
            "--out",
            dir.join("u.json").to_str().unwrap(),
        ])
        .output()
        .expect("binary spawns");
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}

#[test]
fn eval_writes_all_reports_with_correct_shapes() {
    let dir = tmp_dir("eval");
    let task = gen_task(&dir, "etask", 10, 6, 0.01, 5, "csv");
    let spec = dir.join("u.json");
    std::fs::write(
        &spec,
        "{\"B\":24,\"terms\":[{\"form\":\"power\",\"c\":1.0,\"alpha\":0.25}],\"weights\":[1.0]}\n",
    )
    .unwrap();
    let traces = dir.join("traces");
    for method in ["cfbo", "random"] {
        run_ok(&[
            "run",
            "--task",
            task.to_str().unwrap(),
            "--method",
            method,
            "--utility",
            spec.to_str().unwrap(),
            "--budget",
            "24",
            "--raw-samples",
            "100",
            "--seeds",
            "0,1",
            "--out",
            traces.to_str().unwrap(),
        ]);
    }
    let trace_files: Vec<String> = std::fs::read_dir(&traces)
        .unwrap()
        .map(|e| e.unwrap().path().display().to_string())
        .collect();
    assert_eq!(trace_files.len(), 4);

    let prefix = dir.join("report");
    let mut args = vec![
        "eval".to_string(),
        "--utility".into(),
        spec.display().to_string(),
        "--task".into(),
        task.display().to_string(),
        "--out".into(),
        prefix.display().to_string(),
    ];
    args.extend(trace_files.iter().cloned());
    let args_ref: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run_ok(&args_ref);

    let runs = std::fs::read_to_string(format!("{}_runs.csv", prefix.display())).unwrap();
    assert_eq!(runs.lines().count(), 5, "header + 4 runs: {runs}");
    assert!(runs.starts_with("method,task,seed,regret\n"));

    let summary = std::fs::read_to_string(format!("{}_summary.csv", prefix.display())).unwrap();
    assert_eq!(summary.lines().count(), 3, "header + 2 methods: {summary}");

    let rank = std::fs::read_to_string(format!("{}_rank.csv", prefix.display())).unwrap();
    assert_eq!(rank.lines().count(), 3);
    for line in rank.lines().skip(1) {
        let r: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(r == 1.0 || r == 1.5 || r == 2.0, "two-method ranks: {rank}");
    }

    // Re-running eval reproduces the reports byte for byte.
    run_ok(&args_ref);
    assert_eq!(
        runs,
        std::fs::read_to_string(format!("{}_runs.csv", prefix.display())).unwrap()
    );
}

#[test]
fn eval_single_trace_has_zero_std() {
    let dir = tmp_dir("eval1");
    let task = gen_task(&dir, "single", 8, 5, 0.0, 2, "csv");
    let spec = dir.join("u.json");
    std::fs::write(
        &spec,
        "{\"B\":15,\"terms\":[{\"form\":\"power\",\"c\":1.0,\"alpha\":0.125}],\"weights\":[1.0]}\n",
    )
    .unwrap();
    let traces = dir.join("traces");
    run_ok(&[
        "run",
        "--task",
        task.to_str().unwrap(),
        "--utility",
        spec.to_str().unwrap(),
        "--budget",
        "15",
        "--raw-samples",
        "100",
        "--seeds",
        "0",
        "--out",
        traces.to_str().unwrap(),
    ]);
    let prefix = dir.join("report");
    run_ok(&[
        "eval",
        "--utility",
        spec.to_str().unwrap(),
        "--task",
        task.to_str().unwrap(),
        "--out",
        prefix.to_str().unwrap(),
        traces.join("single__cfbo__seed0.jsonl").to_str().unwrap(),
    ]);
    let summary = std::fs::read_to_string(format!("{}_summary.csv", prefix.display())).unwrap();
    let row = summary.lines().nth(1).unwrap();
    let std_field: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(std_field, 0.0);
}

#[test]
fn eval_rejects_budget_mismatch() {
    let dir = tmp_dir("evalmm");
    let task = gen_task(&dir, "mm", 8, 5, 0.0, 2, "csv");
    let traces = dir.join("traces");
    run_ok(&[
        "run",
        "--task",
        task.to_str().unwrap(),
        "--alpha",
        "0.25",
        "--budget",
        "15",
        "--raw-samples",
        "100",
        "--seeds",
        "0",
        "--out",
        traces.to_str().unwrap(),
    ]);
    let other = dir.join("other.json");
    std::fs::write(
        &other,
        "{\"B\":99,\"terms\":[{\"form\":\"power\",\"c\":1.0,\"alpha\":0.25}],\"weights\":[1.0]}\n",
    )
    .unwrap();
    let out = bin()
        .args([
            "eval",
            "--utility",
            other.to_str().unwrap(),
            "--task",
            task.to_str().unwrap(),
            "--out",
            dir.join("r").to_str().unwrap(),
            traces.join("mm__cfbo__seed0.jsonl").to_str().unwrap(),
        ])
        .output()
        .expect("binary spawns");
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn thread_cap_env_is_respected() {
    let dir = tmp_dir("threads");
    let task = gen_task(&dir, "thr", 8, 4, 0.01, 9, "csv");
    let out_dir = dir.join("traces");
    let out = bin()
        .env("CFBO_THREADS", "1")
        .args([
            "run",
            "--task",
            task.to_str().unwrap(),
            "--alpha",
            "0.25",
            "--budget",
            "10",
            "--raw-samples",
            "50",
            "--seeds",
            "0,1,2",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .expect("binary spawns");
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(&out_dir).unwrap().count(), 3);
}

#[test]
fn usage_error_exits_2() {
    let out = bin().args(["run", "--task"]).output().expect("binary spawns");
    assert_eq!(out.status.code(), Some(2));
}
