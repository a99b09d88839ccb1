//! End-to-end tests driving the compiled `deql` binary.

use std::path::Path;
use std::process::{Command, Output};

use deql_core::model::WeightMatrix;

fn deql() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deql"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning deql");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning deql");
    assert!(
        !out.status.success(),
        "command unexpectedly succeeded\nstdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    out
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {path:?}: {e}"));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parsing {path:?}: {e}"))
}

/// Deterministic toy dataset: 40 users, 18 items, pseudo-random-ish baskets
/// from modular arithmetic so every item occurs several times.
fn write_raw(path: &Path) {
    let mut text = String::new();
    for u in 0..40usize {
        for step in 0..(3 + u % 5) {
            let item = (u * 7 + step * 5 + (u * step) % 11) % 18;
            text.push_str(&format!("user{u}\titem{item}\n"));
        }
    }
    std::fs::write(path, text).expect("writing raw interactions");
}

#[test]
fn pipeline_round_trip_strong() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.tsv");
    write_raw(&raw);

    run_ok(deql().args([
        "ingest",
        "--input",
        raw.to_str().unwrap(),
        "--out",
        dir.path().join("ing").to_str().unwrap(),
    ]));
    let ingest = read_json(&dir.path().join("ing/ingest.json"));
    assert_eq!(ingest["spec_version"], "1.0.0");
    assert_eq!(ingest["num_users"], 40);
    assert_eq!(ingest["num_items"], 18);

    run_ok(deql().args([
        "split",
        "--input",
        dir.path().join("ing/interactions.tsv").to_str().unwrap(),
        "--mode",
        "strong",
        "--test-fraction",
        "0.25",
        "--holdout-fraction",
        "0.5",
        "--seed",
        "7",
        "--out",
        dir.path().join("sp").to_str().unwrap(),
    ]));
    let split = read_json(&dir.path().join("sp/split.json"));
    let total = split["train_entries"].as_u64().unwrap()
        + split["test_input_entries"].as_u64().unwrap()
        + split["test_target_entries"].as_u64().unwrap();
    assert_eq!(total, ingest["num_entries"].as_u64().unwrap());

    run_ok(deql().args([
        "train",
        "--train",
        dir.path().join("sp/train.tsv").to_str().unwrap(),
        "--items",
        dir.path().join("sp/item_ids.tsv").to_str().unwrap(),
        "--variant",
        "zero_diag_l2",
        "--b",
        "0.5",
        "--p",
        "0.3",
        "--lambda",
        "2",
        "--out",
        dir.path().join("tr").to_str().unwrap(),
    ]));
    let train = read_json(&dir.path().join("tr/train.json"));
    assert_eq!(train["variant"], "zero_diag_l2");
    assert_eq!(train["solver"], "fast");
    assert_eq!(train["num_items"], 18);
    assert!(train["wall_time_seconds"].as_f64().unwrap() >= 0.0);

    let model = WeightMatrix::load(&dir.path().join("tr/model.bin")).expect("loading model");
    assert_eq!(model.n, 18);
    assert!(model.diag().iter().all(|&d| d == 0.0));

    run_ok(deql().args([
        "evaluate",
        "--model",
        dir.path().join("tr/model.bin").to_str().unwrap(),
        "--items",
        dir.path().join("tr/model_items.tsv").to_str().unwrap(),
        "--test-input",
        dir.path().join("sp/test_input.tsv").to_str().unwrap(),
        "--test-target",
        dir.path().join("sp/test_target.tsv").to_str().unwrap(),
        "--k",
        "5,10",
        "--histogram-bins",
        "4",
        "--out",
        dir.path().join("ev").to_str().unwrap(),
    ]));
    let eval = read_json(&dir.path().join("ev/eval.json"));
    assert_eq!(eval["spec_version"], "1.0.0");
    assert_eq!(eval["variant"], "zero_diag_l2");
    let recall10 = eval["recall_at_k"]["10"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&recall10));
    assert!(eval["num_users_evaluated"].as_u64().unwrap() > 0);
    assert!(eval["mse"].is_null());
    let hist = std::fs::read_to_string(dir.path().join("ev/diag_histogram.tsv")).unwrap();
    assert_eq!(hist.lines().count(), 5);
    assert!(hist.starts_with("bin_lower\tcount\n"));
}

#[test]
fn weak_split_evaluates_with_mse() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.tsv");
    write_raw(&raw);

    run_ok(deql().args([
        "split",
        "--input",
        raw.to_str().unwrap(),
        "--mode",
        "weak",
        "--test-fraction",
        "0.2",
        "--seed",
        "3",
        "--out",
        dir.path().join("sp").to_str().unwrap(),
    ]));
    let train_bytes = std::fs::read(dir.path().join("sp/train.tsv")).unwrap();
    let input_bytes = std::fs::read(dir.path().join("sp/test_input.tsv")).unwrap();
    assert_eq!(train_bytes, input_bytes, "weak mode folds the train rows back in as input");

    run_ok(deql().args([
        "train",
        "--train",
        dir.path().join("sp/train.tsv").to_str().unwrap(),
        "--items",
        dir.path().join("sp/item_ids.tsv").to_str().unwrap(),
        "--variant",
        "l2",
        "--b",
        "0.5",
        "--p",
        "0.5",
        "--lambda",
        "1",
        "--out",
        dir.path().join("tr").to_str().unwrap(),
    ]));
    run_ok(deql().args([
        "evaluate",
        "--model",
        dir.path().join("tr/model.bin").to_str().unwrap(),
        "--items",
        dir.path().join("tr/model_items.tsv").to_str().unwrap(),
        "--test-input",
        dir.path().join("sp/test_input.tsv").to_str().unwrap(),
        "--test-target",
        dir.path().join("sp/test_target.tsv").to_str().unwrap(),
        "--mse",
        "--out",
        dir.path().join("ev").to_str().unwrap(),
    ]));
    let eval = read_json(&dir.path().join("ev/eval.json"));
    assert!(eval["mse"].as_f64().unwrap() >= 0.0);
}

#[test]
fn train_is_deterministic_and_thread_invariant() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.tsv");
    write_raw(&raw);
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "variant = l2\nb = 0.75\np = 0.2\nlambda = 3\n").unwrap();

    for (out, threads) in [("t1", None), ("t2", None), ("t3", Some("1"))] {
        let mut cmd = deql();
        cmd.args([
            "train",
            "--train",
            raw.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join(out).to_str().unwrap(),
        ]);
        if let Some(t) = threads {
            cmd.env("DEQL_THREADS", t);
        }
        run_ok(&mut cmd);
    }
    let m1 = std::fs::read(dir.path().join("t1/model.bin")).unwrap();
    let m2 = std::fs::read(dir.path().join("t2/model.bin")).unwrap();
    let m3 = std::fs::read(dir.path().join("t3/model.bin")).unwrap();
    assert_eq!(m1, m2, "same config and seed must reproduce the model bytes");
    assert_eq!(m1, m3, "thread count must not change the model bytes");
}

#[test]
fn config_keys_merge_under_flags() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.tsv");
    write_raw(&raw);
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "variant = l2\nb = 0.75\np = 0.2\nlambda = 3\n").unwrap();

    run_ok(deql().args([
        "train",
        "--train",
        raw.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--b",
        "0.25",
        "--out",
        dir.path().join("tr").to_str().unwrap(),
    ]));
    let train = read_json(&dir.path().join("tr/train.json"));
    assert_eq!(train["hyperparameters"]["b"], 0.25);
    assert_eq!(train["hyperparameters"]["p"], 0.2);
    assert_eq!(train["hyperparameters"]["lambda"], 3.0);
}

#[test]
fn solver_routes_agree_through_the_cli() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.tsv");
    write_raw(&raw);

    for (out, solver) in [("d", "direct"), ("f", "fast")] {
        run_ok(deql().args([
            "train",
            "--train",
            raw.to_str().unwrap(),
            "--variant",
            "l2",
            "--b",
            "0.5",
            "--p",
            "0.3",
            "--lambda",
            "2",
            "--solver",
            solver,
            "--out",
            dir.path().join(out).to_str().unwrap(),
        ]));
    }
    let wd = WeightMatrix::load(&dir.path().join("d/model.bin")).unwrap();
    let wf = WeightMatrix::load(&dir.path().join("f/model.bin")).unwrap();
    assert!(wd.w.max_abs_diff(&wf.w) <= 1e-9);
    let td = read_json(&dir.path().join("d/train.json"));
    let tf = read_json(&dir.path().join("f/train.json"));
    assert_eq!(td["solver"], "direct");
    assert_eq!(tf["solver"], "fast");
}

#[test]
fn zero_columns_error_and_drop_flag() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.tsv");
    write_raw(&raw);
    // An item table with one id that never occurs in the data.
    let mut items = String::new();
    for i in 0..18 {
        items.push_str(&format!("item{i}\t{i}\n"));
    }
    items.push_str("item_unseen\t18\n");
    let items_path = dir.path().join("items.tsv");
    std::fs::write(&items_path, items).unwrap();

    let out = run_err(deql().args([
        "train",
        "--train",
        raw.to_str().unwrap(),
        "--items",
        items_path.to_str().unwrap(),
        "--variant",
        "plain",
        "--b",
        "1",
        "--p",
        "0.3",
        "--out",
        dir.path().join("fail").to_str().unwrap(),
    ]));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no interactions"), "stderr was: {stderr}");

    run_ok(deql().args([
        "train",
        "--train",
        raw.to_str().unwrap(),
        "--items",
        items_path.to_str().unwrap(),
        "--variant",
        "plain",
        "--b",
        "1",
        "--p",
        "0.3",
        "--drop-zero-items",
        "--out",
        dir.path().join("ok").to_str().unwrap(),
    ]));
    let train = read_json(&dir.path().join("ok/train.json"));
    assert_eq!(train["dropped_items"], 1);
    assert_eq!(train["num_items"], 18);
    let kept = std::fs::read_to_string(dir.path().join("ok/model_items.tsv")).unwrap();
    assert_eq!(kept.lines().count(), 18);
    assert!(!kept.contains("item_unseen"));
}

#[test]
fn grid_sorts_and_records_failures() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.tsv");
    write_raw(&raw);
    let config = dir.path().join("grid.cfg");
    // b = 0 is invalid for l2, so exactly half the points must fail.
    std::fs::write(
        &config,
        "variant = l2\nb_grid = 0, 0.5\nlambda_grid = 1, 5\np_grid = 0.3\n\
         validation_mode = weak\nvalidation_test_fraction = 0.25\n",
    )
    .unwrap();

    run_ok(deql().args([
        "grid",
        "--train",
        raw.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        dir.path().join("gr").to_str().unwrap(),
    ]));
    let board = std::fs::read_to_string(dir.path().join("gr/leaderboard.tsv")).unwrap();
    let rows: Vec<&str> = board.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);

    let mut ndcgs = Vec::new();
    let mut seen_failed = false;
    for row in &rows {
        let fields: Vec<&str> = row.split('\t').collect();
        let status = fields[7];
        if status == "ok" {
            assert!(!seen_failed, "ok rows must precede failed rows");
            ndcgs.push(fields[5].parse::<f64>().unwrap());
        } else {
            seen_failed = true;
            assert!(fields[8].contains("b > 0"), "failure reason recorded: {row}");
        }
    }
    assert_eq!(ndcgs.len(), 2);
    assert!(ndcgs.windows(2).all(|w| w[0] >= w[1]), "leaderboard sorted by ndcg desc");

    let grid = read_json(&dir.path().join("gr/grid.json"));
    assert_eq!(grid["points"], 4);
    assert_eq!(grid["failed_points"], 2);
    assert_eq!(grid["best"]["b"], 0.5);
    assert!(dir.path().join("gr/model.bin").exists());
    let model = WeightMatrix::load(&dir.path().join("gr/model.bin")).unwrap();
    assert_eq!(model.provenance.lambda, grid["best"]["lambda"].as_f64().unwrap());
}

#[test]
fn grid_with_no_valid_points_exits_nonzero() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.tsv");
    write_raw(&raw);
    let config = dir.path().join("grid.cfg");
    std::fs::write(&config, "variant = l2\nb_grid = 0\nlambda_grid = 1\np_grid = 0.3\n").unwrap();

    run_err(deql().args([
        "grid",
        "--train",
        raw.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("gr").to_str().unwrap(),
    ]));
    assert!(dir.path().join("gr/leaderboard.tsv").exists());
    let grid = read_json(&dir.path().join("gr/grid.json"));
    assert!(grid["best"].is_null());
}

#[test]
fn grid_metrics_invariant_under_hyperparameter_doubling() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.tsv");
    write_raw(&raw);
    let mut boards = Vec::new();
    for (name, a, b, lambda) in [("g1", "1", "0.5", "2"), ("g2", "2", "1.0", "8")] {
        let config = dir.path().join(format!("{name}.cfg"));
        std::fs::write(
            &config,
            format!(
                "variant = l2\na = {a}\nb_grid = {b}\nlambda_grid = {lambda}\np_grid = 0.2, 0.4\n\
                 validation_mode = weak\n"
            ),
        )
        .unwrap();
        run_ok(deql().args([
            "grid",
            "--train",
            raw.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            dir.path().join(name).to_str().unwrap(),
        ]));
        let board = std::fs::read_to_string(dir.path().join(name).join("leaderboard.tsv")).unwrap();
        // Keep only the metric columns: scaling (a, b, lambda) jointly leaves
        // the solution, hence the metrics, unchanged.
        let metrics: Vec<String> = board
            .lines()
            .skip(1)
            .map(|row| {
                let f: Vec<&str> = row.split('\t').collect();
                format!("{}|{}|{}|{}", f[4], f[5], f[6], f[7])
            })
            .collect();
        boards.push(metrics);
    }
    assert_eq!(boards[0], boards[1]);
}

#[test]
fn verify_passes_fails_under_fault_and_is_deterministic() {
    let dir = tempfile::tempdir().expect("tempdir");
    run_ok(deql().args([
        "verify",
        "--seed",
        "4",
        "--out",
        dir.path().join("v1").to_str().unwrap(),
    ]));
    run_ok(deql().args([
        "verify",
        "--seed",
        "4",
        "--out",
        dir.path().join("v2").to_str().unwrap(),
    ]));
    let r1 = std::fs::read(dir.path().join("v1/verify.json")).unwrap();
    let r2 = std::fs::read(dir.path().join("v2/verify.json")).unwrap();
    assert_eq!(r1, r2, "same seed must produce an identical report");

    let report = read_json(&dir.path().join("v1/verify.json"));
    assert_eq!(report["all_pass"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 10);

    let out = run_err(deql().args(["verify", "--seed", "4", "--flip-miller-denominator"]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let fast_line = stdout
        .lines()
        .find(|l| l.contains("fast_equals_direct"))
        .expect("fast_equals_direct line");
    assert!(fast_line.contains("FAIL"), "fault injection must fail the check: {fast_line}");
    assert_eq!(
        stdout.lines().filter(|l| l.contains("FAIL")).count(),
        2,
        "only the equivalence check and the summary flip: {stdout}"
    );
}

#[test]
fn bench_reports_rows_for_each_size() {
    let dir = tempfile::tempdir().expect("tempdir");
    run_ok(deql().args([
        "bench",
        "--n",
        "40,60",
        "--reps",
        "1",
        "--seed",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    let table = std::fs::read_to_string(dir.path().join("bench.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "n\tt_direct_seconds\tt_fast_seconds\tratio");
    assert_eq!(lines.len(), 3);
    for row in &lines[1..] {
        let fields: Vec<&str> = row.split('\t').collect();
        assert!(fields[1].parse::<f64>().unwrap() > 0.0);
        assert!(fields[3].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn rejects_bad_inputs_with_clear_errors() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.tsv");
    write_raw(&raw);

    let out = run_err(deql().args([
        "train",
        "--train",
        raw.to_str().unwrap(),
        "--variant",
        "l2",
        "--b",
        "0",
        "--p",
        "0.3",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]));
    assert!(String::from_utf8_lossy(&out.stderr).contains("b > 0"));

    let out = run_err(deql().args([
        "train",
        "--train",
        dir.path().join("missing.tsv").to_str().unwrap(),
        "--variant",
        "l2",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]));
    assert!(!out.stderr.is_empty());

    let mut cmd = deql();
    cmd.env("DEQL_THREADS", "zero");
    cmd.args(["verify", "--seed", "1"]);
    let out = run_err(&mut cmd);
    assert!(String::from_utf8_lossy(&out.stderr).contains("DEQL_THREADS"));
}
