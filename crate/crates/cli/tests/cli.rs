use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn splitplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Three layers of 4 ms client time, free server time and 1 ms transfers
/// over a 1e7 bps link, valued 1, 1 and 10.
fn write_fixture(dir: &Path, deadline: Value) -> (PathBuf, PathBuf) {
    let layer = |index: u64, r: f64| {
        serde_json::json!({
            "index": index, "kind": "custom", "r": r,
            "client_time_s": 0.004, "server_time_s": 0.0, "tau_bytes": 1250
        })
    };
    let profile = serde_json::json!({
        "model": "fixture", "seq_len": 1, "metric": "flop",
        "layers": [layer(0, 1.0), layer(1, 1.0), layer(2, 10.0)]
    });
    let scenario = serde_json::json!({
        "uplink_bps": 1e7, "downlink_bps": 1e7, "propagation_s": 0.0,
        "deadline_s": deadline, "unit_s": 0.001, "rounding": "paper"
    });
    let p = dir.join("profile.json");
    let s = dir.join("scenario.json");
    fs::write(&p, profile.to_string()).unwrap();
    fs::write(&s, scenario.to_string()).unwrap();
    (p, s)
}

fn plan(dir: &Path, profile: &Path, scenario: &Path, planner: &str) -> (Output, PathBuf) {
    let out = dir.join(format!("{planner}.json"));
    let run = splitplan(&[
        "plan",
        "--profile",
        path_str(profile),
        "--scenario",
        path_str(scenario),
        "--planner",
        planner,
        "--out",
        path_str(&out),
    ]);
    (run, out)
}

#[test]
fn profile_is_reproducible_and_has_manifest() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let run = splitplan(&[
            "profile",
            "--model",
            "bert-12",
            "--seq-len",
            "4096",
            "--calibrate-client",
            "7.727",
            "--calibrate-server",
            "0.0979",
            "--out",
            path_str(out),
        ]);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let prof = read_json(&a);
    let layers = prof["layers"].as_array().unwrap();
    let total: f64 = layers
        .iter()
        .map(|l| l["client_time_s"].as_f64().unwrap())
        .sum();
    assert!((total - 7.727).abs() < 1e-9);
    let manifest = read_json(&dir.path().join("a.json.manifest.json"));
    assert_eq!(manifest["command"], "profile");
    assert_eq!(manifest["outputs"][0], path_str(&a));
}

#[test]
fn profile_rejects_bad_input_and_unwritable_output() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("p.json");
    let zero = splitplan(&[
        "profile",
        "--model",
        "bert-12",
        "--seq-len",
        "0",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&zero), 2);
    let unknown = splitplan(&[
        "profile",
        "--model",
        "bert-99",
        "--seq-len",
        "8",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&unknown), 2);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("bert-99"));
    assert!(!out.exists());
    let blocked = dir.path().join("missing").join("p.json");
    let unwritable = splitplan(&[
        "profile",
        "--model",
        "bert-12",
        "--seq-len",
        "8",
        "--out",
        path_str(&blocked),
    ]);
    assert_eq!(code(&unwritable), 3);
}

#[test]
fn plan_fixture_matches_hand_solution() {
    let dir = TempDir::new().unwrap();
    let (profile, scenario) = write_fixture(dir.path(), serde_json::json!(0.009));
    let (run, out) = plan(dir.path(), &profile, &scenario, "dp");
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let policy = read_json(&out);
    assert_eq!(policy["pi"], serde_json::json!([0, 0, 1]));
    assert_eq!(policy["server_load"], 2.0);
    assert_eq!(policy["integer_latency"], 6);

    let (run, out) = plan(dir.path(), &profile, &scenario, "greedy");
    assert_eq!(code(&run), 0);
    assert_eq!(read_json(&out)["pi"], serde_json::json!([1, 1, 0]));
    let (run, out) = plan(dir.path(), &profile, &scenario, "oracle");
    assert_eq!(code(&run), 0);
    assert_eq!(read_json(&out)["client_value"], 10.0);
}

#[test]
fn plan_exit_codes_follow_feasibility() {
    let dir = TempDir::new().unwrap();
    let (profile, open) = write_fixture(dir.path(), Value::Null);
    let (run, out) = plan(dir.path(), &profile, &open, "dp");
    assert_eq!(code(&run), 0);
    assert_eq!(read_json(&out)["pi"], serde_json::json!([1, 1, 1]));

    let (profile, zero) = write_fixture(dir.path(), serde_json::json!(0.0));
    let (run, out) = plan(dir.path(), &profile, &zero, "dp");
    assert_eq!(code(&run), 4);
    assert_eq!(read_json(&out)["feasible"], false);
}

#[test]
fn plan_rejects_malformed_json_and_large_oracle() {
    let dir = TempDir::new().unwrap();
    let (_, scenario) = write_fixture(dir.path(), serde_json::json!(1.0));
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ not json").unwrap();
    let (run, _) = plan(dir.path(), &broken, &scenario, "dp");
    assert_eq!(code(&run), 2);

    let big = dir.path().join("bert.json");
    let run = splitplan(&[
        "profile",
        "--model",
        "bert-12",
        "--seq-len",
        "64",
        "--out",
        path_str(&big),
    ]);
    assert_eq!(code(&run), 0);
    let (run, _) = plan(dir.path(), &big, &scenario, "oracle");
    assert_eq!(code(&run), 2);
}

fn write_grid(dir: &Path, grid: Value) -> PathBuf {
    let p = dir.join("grid.json");
    fs::write(&p, grid.to_string()).unwrap();
    p
}

fn base_grid() -> Value {
    serde_json::json!({
        "models": ["bert-12", "vanilla-6x6"],
        "seq_lens": [256, 1024],
        "deadlines_s": [2.0, 1.0, 0.5],
        "links": [
            {"uplink_bps": 1e8, "downlink_bps": 1e8, "propagation_s": 0.01},
            {"uplink_bps": 1e9, "downlink_bps": 1e9, "propagation_s": 0.01}
        ]
    })
}

fn sweep(grid: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["sweep", "--grid", path_str(grid), "--out", path_str(out)];
    args.extend_from_slice(extra);
    splitplan(&args)
}

#[test]
fn sweep_output_ignores_job_count() {
    let dir = TempDir::new().unwrap();
    let grid = write_grid(dir.path(), base_grid());
    let one = dir.path().join("one.csv");
    let eight = dir.path().join("eight.csv");
    assert_eq!(code(&sweep(&grid, &one, &["--jobs", "1"])), 0);
    assert_eq!(code(&sweep(&grid, &eight, &["--jobs", "8"])), 0);
    let bytes = fs::read(&one).unwrap();
    assert_eq!(bytes, fs::read(&eight).unwrap());
    // 2 models x 2 lengths x 3 deadlines x 2 links x 4 planners
    assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), 1 + 96);
}

#[test]
fn sweep_single_cell_and_generated_deadlines() {
    let dir = TempDir::new().unwrap();
    let grid = write_grid(
        dir.path(),
        serde_json::json!({
            "models": ["bert-12"], "seq_lens": [256],
            "links": [{"uplink_bps": 1e8, "downlink_bps": 1e8, "propagation_s": 0.01}],
            "planners": ["dp"]
        }),
    );
    let out = dir.path().join("one.csv");
    assert_eq!(code(&sweep(&grid, &out, &[])), 2);
    assert_eq!(
        code(&sweep(
            &grid,
            &out,
            &["--deadline-max", "1", "--deadline-count", "1"]
        )),
        0
    );
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2);

    assert_eq!(
        code(&sweep(
            &grid,
            &out,
            &["--deadline-max", "8", "--deadline-count", "4"]
        )),
        0
    );
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let column = reader
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "deadline_s")
        .unwrap();
    let deadlines: Vec<f64> = reader
        .records()
        .map(|r| r.unwrap()[column].parse().unwrap())
        .collect();
    assert_eq!(deadlines, vec![8.0, 4.0, 2.0, 1.0]);
}

#[test]
fn sweep_rejects_empty_grid() {
    let dir = TempDir::new().unwrap();
    let mut grid = base_grid();
    grid["models"] = serde_json::json!([]);
    let grid = write_grid(dir.path(), grid);
    let out = dir.path().join("out.csv");
    assert_eq!(code(&sweep(&grid, &out, &[])), 2);
    assert!(!out.exists());
}

fn scenarios(dir: &Path) -> PathBuf {
    let grid = write_grid(dir, base_grid());
    let out = dir.join("results.csv");
    assert_eq!(code(&sweep(&grid, &out, &[])), 0);
    out
}

fn simulate(scenarios: &Path, out_dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "simulate",
        "--scenarios",
        path_str(scenarios),
        "--beta",
        "0.057",
        "--capacity-requests",
        "50",
        "--out-dir",
        path_str(out_dir),
    ];
    args.extend_from_slice(extra);
    splitplan(&args)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let index = reader
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == name)
        .unwrap();
    reader
        .records()
        .map(|r| r.unwrap()[index].to_string())
        .collect()
}

#[test]
fn compare_variants_share_arrivals_and_rerun_identically() {
    let dir = TempDir::new().unwrap();
    let table = scenarios(dir.path());
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    for out in [&first, &second] {
        let run = simulate(
            &table,
            out,
            &["--seed", "3", "--horizon", "800", "--variant", "compare"],
        );
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    }
    for variant in ["dp", "greedy", "nosplit"] {
        for file in ["requests.csv", "summary.json", "cumulative.csv"] {
            let name = format!("{variant}_{file}");
            assert_eq!(
                fs::read(first.join(&name)).unwrap(),
                fs::read(second.join(&name)).unwrap(),
                "{name}"
            );
        }
    }
    let arrivals = column(&first.join("dp_requests.csv"), "arrival_ms");
    assert_eq!(arrivals.len(), 800);
    assert_eq!(
        arrivals,
        column(&first.join("greedy_requests.csv"), "arrival_ms")
    );
    assert_eq!(
        arrivals,
        column(&first.join("nosplit_requests.csv"), "arrival_ms")
    );
    let manifest = read_json(&first.join("manifest.json"));
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 9);
}

#[test]
fn zero_horizon_writes_empty_outputs() {
    let dir = TempDir::new().unwrap();
    let table = scenarios(dir.path());
    let out = dir.path().join("sim");
    let run = simulate(
        &table,
        &out,
        &["--seed", "1", "--horizon", "0", "--variant", "dp"],
    );
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let summary = read_json(&out.join("dp_summary.json"));
    assert_eq!(summary["served"], 0);
    assert_eq!(
        fs::read_to_string(out.join("dp_cumulative.csv"))
            .unwrap()
            .lines()
            .count(),
        1
    );
}

#[test]
fn simulate_requires_seed_and_feasible_scenarios() {
    let dir = TempDir::new().unwrap();
    let table = scenarios(dir.path());
    let out = dir.path().join("sim");
    assert_eq!(code(&simulate(&table, &out, &["--horizon", "10"])), 2);

    let mut grid = base_grid();
    grid["deadlines_s"] = serde_json::json!([0.0001]);
    let grid = write_grid(dir.path(), grid);
    let hopeless = dir.path().join("hopeless.csv");
    assert_eq!(code(&sweep(&grid, &hopeless, &[])), 0);
    assert_eq!(
        code(&simulate(
            &hopeless,
            &out,
            &["--seed", "1", "--horizon", "10"]
        )),
        2
    );
}
