use std::path::Path;
use std::process::{Command, Output};

fn climsurr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_climsurr"))
        .args(args)
        .current_dir(dir)
        .env_remove("CLIMSURR_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = climsurr(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

fn headers(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

#[test]
fn smoke_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen-scenarios", "--n", "3", "--seed", "1", "--out", "sc"]);
    ok(d, &["simulate", "--scenarios", "sc", "--out", "temps", "--jobs", "2"]);
    let temps: Vec<_> = std::fs::read_dir(d.join("temps"))
        .unwrap()
        .filter_map(|e| {
            let n = e.unwrap().file_name().to_string_lossy().into_owned();
            n.ends_with(".csv").then_some(n)
        })
        .collect();
    assert_eq!(temps.len(), 3);

    let msg = ok(d, &["make-dataset", "--scenarios", "sc", "--temps", "temps", "--out", "ds/dataset.bin"]);
    assert!(msg.contains("61 per scenario"), "{msg}");
    ok(
        d,
        &["train-surrogate", "--dataset", "ds/dataset.bin", "--encoder", "gru", "--hidden", "4", "--epochs", "1", "--out", "ck/gru.ckpt"],
    );
    assert!(d.join("ck/gru.metrics.json").exists());
    let report = ok(d, &["eval-surrogate", "--ckpt", "ck/gru.ckpt", "--dataset", "ds/dataset.bin", "--split", "train"]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["rmse"].as_f64().unwrap().is_finite());

    std::fs::write(d.join("sched.json"), "[[[2,0,0,0],[2,0,0,0],[2,0,0,0],[2,0,0,0]]]").unwrap();
    ok(d, &["run-episode", "--actions", "sched.json", "--out", "ep"]);
    let rows = csv_rows(&d.join("ep/episode.csv"));
    assert_eq!(rows.len(), 35 * 4);
    ok(
        d,
        &["run-episode", "--actions", "sched.json", "--engine", "gru", "--ckpt", "ck/gru.ckpt", "--out", "ep-gru"],
    );

    ok(d, &["train-marl", "--steps", "140", "--parallel-envs", "2", "--out", "marl"]);
    for f in ["policies.bin", "rewards.csv", "levers.csv", "trajectories.bin", "updates.json", "summary.json"] {
        assert!(d.join("marl").join(f).exists(), "{f}");
    }
    ok(d, &["run-episode", "--actions", "marl/policies.bin", "--greedy", "--out", "ep-policy"]);
    ok(d, &["eval-consistency", "--manifest", "marl", "--n", "4", "--out", "cons/report.json"]);
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("cons/report.json")).unwrap()).unwrap();
    // simulator-trained trajectories replay through the simulator exactly
    assert_eq!(rep["pooled_rmse"].as_f64().unwrap(), 0.0);

    ok(
        d,
        &["bench", "--engine", "sim", "--engine", "gru", "--ckpt", "ck/gru.ckpt", "--steps", "1000", "--warmup", "10", "--out", "bench.json"],
    );
    let bench: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("bench.json")).unwrap()).unwrap();
    assert_eq!(bench.as_array().unwrap().len(), 2);
    assert_eq!(bench[0]["speedup_vs_sim"].as_f64().unwrap(), 1.0);

    ok(d, &["plot-data", "--figure", "temp-ensemble", "--input", "temps", "--out", "plots/temp.csv"]);
    assert_eq!(headers(&d.join("plots/temp.csv"))[..4], ["year", "median", "p05", "p95"]);
    for row in csv_rows(&d.join("plots/temp.csv")) {
        let v: Vec<f64> = row[1..4].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[1] <= v[0] && v[0] <= v[2]);
    }
    ok(d, &["plot-data", "--figure", "emission-ensemble", "--input", "sc", "--out", "plots/em.csv"]);
    ok(d, &["plot-data", "--figure", "reward-curve", "--input", "marl", "--out", "plots/reward.csv"]);
    ok(d, &["plot-data", "--figure", "lever-curve", "--input", "marl", "--out", "plots/lever.csv"]);
    ok(
        d,
        &["plot-data", "--figure", "test-sequences", "--input", "ds/dataset.bin", "--ckpt", "ck/gru.ckpt", "--out", "plots/seq.csv"],
    );
}

#[test]
fn exit_codes_are_distinct() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&climsurr(d, &["gen-scenarios", "--no-such-flag"])), 2);
    assert_eq!(code(&climsurr(d, &["simulate", "--scenarios", "missing"])), 3);

    ok(d, &["gen-scenarios", "--n", "2", "--out", "sc"]);
    let before = std::fs::read(d.join("sc/ensemble.bin")).unwrap();
    let again = climsurr(d, &["gen-scenarios", "--n", "2", "--seed", "9", "--out", "sc"]);
    assert_eq!(code(&again), 1);
    assert_eq!(std::fs::read(d.join("sc/ensemble.bin")).unwrap(), before);

    let mut tampered = before.clone();
    let last = tampered.len() - 1;
    tampered[last] ^= 1;
    std::fs::write(d.join("sc/ensemble.bin"), tampered).unwrap();
    assert_eq!(code(&climsurr(d, &["simulate", "--scenarios", "sc", "--out", "t"])), 4);

    ok(d, &["gen-scenarios", "--n", "2", "--out", "sc", "--force"]);
    ok(d, &["simulate", "--scenarios", "sc", "--out", "t"]);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("gen.toml"), "n_scenarios = 2\nseed = 5\n").unwrap();
    let seed_of = |dir: &str| -> u64 {
        let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join(dir).join("ensemble.json")).unwrap()).unwrap();
        m["seed"].as_u64().unwrap()
    };
    ok(d, &["gen-scenarios", "--config", "gen.toml", "--out", "a"]);
    assert_eq!(seed_of("a"), 5);
    ok(d, &["gen-scenarios", "--config", "gen.toml", "--seed", "7", "--out", "b"]);
    assert_eq!(seed_of("b"), 7);
    let err = climsurr(d, &["gen-scenarios", "--config", "gen.toml", "--seed", "7", "--out", "c"]);
    assert!(String::from_utf8_lossy(&err.stderr).contains("flags [seed]"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_climsurr"))
        .args(["gen-scenarios", "--n", "1"])
        .current_dir(tmp.path())
        .env("CLIMSURR_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(tmp.path().join("root/scenarios/ensemble.bin").exists());
}

#[test]
fn stages_are_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for run in ["r1", "r2"] {
        ok(d, &["gen-scenarios", "--n", "3", "--seed", "4", "--out", &format!("{run}/sc")]);
        ok(d, &["simulate", "--scenarios", &format!("{run}/sc"), "--out", &format!("{run}/temps")]);
        ok(d, &["make-dataset", "--scenarios", &format!("{run}/sc"), "--out", &format!("{run}/ds.bin")]);
        ok(d, &["train-marl", "--steps", "70", "--seed", "3", "--out", &format!("{run}/marl")]);
    }
    for f in ["sc/ensemble.bin", "sc/baseline.csv", "temps/temp_00002.csv", "ds.bin", "marl/policies.bin", "marl/rewards.csv", "marl/trajectories.bin"] {
        assert_eq!(
            std::fs::read(d.join("r1").join(f)).unwrap(),
            std::fs::read(d.join("r2").join(f)).unwrap(),
            "{f} differs"
        );
    }
}
