use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn egolabel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egolabel")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = egolabel(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(args: &[&str]) -> serde_json::Value {
    serde_json::from_str(&ok(args)).unwrap()
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["synth", "--out", p(&a), "--seed", "7", "--frames", "30"]);
    ok(&["synth", "--out", p(&b), "--seed", "7", "--frames", "30"]);
    for name in ["dataset.jsonl", "calib.json", "gt.json", "init.json", "gt_cameras.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    ok(&["synth", "--out", p(&c), "--seed", "8", "--frames", "30"]);
    assert_ne!(fs::read(a.join("dataset.jsonl")).unwrap(), fs::read(c.join("dataset.jsonl")).unwrap());
}

#[test]
fn evaluating_ground_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    ok(&["synth", "--out", p(&s), "--frames", "20"]);
    let gt = s.join("gt.json");
    let text = ok(&["evaluate", "--pred", p(&gt), "--gt", p(&gt)]);
    assert!(text.contains("PA-MPJPE 0.000 mm"));
    assert!(text.contains("BA-MPJPE 0.000 mm"));
    let report = json(&["evaluate", "--pred", p(&gt), "--gt", p(&gt), "--json", "--per-action"]);
    assert!(report["pa_mpjpe"].as_f64().unwrap() < 1e-9);
    assert!(report["ba_mpjpe"].as_f64().unwrap() < 1e-9);
    assert_eq!(report["per_action"]["walk_cycle"]["frames"], 20);
}

#[test]
fn chain_halves_the_error_on_the_occlusion_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    let o = dir.path().join("o");
    let trace = dir.path().join("trace.csv");
    ok(&["synth", "--out", p(&s), "--frames", "100", "--occlusion", "lower-body-ego"]);
    ok(&["optimize", "--dataset", p(&s.join("dataset.jsonl")), "--out", p(&o), "--trace", p(&trace)]);
    let gt = s.join("gt.json");
    let before = json(&["evaluate", "--pred", p(&s.join("init.json")), "--gt", p(&gt), "--json"]);
    let after = json(&["evaluate", "--pred", p(&o.join("labels.jsonl")), "--gt", p(&gt), "--json"]);
    let from_poses = json(&["evaluate", "--pred", p(&o.join("poses.json")), "--gt", p(&gt), "--json"]);
    let (b, a) = (before["pa_mpjpe"].as_f64().unwrap(), after["pa_mpjpe"].as_f64().unwrap());
    assert!(a <= 0.5 * b, "{a} vs {b}");
    assert_eq!(after, from_poses);

    let csv = fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("window,iter,total,reproj_ego"));
    assert!(csv.lines().skip(1).any(|l| l.starts_with("50,")));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["windows"].as_array().unwrap().len(), 2);
    assert_eq!(summary["labeled_fraction"], 1.0);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    ok(&["synth", "--out", p(&s), "--frames", "60", "--seed", "3"]);
    let data = s.join("dataset.jsonl");
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let o = dir.path().join(format!("o{threads}"));
        ok(&["optimize", "--dataset", p(&data), "--out", p(&o), "--window", "20", "--max-iters", "200", "--threads", threads]);
        outputs.push(
            ["labels.jsonl", "heatmaps.bin", "heatmaps.json", "poses.json", "summary.json"]
                .map(|n| fs::read(o.join(n)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    ok(&["synth", "--out", p(&s), "--frames", "40"]);
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"window": 20, "optimizer": {"max_iters": 50, "rotation_mode": "axis_angle"}}"#).unwrap();
    let data = s.join("dataset.jsonl");
    let a = dir.path().join("a");
    ok(&["optimize", "--dataset", p(&data), "--out", p(&a), "--config", p(&config)]);
    let b = dir.path().join("b");
    ok(&["optimize", "--dataset", p(&data), "--out", p(&b), "--config", p(&config), "--window", "40"]);
    let windows = |d: &Path| {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
        v["windows"].as_array().unwrap().iter().map(|w| w["len"].as_u64().unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(windows(&a), vec![20, 20]);
    assert_eq!(windows(&b), vec![40]);
}

#[test]
fn bootstrap_reports_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    let o = dir.path().join("o");
    ok(&["synth", "--out", p(&s), "--frames", "50", "--seed", "2"]);
    ok(&[
        "bootstrap", "--dataset", p(&s.join("dataset.jsonl")), "--out", p(&o), "--iters", "2", "--alpha", "0.5",
        "--gt", p(&s.join("gt.json")), "--max-iters", "300",
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("bootstrap.json")).unwrap()).unwrap();
    let trace: Vec<f64> = report["pa_mpjpe_trace"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(trace.len(), 2);
    assert!(trace[1] <= trace[0]);
    assert!(o.join("labels.jsonl").exists());
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    ok(&["synth", "--out", p(&s), "--frames", "20"]);
    let data = s.join("dataset.jsonl");

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"frame\": 0}\n").unwrap();
    let out = egolabel(&["optimize", "--dataset", p(&bad), "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let missing = egolabel(&["evaluate", "--pred", "/nonexistent.json", "--gt", p(&s.join("gt.json"))]);
    assert_eq!(missing.status.code(), Some(1));

    // No external keypoints anywhere: every window fails to initialize.
    let blind: String = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            for kp in v["ext2d"].as_array_mut().unwrap() {
                kp[2] = serde_json::json!(0.0);
            }
            format!("{v}\n")
        })
        .collect();
    let blind_path = s.join("blind.jsonl");
    fs::write(&blind_path, blind).unwrap();
    let out_dir = dir.path().join("blind");
    let out = egolabel(&["optimize", "--dataset", p(&blind_path), "--out", p(&out_dir), "--window", "10"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let labels = fs::read_to_string(out_dir.join("labels.jsonl")).unwrap();
    assert!(labels.lines().all(|l| l.contains("unlabeled")));
}
