use egolabel::energy::EnergyWeights;
use egolabel::geometry::Calibration;
use egolabel::optimize::OptimizerConfig;
use egolabel::pipeline::{generate_pseudo_labels, read_label_poses, PipelineConfig, SequenceDataset};
use egolabel::skeleton::{BoneTopology, PoseSequence, NUM_JOINTS};
use egolabel::synth::{gen_scenario, Occlusion, ScenarioConfig};
use egolabel::Error;

fn scenario() -> egolabel::synth::Scenario {
    gen_scenario(&ScenarioConfig {
        frames: 12,
        seed: 21,
        occlusion: Occlusion::HandsExt,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn dataset_round_trips_through_disk() {
    let s = scenario();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seq.jsonl");
    s.dataset.save(&path).unwrap();
    let back = SequenceDataset::load(&path, s.dataset.calibration).unwrap();
    assert_eq!(back.id, "seq");
    assert_eq!(back.frames, s.dataset.frames);
    assert!(back.frames.last().unwrap().slam_to_next.is_none());
    assert_eq!(back.tags().unwrap()[0], "walk_cycle");
}

#[test]
fn scenario_files_are_readable() {
    let s = scenario();
    let dir = tempfile::tempdir().unwrap();
    s.write(dir.path()).unwrap();
    let calib = Calibration::load(dir.path().join("calib.json")).unwrap();
    assert_eq!(calib, s.dataset.calibration);
    let ds = SequenceDataset::load(dir.path().join("dataset.jsonl"), calib).unwrap();
    assert_eq!(ds.frames, s.dataset.frames);
    let gt = PoseSequence::load(dir.path().join("gt.json")).unwrap();
    assert_eq!(gt.frames, s.gt_poses.frames);
    let init = PoseSequence::load(dir.path().join("init.json")).unwrap();
    assert_eq!(init.len(), 12);
}

#[test]
fn schema_violations_are_reported() {
    let s = scenario();
    let calib = s.dataset.calibration;
    let text = s.dataset.to_jsonl().unwrap();
    let first = text.lines().next().unwrap();

    let bad_json = format!("{first}\n{{not json\n");
    let e = SequenceDataset::from_jsonl(&bad_json, calib, "x").unwrap_err();
    assert!(matches!(&e, Error::Schema(m) if m.starts_with("line 2")), "{e}");

    let mut v: serde_json::Value = serde_json::from_str(first).unwrap();
    v["ego2d"].as_array_mut().unwrap().pop();
    let e = SequenceDataset::from_jsonl(&v.to_string(), calib, "x").unwrap_err();
    assert!(matches!(&e, Error::Schema(m) if m.contains("ego2d")), "{e}");

    let mut v: serde_json::Value = serde_json::from_str(first).unwrap();
    v["unexpected"] = serde_json::json!(1);
    assert!(matches!(SequenceDataset::from_jsonl(&v.to_string(), calib, "x"), Err(Error::Schema(_))));

    let mut v: serde_json::Value = serde_json::from_str(first).unwrap();
    v["ext2d"][0][2] = serde_json::json!(-1.0);
    assert!(matches!(SequenceDataset::from_jsonl(&v.to_string(), calib, "x"), Err(Error::Schema(_))));

    let twice = format!("{first}\n{first}\n");
    assert!(matches!(SequenceDataset::from_jsonl(&twice, calib, "x"), Err(Error::Schema(_))));

    let mut v: serde_json::Value = serde_json::from_str(first).unwrap();
    v["slam_to_next"]["R"][0] = serde_json::json!(2.0);
    assert!(matches!(SequenceDataset::from_jsonl(&v.to_string(), calib, "x"), Err(Error::Schema(_))));

    assert!(matches!(Calibration::from_json("{}"), Err(Error::Schema(_))));
    assert!(matches!(PoseSequence::from_json("{\"frames\": []}"), Err(Error::Schema(_))));
}

#[test]
fn labels_write_and_read_back() {
    let s = scenario();
    let config = PipelineConfig {
        window: 12,
        stride: 12,
        optimizer: OptimizerConfig {
            max_iters: 100,
            ..Default::default()
        },
        heatmap_width: 16,
        heatmap_height: 12,
        ..Default::default()
    };
    let labels =
        generate_pseudo_labels(&s.dataset, &EnergyWeights::default(), &BoneTopology::standard(), None, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = labels.write(dir.path()).unwrap();

    let poses = read_label_poses(&std::fs::read_to_string(&files.labels).unwrap()).unwrap();
    assert_eq!(poses.len(), 12);
    for ((frame, pose), label) in poses.iter().zip(&labels.labels) {
        let label = label.as_ref().unwrap();
        assert_eq!(*frame, s.dataset.frames[*frame].frame);
        assert_eq!(pose.joints, label.pose.joints);
    }

    let bin = std::fs::read(&files.heatmaps).unwrap();
    assert_eq!(bin.len(), 12 * NUM_JOINTS * 16 * 12 * 4);
    let first = f32::from_le_bytes(bin[..4].try_into().unwrap());
    assert_eq!(first, labels.labels[0].as_ref().unwrap().heatmaps[0]);

    let header: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&files.header).unwrap()).unwrap();
    assert_eq!(header["frames"], 12);
    assert_eq!(header["width"], 16);
    assert_eq!(header["height"], 12);
    assert_eq!(header["dtype"], "float32");

    assert!(matches!(read_label_poses("{\"frame\": 0, \"pose\": [[0,0,0]]}"), Err(Error::Schema(_))));
    let unlabeled = read_label_poses("{\"frame\": 3, \"pose\": null}").unwrap();
    assert_eq!(unlabeled[0].0, 3);
    assert_eq!(unlabeled[0].1.valid_count(), 0);
}

#[test]
fn optimizer_config_rejects_unknown_keys() {
    assert!(OptimizerConfig::from_json("{\"max_iters\": 5}").is_ok());
    assert!(matches!(OptimizerConfig::from_json("{\"max_iter\": 5}"), Err(Error::Schema(_))));
    assert!(matches!(OptimizerConfig::from_json("{\"max_iters\": 0}"), Err(Error::Schema(_)) | Err(Error::InvalidParameter(_))));
}
