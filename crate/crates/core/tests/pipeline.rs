mod common;

use egolabel::energy::{total_energy, EnergyWeights};
use egolabel::metrics::pa_mpjpe;
use egolabel::optimize::{initial_state, optimize_window, OptimizerConfig};
use egolabel::par::Execution;
use egolabel::pipeline::*;
use egolabel::prior::MotionPrior;
use egolabel::skeleton::{BoneTopology, NUM_JOINTS};
use egolabel::synth::{gen_scenario, MotionKind, NoiseConfig, Occlusion, ScenarioConfig};
use egolabel::Error;
use nalgebra::Vector2;

fn quick() -> PipelineConfig {
    PipelineConfig {
        window: 20,
        stride: 20,
        optimizer: OptimizerConfig {
            max_iters: 400,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn noiseless_static_scenario_is_reproduced() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 45,
        motion: MotionKind::Static,
        noise: NoiseConfig::zero(),
        ..Default::default()
    })
    .unwrap();
    let labels = generate_pseudo_labels(&s.dataset, &EnergyWeights::default(), &BoneTopology::standard(), None, &quick()).unwrap();
    assert_eq!(labels.windows.len(), 3);
    assert_eq!(labels.labeled_fraction(), 1.0);
    let err = pa_mpjpe(&labels.to_pose_sequence(30.0), &s.gt_poses).unwrap().mean;
    assert!(err < 1.0, "{err}");
}

#[test]
fn noiseless_walk_stays_close() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 40,
        noise: NoiseConfig::zero(),
        ..Default::default()
    })
    .unwrap();
    let labels = generate_pseudo_labels(&s.dataset, &EnergyWeights::default(), &BoneTopology::standard(), None, &quick()).unwrap();
    let err = pa_mpjpe(&labels.to_pose_sequence(30.0), &s.gt_poses).unwrap().mean;
    // The velocity penalty does not vanish on a moving ground truth, so the
    // optimum sits slightly off it.
    assert!(err < 5.0, "{err}");
}

#[test]
fn single_window_matches_direct_call() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 20,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let weights = EnergyWeights::default();
    let topo = BoneTopology::standard();
    let config = quick();
    let labels = generate_pseudo_labels(&s.dataset, &weights, &topo, None, &config).unwrap();
    let obs = s.dataset.window(0, 20).unwrap();
    let direct = optimize_window(&obs, &weights, &topo, None, &config.optimizer).unwrap();
    assert_eq!(labels.windows.len(), 1);
    assert_eq!(labels.windows[0].result.as_ref().unwrap(), &direct);
    for (i, l) in labels.labels.iter().enumerate() {
        let l = l.as_ref().unwrap();
        assert_eq!(l.pose, direct.final_state.poses[i]);
        assert_eq!(l.camera, direct.final_state.camera(i));
    }
}

#[test]
fn optimized_windows_never_exceed_initial_energy() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 50,
        seed: 8,
        motion: MotionKind::RandomSmooth,
        ..Default::default()
    })
    .unwrap();
    let weights = EnergyWeights::default();
    let topo = BoneTopology::standard();
    let mut config = quick();
    config.stride = 15;
    let labels = generate_pseudo_labels(&s.dataset, &weights, &topo, None, &config).unwrap();
    assert_eq!(labels.windows.iter().map(|w| w.offset).collect::<Vec<_>>(), vec![0, 15, 30]);
    for w in &labels.windows {
        let obs = s.dataset.window(w.offset, w.len).unwrap();
        let prior = MotionPrior::identity(w.len);
        let (init, _) = initial_state(&obs, &prior).unwrap();
        let e0 = total_energy(&init, &obs, &weights, &topo, Some(&prior)).unwrap().total;
        let rep = w.result.as_ref().unwrap();
        assert!(rep.final_energy <= e0);
        assert!((rep.initial_energy - e0).abs() <= 1e-12 * e0);
    }
    // Overlaps are stitched by nearest window center.
    let owners: Vec<usize> = labels.labels.iter().map(|l| l.as_ref().unwrap().window).collect();
    assert_eq!(owners[0], 0);
    assert_eq!(owners[17], 0);
    assert_eq!(owners[18], 1);
    assert_eq!(owners[49], 2);
}

#[test]
fn occlusion_keeps_every_frame_labeled_and_beats_egocentric_only() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 40,
        occlusion: Occlusion::LowerBodyEgo,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let topo = BoneTopology::standard();
    let config = quick();
    let full = generate_pseudo_labels(&s.dataset, &EnergyWeights::default(), &topo, None, &config).unwrap();
    let ego = generate_pseudo_labels(&s.dataset, &EnergyWeights::default().egocentric_only(), &topo, None, &config).unwrap();
    assert_eq!(full.labeled_fraction(), 1.0);
    let ef = pa_mpjpe(&full.to_pose_sequence(30.0), &s.gt_poses).unwrap().mean;
    let ee = pa_mpjpe(&ego.to_pose_sequence(30.0), &s.gt_poses).unwrap().mean;
    assert!(ef < ee, "{ef} vs {ee}");
}

#[test]
fn failed_windows_leave_frames_unlabeled() {
    let mut s = gen_scenario(&ScenarioConfig {
        frames: 40,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    for f in s.dataset.frames[20..].iter_mut() {
        f.ext_2d.confidence = [0.0; NUM_JOINTS];
    }
    let labels = generate_pseudo_labels(&s.dataset, &EnergyWeights::default(), &BoneTopology::standard(), None, &quick()).unwrap();
    assert_eq!(labels.failed_windows(), 1);
    assert!(!labels.all_windows_failed());
    assert!(labels.labels[..20].iter().all(|l| l.is_some()));
    assert!(labels.labels[20..].iter().all(|l| l.is_none()));
    assert_eq!(labels.labeled_fraction(), 0.5);
}

#[test]
fn too_short_and_mismatched_prior_are_rejected() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 10,
        ..Default::default()
    })
    .unwrap();
    let topo = BoneTopology::standard();
    let r = generate_pseudo_labels(&s.dataset, &EnergyWeights::default(), &topo, None, &quick());
    assert!(matches!(r, Err(Error::SequenceTooShort { len: 10, window: 20 })));
    assert!(matches!(segment(&s.dataset, 20, 20), Err(Error::SequenceTooShort { .. })));
    let mut config = quick();
    config.window = 10;
    let prior = MotionPrior::identity(5);
    assert!(generate_pseudo_labels(&s.dataset, &EnergyWeights::default(), &topo, Some(&prior), &config).is_err());
}

#[test]
fn segments_cover_every_frame_and_slice_slam() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 120,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let segs = segment(&s.dataset, 50, 50).unwrap();
    assert_eq!(segs.iter().map(|g| g.offset).collect::<Vec<_>>(), vec![0, 50, 70]);
    let mut seen = [false; 120];
    for g in &segs {
        assert_eq!(g.obs.len(), 50);
        assert_eq!(g.obs.slam_rel.len(), 49);
        assert_eq!(g.obs.slam_rel[0], s.dataset.frames[g.offset].slam_to_next);
        seen[g.offset..g.offset + 50].iter_mut().for_each(|v| *v = true);
    }
    assert!(seen.iter().all(|v| *v));
}

#[test]
fn parallel_and_sequential_agree() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 60,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let topo = BoneTopology::standard();
    let mut config = quick();
    config.stride = 10;
    config.execution = Execution::Sequential;
    let seq = generate_pseudo_labels(&s.dataset, &EnergyWeights::default(), &topo, None, &config).unwrap();
    config.execution = Execution::Parallel;
    let par = generate_pseudo_labels(&s.dataset, &EnergyWeights::default(), &topo, None, &config).unwrap();
    assert_eq!(seq, par);
}

#[test]
fn heatmap_argmax_tracks_projection() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 30,
        motion: MotionKind::RandomSmooth,
        noise: NoiseConfig::zero(),
        seed: 6,
        ..Default::default()
    })
    .unwrap();
    let fisheye = s.dataset.calibration.fisheye;
    let grid = HeatmapGrid::for_fisheye(&fisheye, 64, 64, 2.5).unwrap();
    let enc = labels_to_heatmaps_distances(&s.gt_poses.frames, &fisheye, &grid);
    for (f, pose) in s.gt_poses.frames.iter().enumerate() {
        for j in 0..NUM_JOINTS {
            let map = &enc.heatmaps[f][j * grid.cells()..(j + 1) * grid.cells()];
            let (u, v) = heatmap_argmax(map, &grid);
            let truth = grid.to_grid(&fisheye.project(&pose.joints[j]).unwrap());
            assert!((Vector2::new(u as f64, v as f64) - truth).norm() <= 1.0);
            assert!(map.iter().all(|x| *x >= 0.0 && *x <= 1.0));
            let direct = (pose.joints[j].x.powi(2) + pose.joints[j].y.powi(2) + pose.joints[j].z.powi(2)).sqrt();
            assert!((enc.distances[f][j] - direct).abs() < 1e-12);

            // Decoding recovers the joint within two grid cells mapped to mm.
            let back = decode_joint(map, enc.distances[f][j], &fisheye, &grid).unwrap();
            let px = fisheye.project(&pose.joints[j]).unwrap();
            let step = Vector2::new(grid.scale[0], 0.0);
            let neighbour = fisheye.unproject(&(px + step), direct).unwrap();
            let cell_mm = (neighbour - pose.joints[j]).norm().max(
                (fisheye.unproject(&(px + Vector2::new(0.0, grid.scale[1])), direct).unwrap() - pose.joints[j]).norm(),
            );
            assert!((back - pose.joints[j]).norm() <= 2.0 * cell_mm, "frame {f} joint {j}");
        }
    }
}

#[test]
fn bootstrap_pass_through_equals_one_pass() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 20,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let topo = BoneTopology::standard();
    let w = EnergyWeights::default();
    let config = quick();
    let direct = generate_pseudo_labels(&s.dataset, &w, &topo, None, &config).unwrap();
    let boot = bootstrap(&s.dataset, &mut PassThroughEstimator, &w, &topo, None, &config, 1, Some(&s.gt_poses)).unwrap();
    assert_eq!(boot.labels, direct);
    assert_eq!(boot.pa_mpjpe_trace.len(), 1);
    assert_eq!(boot.iterations, 1);
    assert!(bootstrap(&s.dataset, &mut PassThroughEstimator, &w, &topo, None, &config, 0, None).is_err());
}

#[test]
fn bootstrap_reference_estimator_improves_labels() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 40,
        seed: 12,
        ..Default::default()
    })
    .unwrap();
    let topo = BoneTopology::standard();
    let mut est = ReferenceEstimator::new(s.dataset.ego_3d_init(), 0.5).unwrap();
    let boot = bootstrap(&s.dataset, &mut est, &EnergyWeights::default(), &topo, None, &quick(), 3, Some(&s.gt_poses)).unwrap();
    assert_eq!(boot.pa_mpjpe_trace.len(), 3);
    assert!(boot.pa_mpjpe_trace.windows(2).all(|w| w[1] <= w[0]), "{:?}", boot.pa_mpjpe_trace);
}

struct Broken;

impl Estimator for Broken {
    fn predict(&mut self, d: &SequenceDataset) -> Result<Vec<egolabel::skeleton::JointSet15>, String> {
        Ok(d.ego_3d_init())
    }
    fn update(&mut self, _: &PseudoLabelSet) -> Result<(), String> {
        Err("out of memory".into())
    }
}

#[test]
fn bootstrap_reports_estimator_failures_with_iteration() {
    let s = gen_scenario(&ScenarioConfig {
        frames: 20,
        ..Default::default()
    })
    .unwrap();
    let r = bootstrap(&s.dataset, &mut Broken, &EnergyWeights::default(), &BoneTopology::standard(), None, &quick(), 2, None);
    assert!(matches!(r, Err(Error::Estimator { iteration: 0, .. })));
}
