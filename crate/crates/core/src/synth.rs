//! Seeded synthetic scenarios with exact ground truth.
//!
//! World axes: x forward along the walking direction, z up. The body frame
//! of the skeleton (x right, y forward, z up, neck at the origin) is placed
//! at the neck. A fisheye camera sits on a cap brim 150 mm ahead of and
//! 250 mm above the neck, tilted 0.3 rad forward from straight down. A
//! static pinhole camera stands 3.5 m to the side at 1 m height.
//!
//! `walk_cycle` is the closed-form gait with phase `φ = 2π·0.9·t`:
//! hips swing `±0.35 sin φ`, knees flex `0.25 (1 + sin(φ + 1))` (left leg
//! half a cycle later), shoulders swing `∓0.3 sin φ` with elbows flexed
//! `0.3 + 0.15 (1 − cos φ)`, the torso leans `0.08 + 0.02 sin 2φ`, the head
//! nods `0.05 sin φ` and turns `0.1 sin(φ/2)`, and the neck travels at
//! 0.6 m/s with `20 cos 2φ` mm bounce and `15 sin φ` mm sway.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::energy::Keypoints2d;
use crate::error::{Error, Result};
use crate::geometry::{Calibration, RigidTransform};
use crate::pipeline::{FrameRecord, SequenceDataset};
use crate::skeleton::{
    joint, neutral_directions, BoneTopology, JointSet15, PoseSequence, HANDS, LOWER_BODY, NUM_JOINTS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    WalkCycle,
    RandomSmooth,
    /// Body frozen in the head-camera frame while the head moves through
    /// the world; every term of the objective vanishes at ground truth.
    Static,
}

impl MotionKind {
    pub fn name(self) -> &'static str {
        match self {
            MotionKind::WalkCycle => "walk_cycle",
            MotionKind::RandomSmooth => "random_smooth",
            MotionKind::Static => "static",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occlusion {
    None,
    /// Hips, knees, ankles and toes unseen by the head camera.
    LowerBodyEgo,
    /// Wrists unseen by the external camera.
    HandsExt,
}

/// Standard deviations of the corruption applied to each observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// mm per coordinate.
    pub ego_3d: f64,
    /// pixels per coordinate.
    pub ego_2d: f64,
    pub ext_2d: f64,
    /// mm per coordinate.
    pub ext_3d: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            ego_3d: 30.0,
            ego_2d: 2.0,
            ext_2d: 1.0,
            ext_3d: 20.0,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            ego_3d: 0.0,
            ego_2d: 0.0,
            ext_2d: 0.0,
            ext_3d: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub frames: usize,
    pub frame_rate: f64,
    pub motion: MotionKind,
    pub occlusion: Occlusion,
    pub seed: u64,
    pub noise: NoiseConfig,
    /// Multiplies the SLAM relative translations.
    pub slam_scale: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            frames: 50,
            frame_rate: 30.0,
            motion: MotionKind::WalkCycle,
            occlusion: Occlusion::None,
            seed: 0,
            noise: NoiseConfig::default(),
            slam_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// Ground-truth poses in the head-camera frame.
    pub gt_poses: PoseSequence,
    /// Head camera → external camera, per frame.
    pub gt_cameras: Vec<RigidTransform>,
    pub dataset: SequenceDataset,
}

impl Scenario {
    /// Initial egocentric poses as a sequence with full confidence.
    pub fn init_poses(&self) -> PoseSequence {
        let frames = self
            .dataset
            .frames
            .iter()
            .map(|f| JointSet15::from_joints(f.ego_3d))
            .collect();
        let mut s = PoseSequence::new(frames, self.gt_poses.frame_rate);
        s.tags = self.gt_poses.tags.clone();
        s
    }

    /// Writes `dataset.jsonl`, `calib.json`, `gt.json`, `init.json` and
    /// `gt_cameras.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.dataset.save(dir.join("dataset.jsonl"))?;
        self.dataset.calibration.save(dir.join("calib.json"))?;
        self.gt_poses.save(dir.join("gt.json"))?;
        self.init_poses().save(dir.join("init.json"))?;
        let cams: Vec<serde_json::Value> = self
            .gt_cameras
            .iter()
            .map(|c| {
                let r: Vec<f64> = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).map(|ab| c.rotation[ab]).collect();
                serde_json::json!({"R": r, "t": [c.translation.x, c.translation.y, c.translation.z]})
            })
            .collect();
        fs::write(dir.join("gt_cameras.json"), serde_json::to_string(&cams)?)?;
        Ok(())
    }
}

/// Joint angles (radians) driving the forward kinematics.
#[derive(Clone, Copy, Debug, Default)]
struct Angles {
    hip: [f64; 2],
    knee: [f64; 2],
    shoulder: [f64; 2],
    elbow: [f64; 2],
    lean: f64,
    nod: f64,
    turn: f64,
    /// Body heading about world z.
    heading: f64,
    neck: Vector3<f64>,
}

fn rx(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a).into_inner()
}

fn rz(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a).into_inner()
}

fn walk_angles(t: f64, duration: f64) -> Angles {
    let phi = 2.0 * PI * 0.9 * t;
    let s = phi.sin();
    Angles {
        hip: [0.35 * s, -0.35 * s],
        knee: [0.25 * (1.0 + (phi + 1.0).sin()), 0.25 * (1.0 + (phi + PI + 1.0).sin())],
        shoulder: [-0.3 * s, 0.3 * s],
        elbow: [0.3 + 0.15 * (1.0 - phi.cos()), 0.3 + 0.15 * (1.0 + phi.cos())],
        lean: 0.08 + 0.02 * (2.0 * phi).sin(),
        nod: 0.05 * s,
        turn: 0.1 * (0.5 * phi).sin(),
        heading: 0.0,
        neck: Vector3::new(600.0 * (t - 0.5 * duration), 15.0 * s, 1500.0 + 20.0 * (2.0 * phi).cos()),
    }
}

/// Sum of three sinusoids with seeded amplitudes, rates and phases.
struct Wiggle {
    terms: [(f64, f64, f64); 3],
}

impl Wiggle {
    fn new(rng: &mut ChaCha8Rng, amplitude: f64) -> Self {
        let mut terms = [(0.0, 0.0, 0.0); 3];
        for t in terms.iter_mut() {
            *t = (
                amplitude * rng.random_range(0.3..1.0) / 3.0,
                2.0 * PI * rng.random_range(0.3..1.5),
                rng.random_range(0.0..2.0 * PI),
            );
        }
        Self { terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms.iter().map(|(a, w, p)| a * (w * t + p).sin()).sum()
    }
}

struct RandomMotion {
    w: Vec<Wiggle>,
}

impl RandomMotion {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let amps = [0.6, 0.6, 0.5, 0.5, 0.8, 0.8, 0.6, 0.6, 0.15, 0.15, 0.3, 0.4, 300.0, 300.0, 40.0];
        Self {
            w: amps.iter().map(|&a| Wiggle::new(rng, a)).collect(),
        }
    }

    fn angles(&self, t: f64) -> Angles {
        let v = |k: usize| self.w[k].at(t);
        Angles {
            hip: [v(0), v(1)],
            knee: [0.3 + v(2).abs(), 0.3 + v(3).abs()],
            shoulder: [v(4), v(5)],
            elbow: [0.4 + v(6).abs(), 0.4 + v(7).abs()],
            lean: 0.05 + v(8),
            nod: v(9),
            turn: v(10),
            heading: v(11),
            neck: Vector3::new(v(12), v(13), 1500.0 + v(14)),
        }
    }
}

/// Joints in the body frame (neck at the origin) with exact bone lengths.
fn body_pose(a: &Angles, topo: &BoneTopology) -> [Vector3<f64>; NUM_JOINTS] {
    let dirs = neutral_directions();
    let torso = rx(-a.lean);
    let mut rot = [Matrix3::identity(); NUM_JOINTS];
    use joint::*;
    for (side, (hip, knee, ankle, toe)) in [
        (RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE, RIGHT_TOE),
        (LEFT_HIP, LEFT_KNEE, LEFT_ANKLE, LEFT_TOE),
    ]
    .into_iter()
    .enumerate()
    {
        rot[hip] = torso;
        rot[knee] = torso * rx(a.hip[side]);
        rot[ankle] = torso * rx(a.hip[side] - a.knee[side]);
        rot[toe] = torso * rx(a.hip[side]);
    }
    for (side, (elbow, wrist)) in [(RIGHT_ELBOW, RIGHT_WRIST), (LEFT_ELBOW, LEFT_WRIST)]
        .into_iter()
        .enumerate()
    {
        rot[elbow] = rx(a.shoulder[side]);
        rot[wrist] = rx(a.shoulder[side] + a.elbow[side]);
    }
    let mut joints = [Vector3::zeros(); NUM_JOINTS];
    for (e, &(p, c)) in topo.edges.iter().enumerate() {
        let d = (rot[c] * dirs[c]).normalize();
        joints[c] = joints[p] + d * topo.reference_lengths[e];
    }
    joints
}

/// Body frame (x right, y forward, z up) → world (x forward, z up).
fn body_to_world() -> Matrix3<f64> {
    Matrix3::from_columns(&[-Vector3::y(), Vector3::x(), Vector3::z()])
}

/// Head-camera axes in the body frame: x right, optical axis tilted
/// forward from straight down.
fn camera_in_head() -> Matrix3<f64> {
    let tilt: f64 = 0.3;
    let z = Vector3::new(0.0, tilt.sin(), -tilt.cos());
    let x = Vector3::x();
    Matrix3::from_columns(&[x, z.cross(&x), z])
}

const CAMERA_OFFSET: Vector3<f64> = Vector3::new(0.0, 150.0, 250.0);

/// World → external camera: 3.5 m to the right of the path, 1 m high,
/// looking across it.
pub fn external_camera() -> RigidTransform {
    let center = Vector3::new(0.0, -3500.0, 1000.0);
    let rot = Matrix3::from_rows(&[
        Vector3::x().transpose(),
        (-Vector3::z()).transpose(),
        Vector3::y().transpose(),
    ]);
    RigidTransform::new(rot, -(rot * center))
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("positive finite sigma"))
}

fn jitter3(rng: &mut ChaCha8Rng, d: &Option<Normal<f64>>) -> Vector3<f64> {
    match d {
        Some(d) => Vector3::new(d.sample(rng), d.sample(rng), d.sample(rng)),
        None => Vector3::zeros(),
    }
}

fn jitter2(rng: &mut ChaCha8Rng, d: &Option<Normal<f64>>) -> Vector2<f64> {
    match d {
        Some(d) => Vector2::new(d.sample(rng), d.sample(rng)),
        None => Vector2::zeros(),
    }
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

pub fn gen_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    let b = config.frames;
    if b < 2 {
        return Err(Error::InvalidParameter(format!("scenario needs ≥ 2 frames, got {b}")));
    }
    if !(config.frame_rate > 0.0) || !(config.slam_scale > 0.0) {
        return Err(Error::InvalidParameter("frame_rate and slam_scale must be positive".into()));
    }
    for s in [config.noise.ego_3d, config.noise.ego_2d, config.noise.ext_2d, config.noise.ext_3d] {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter("noise levels must be finite and ≥ 0".into()));
        }
    }
    let topo = BoneTopology::standard();
    let calib = Calibration::default_synthetic();
    let ext_cam = external_camera();
    let duration = (b - 1) as f64 / config.frame_rate;

    let mut motion_rng = stream(config.seed, 0);
    let random = RandomMotion::new(&mut motion_rng);
    let ext_frame = RigidTransform::from_axis_angle(
        Vector3::new(
            motion_rng.random_range(-1.5..1.5),
            motion_rng.random_range(-1.5..1.5),
            motion_rng.random_range(-1.5..1.5),
        ),
        Vector3::new(
            motion_rng.random_range(-1000.0..1000.0),
            motion_rng.random_range(-1000.0..1000.0),
            motion_rng.random_range(-1000.0..1000.0),
        ),
    );
    let frozen = walk_angles(0.3, 1.0);

    let mut heads = Vec::with_capacity(b);
    let mut gt = Vec::with_capacity(b);
    for i in 0..b {
        let t = i as f64 / config.frame_rate;
        let (angles, body) = match config.motion {
            MotionKind::WalkCycle => {
                let a = walk_angles(t, duration);
                (a, body_pose(&a, &topo))
            }
            MotionKind::RandomSmooth => {
                let a = random.angles(t);
                (a, body_pose(&a, &topo))
            }
            MotionKind::Static => {
                let mut a = walk_angles(t, duration);
                a.nod = 0.0;
                a.turn = 0.0;
                (a, body_pose(&frozen, &topo))
            }
        };
        let body_rot = rz(angles.heading) * body_to_world();
        let head_rot = body_rot * rz(angles.turn) * rx(angles.nod);
        let head = RigidTransform::new(head_rot * camera_in_head(), angles.neck + head_rot * CAMERA_OFFSET);
        let to_cam = head.inverse();
        gt.push(JointSet15::from_joints(body.map(|p| to_cam.apply(&(body_rot * p + angles.neck)))));
        heads.push(head);
    }
    let gt_cameras: Vec<RigidTransform> = heads.iter().map(|h| ext_cam.compose(h)).collect();

    let n_ego3d = normal(config.noise.ego_3d);
    let n_ego2d = normal(config.noise.ego_2d);
    let n_ext2d = normal(config.noise.ext_2d);
    let n_ext3d = normal(config.noise.ext_3d);
    let mut r_ego3d = stream(config.seed, 1);
    let mut r_ego2d = stream(config.seed, 2);
    let mut r_ext2d = stream(config.seed, 3);
    let mut r_ext3d = stream(config.seed, 4);

    let tag = config.motion.name().to_string();
    let mut frames = Vec::with_capacity(b);
    for i in 0..b {
        let pose = &gt[i];
        let mut ego_2d = Keypoints2d::default();
        let mut ext_2d = Keypoints2d::default();
        let mut ego_3d = [Vector3::zeros(); NUM_JOINTS];
        let mut ext_3d = [Vector3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let p = pose.joints[j];
            ego_3d[j] = p + jitter3(&mut r_ego3d, &n_ego3d);
            ego_2d.pixels[j] = calib.fisheye.project(&p)? + jitter2(&mut r_ego2d, &n_ego2d);
            ego_2d.confidence[j] = 1.0;
            ext_2d.pixels[j] = calib.pinhole.project(&gt_cameras[i], &p)? + jitter2(&mut r_ext2d, &n_ext2d);
            ext_2d.confidence[j] = 1.0;
            ext_3d[j] = ext_frame.apply(&heads[i].apply(&p)) + jitter3(&mut r_ext3d, &n_ext3d);
        }
        match config.occlusion {
            Occlusion::None => {}
            Occlusion::LowerBodyEgo => LOWER_BODY.iter().for_each(|&j| ego_2d.confidence[j] = 0.0),
            Occlusion::HandsExt => HANDS.iter().for_each(|&j| ext_2d.confidence[j] = 0.0),
        }
        let slam_to_next = (i + 1 < b).then(|| {
            let rel = heads[i].inverse().compose(&heads[i + 1]);
            RigidTransform::new(rel.rotation, rel.translation * config.slam_scale)
        });
        frames.push(FrameRecord {
            frame: i,
            ego_2d,
            ego_3d,
            ext_2d,
            ext_3d,
            slam_to_next,
            tag: Some(tag.clone()),
        });
    }

    let mut gt_poses = PoseSequence::new(gt, config.frame_rate);
    gt_poses.tags = Some(vec![tag; b]);
    Ok(Scenario {
        gt_poses,
        gt_cameras,
        dataset: SequenceDataset {
            id: format!("synth-{}-{}", config.motion.name(), config.seed),
            frames,
            calibration: calib,
        },
    })
}
