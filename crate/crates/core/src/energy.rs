//! The eight energy terms of the window objective and their weighted sum.
//!
//! Every term is a pure function of the window state and observations and
//! returns its value together with the analytic gradient with respect to
//! poses (mm), camera rotation blocks (raw 3×3 entries), camera
//! translations (mm) and the optional SLAM scale factor.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::align::procrustes;
use crate::error::{Error, Result};
use crate::geometry::{FisheyeModel, PinholeModel, RigidTransform};
use crate::prior::{flatten, MotionPrior, FRAME_DIM};
use crate::skeleton::{BoneTopology, JointSet15, NUM_JOINTS};

/// Translations inside the camera-consistency matrices are compared in
/// meters so rotation and translation entries are commensurate.
pub const CONSISTENCY_LENGTH_SCALE: f64 = 1e-3;

pub const NUM_TERMS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    ReprojEgo,
    ReprojExt,
    PoseEgo,
    PoseExt,
    Smooth,
    Bone,
    CamConsistency,
    CamOrth,
}

impl Term {
    pub const ALL: [Term; NUM_TERMS] = [
        Term::ReprojEgo,
        Term::ReprojExt,
        Term::PoseEgo,
        Term::PoseExt,
        Term::Smooth,
        Term::Bone,
        Term::CamConsistency,
        Term::CamOrth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::ReprojEgo => "reproj_ego",
            Term::ReprojExt => "reproj_ext",
            Term::PoseEgo => "pose_ego",
            Term::PoseExt => "pose_ext",
            Term::Smooth => "smooth",
            Term::Bone => "bone",
            Term::CamConsistency => "cam_consistency",
            Term::CamOrth => "cam_orth",
        }
    }
}

/// The λ coefficients. Defaults are all 1.0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyWeights {
    pub lambda_reproj_ego: f64,
    pub lambda_reproj_ext: f64,
    pub lambda_pose_ego: f64,
    pub lambda_pose_ext: f64,
    pub lambda_smooth: f64,
    pub lambda_bone: f64,
    pub lambda_cam_consistency: f64,
    pub lambda_cam_orth: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl EnergyWeights {
    pub fn uniform(v: f64) -> Self {
        Self::from_array([v; NUM_TERMS])
    }

    pub fn from_array(a: [f64; NUM_TERMS]) -> Self {
        Self {
            lambda_reproj_ego: a[0],
            lambda_reproj_ext: a[1],
            lambda_pose_ego: a[2],
            lambda_pose_ext: a[3],
            lambda_smooth: a[4],
            lambda_bone: a[5],
            lambda_cam_consistency: a[6],
            lambda_cam_orth: a[7],
        }
    }

    pub fn as_array(&self) -> [f64; NUM_TERMS] {
        [
            self.lambda_reproj_ego,
            self.lambda_reproj_ext,
            self.lambda_pose_ego,
            self.lambda_pose_ext,
            self.lambda_smooth,
            self.lambda_bone,
            self.lambda_cam_consistency,
            self.lambda_cam_orth,
        ]
    }

    pub fn get(&self, term: Term) -> f64 {
        self.as_array()[term as usize]
    }

    pub fn set(&mut self, term: Term, value: f64) {
        let mut a = self.as_array();
        a[term as usize] = value;
        *self = Self::from_array(a);
    }

    /// Egocentric-only ablation: every term that needs the external view or
    /// the camera trajectory is switched off.
    pub fn egocentric_only(mut self) -> Self {
        self.lambda_reproj_ext = 0.0;
        self.lambda_pose_ext = 0.0;
        self.lambda_cam_consistency = 0.0;
        self.lambda_cam_orth = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "energy weights must be finite and non-negative".into(),
            ));
        }
        if a.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidParameter(
                "at least one energy weight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Self =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("weights: {e}")))?;
        w.validate().map_err(|e| Error::Schema(format!("weights: {e}")))?;
        Ok(w)
    }
}

/// 15 detected 2D joints with confidences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoints2d {
    pub pixels: [Vector2<f64>; NUM_JOINTS],
    pub confidence: [f64; NUM_JOINTS],
}

impl Default for Keypoints2d {
    fn default() -> Self {
        Self {
            pixels: [Vector2::zeros(); NUM_JOINTS],
            confidence: [0.0; NUM_JOINTS],
        }
    }
}

/// Detector inputs for one window of `B` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowObservations {
    /// Heatmap maxima in the fisheye image.
    pub ego_2d: Vec<Keypoints2d>,
    /// Initial egocentric 3D poses (camera frame of the head-mounted camera).
    pub ego_3d_init: Vec<JointSet15>,
    /// 2D joints in the external image.
    pub ext_2d: Vec<Keypoints2d>,
    /// External 3D poses in an unknown rigid frame.
    pub ext_3d: Vec<JointSet15>,
    /// `slam_rel[i]` maps frame `i+1` head-camera coordinates into frame `i`;
    /// `None` where tracking was lost.
    pub slam_rel: Vec<Option<RigidTransform>>,
    pub fisheye: FisheyeModel,
    pub pinhole: PinholeModel,
}

impl WindowObservations {
    pub fn len(&self) -> usize {
        self.ego_3d_init.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ego_3d_init.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.len();
        if b < 2 {
            return Err(Error::InvalidParameter(format!(
                "window needs at least 2 frames, got {b}"
            )));
        }
        if self.ego_2d.len() != b
            || self.ext_2d.len() != b
            || self.ext_3d.len() != b
            || self.slam_rel.len() != b - 1
        {
            return Err(Error::ShapeMismatch(format!(
                "window of {b} frames has ego_2d {}, ext_2d {}, ext_3d {}, slam_rel {}",
                self.ego_2d.len(),
                self.ext_2d.len(),
                self.ext_3d.len(),
                self.slam_rel.len()
            )));
        }
        if self.slam_rel.iter().flatten().any(|t| !t.is_orthonormal(1e-6)) {
            return Err(Error::InvalidParameter(
                "SLAM relative rotations must be orthonormal".into(),
            ));
        }
        Ok(())
    }
}

/// Optimization variables of one window in explicit form.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowState {
    pub poses: Vec<JointSet15>,
    /// Egocentric camera pose in the external camera frame, per frame.
    pub cam_rotations: Vec<Matrix3<f64>>,
    pub cam_translations: Vec<Vector3<f64>>,
    /// Multiplies every SLAM relative translation.
    pub slam_scale: f64,
    /// When set together with a prior, the poses are `decode(latent)`.
    pub latent: Option<Vec<f64>>,
}

impl WindowState {
    pub fn new(poses: Vec<JointSet15>, cameras: &[RigidTransform]) -> Self {
        Self {
            poses,
            cam_rotations: cameras.iter().map(|c| c.rotation).collect(),
            cam_translations: cameras.iter().map(|c| c.translation).collect(),
            slam_scale: 1.0,
            latent: None,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn camera(&self, i: usize) -> RigidTransform {
        RigidTransform::new(self.cam_rotations[i], self.cam_translations[i])
    }

    pub fn cameras(&self) -> Vec<RigidTransform> {
        (0..self.len()).map(|i| self.camera(i)).collect()
    }
}

/// Gradient with the same layout as [`WindowState`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateGradient {
    pub poses: Vec<[Vector3<f64>; NUM_JOINTS]>,
    pub rotations: Vec<Matrix3<f64>>,
    pub translations: Vec<Vector3<f64>>,
    pub slam_scale: f64,
    /// Filled by [`total_energy`] when a prior decodes the poses.
    pub latent: Option<Vec<f64>>,
}

impl StateGradient {
    pub fn zeros(frames: usize) -> Self {
        Self {
            poses: vec![[Vector3::zeros(); NUM_JOINTS]; frames],
            rotations: vec![Matrix3::zeros(); frames],
            translations: vec![Vector3::zeros(); frames],
            slam_scale: 0.0,
            latent: None,
        }
    }

    pub fn add_scaled(&mut self, other: &StateGradient, s: f64) {
        for (a, b) in self.poses.iter_mut().zip(&other.poses) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * s;
            }
        }
        for (a, b) in self.rotations.iter_mut().zip(&other.rotations) {
            *a += b * s;
        }
        for (a, b) in self.translations.iter_mut().zip(&other.translations) {
            *a += b * s;
        }
        self.slam_scale += other.slam_scale * s;
    }

    pub fn flat_poses(&self) -> Vec<f64> {
        self.poses
            .iter()
            .flat_map(|f| f.iter().flat_map(|p| [p.x, p.y, p.z]))
            .collect()
    }
}

/// One term's value, gradient and the number of residuals it had to drop.
#[derive(Clone, Debug, PartialEq)]
pub struct TermValue {
    pub value: f64,
    pub gradient: StateGradient,
    pub dropped: usize,
}

impl TermValue {
    fn zero(frames: usize) -> Self {
        Self {
            value: 0.0,
            gradient: StateGradient::zeros(frames),
            dropped: 0,
        }
    }
}

/// `Σ_i Σ_j c_ij ‖ego_2d_ij − fisheye(P_ij)‖²`; joints outside the field of
/// view are dropped.
pub fn e_reproj_ego(state: &WindowState, obs: &WindowObservations) -> TermValue {
    let mut out = TermValue::zero(state.len());
    for (i, (pose, kp)) in state.poses.iter().zip(&obs.ego_2d).enumerate() {
        for j in 0..NUM_JOINTS {
            let c = kp.confidence[j];
            if c <= 0.0 {
                continue;
            }
            match obs.fisheye.project_with_jacobian(&pose.joints[j]) {
                Ok((px, jac)) => {
                    let r = kp.pixels[j] - px;
                    out.value += c * r.norm_squared();
                    out.gradient.poses[i][j] -= jac.transpose() * r * (2.0 * c);
                }
                Err(_) => out.dropped += 1,
            }
        }
    }
    out
}

/// `Σ_i Σ_j c_ij ‖ext_2d_ij − π(K, [R_i|t_i] P_ij)‖²` with perspective division.
pub fn e_reproj_ext(state: &WindowState, obs: &WindowObservations) -> TermValue {
    let mut out = TermValue::zero(state.len());
    for (i, (pose, kp)) in state.poses.iter().zip(&obs.ext_2d).enumerate() {
        let rot = state.cam_rotations[i];
        let t = state.cam_translations[i];
        for j in 0..NUM_JOINTS {
            let c = kp.confidence[j];
            if c <= 0.0 {
                continue;
            }
            let p = pose.joints[j];
            let pc = rot * p + t;
            match obs.pinhole.project_camera_point_with_jacobian(&pc) {
                Ok((px, jac)) => {
                    let r = kp.pixels[j] - px;
                    out.value += c * r.norm_squared();
                    let d_pc = -(jac.transpose() * r) * (2.0 * c);
                    out.gradient.poses[i][j] += rot.transpose() * d_pc;
                    out.gradient.rotations[i] += d_pc * p.transpose();
                    out.gradient.translations[i] += d_pc;
                }
                Err(_) => out.dropped += 1,
            }
        }
    }
    out
}

/// `Σ_i Σ_j c_ij ‖P_ij − P̃_ij‖²` against the detector's initial poses.
pub fn e_pose_ego(state: &WindowState, obs: &WindowObservations) -> TermValue {
    let mut out = TermValue::zero(state.len());
    for (i, (pose, init)) in state.poses.iter().zip(&obs.ego_3d_init).enumerate() {
        for j in 0..NUM_JOINTS {
            let c = init.confidence[j];
            if c <= 0.0 {
                continue;
            }
            let d = pose.joints[j] - init.joints[j];
            out.value += c * d.norm_squared();
            out.gradient.poses[i][j] += d * (2.0 * c);
        }
    }
    out
}

/// Per frame, rigidly aligns the egocentric pose onto the external 3D pose
/// and sums the weighted squared residuals. The alignment is recomputed
/// from the current poses; its gradient follows from optimality of the
/// alignment, so only the explicit dependence on the poses remains.
pub fn e_pose_ext(state: &WindowState, obs: &WindowObservations) -> TermValue {
    let mut out = TermValue::zero(state.len());
    for (i, (pose, ext)) in state.poses.iter().zip(&obs.ext_3d).enumerate() {
        let Ok(al) = procrustes(&pose.joints, &ext.joints, &ext.confidence, false) else {
            out.dropped += 1;
            continue;
        };
        let rot = al.transform.rotation;
        let t = al.transform.translation;
        for j in 0..NUM_JOINTS {
            let c = ext.confidence[j];
            if c <= 0.0 {
                continue;
            }
            let r = ext.joints[j] - (rot * pose.joints[j] + t);
            out.value += c * r.norm_squared();
            out.gradient.poses[i][j] -= rot.transpose() * r * (2.0 * c);
        }
    }
    out
}

/// First-difference penalty `Σ_i ‖P_{i+1} − P_i‖²`.
pub fn e_smooth(state: &WindowState) -> TermValue {
    let mut out = TermValue::zero(state.len());
    for i in 0..state.len().saturating_sub(1) {
        for j in 0..NUM_JOINTS {
            let d = state.poses[i + 1].joints[j] - state.poses[i].joints[j];
            out.value += d.norm_squared();
            out.gradient.poses[i + 1][j] += d * 2.0;
            out.gradient.poses[i][j] -= d * 2.0;
        }
    }
    out
}

/// `Σ_i Σ_edges (‖P_child − P_parent‖ − L_edge)²`.
pub fn e_bone(state: &WindowState, topo: &BoneTopology) -> TermValue {
    let mut out = TermValue::zero(state.len());
    for (i, pose) in state.poses.iter().enumerate() {
        for (&(p, c), &len) in topo.edges.iter().zip(&topo.reference_lengths) {
            let d = pose.joints[c] - pose.joints[p];
            let l = d.norm();
            let diff = l - len;
            out.value += diff * diff;
            if l > 0.0 {
                let g = d * (2.0 * diff / l);
                out.gradient.poses[i][c] += g;
                out.gradient.poses[i][p] -= g;
            }
        }
    }
    out
}

/// `Σ_i ‖T_i · S_i − T_{i+1}‖²_F` over 4×4 homogeneous matrices, with the
/// SLAM relative transform `S_i` and translations in meters.
pub fn e_cam_consistency(state: &WindowState, obs: &WindowObservations) -> TermValue {
    let mut out = TermValue::zero(state.len());
    let k = CONSISTENCY_LENGTH_SCALE;
    for (i, rel) in obs.slam_rel.iter().enumerate().take(state.len().saturating_sub(1)) {
        let Some(rel) = rel else { continue };
        let r_i = state.cam_rotations[i];
        let r_n = state.cam_rotations[i + 1];
        let rel_t = rel.translation * (state.slam_scale * k);
        let d_rot = r_i * rel.rotation - r_n;
        let d_t = r_i * rel_t + state.cam_translations[i] * k - state.cam_translations[i + 1] * k;
        out.value += d_rot.norm_squared() + d_t.norm_squared();
        out.gradient.rotations[i] += (d_rot * rel.rotation.transpose() + d_t * rel_t.transpose()) * 2.0;
        out.gradient.rotations[i + 1] -= d_rot * 2.0;
        out.gradient.translations[i] += d_t * (2.0 * k);
        out.gradient.translations[i + 1] -= d_t * (2.0 * k);
        out.gradient.slam_scale += 2.0 * d_t.dot(&(r_i * rel.translation * k));
    }
    out
}

/// `Σ_i ‖R_iᵀ R_i − I‖²_F`.
pub fn e_cam_orth(state: &WindowState) -> TermValue {
    let mut out = TermValue::zero(state.len());
    for (i, r) in state.cam_rotations.iter().enumerate() {
        let m = r.transpose() * r - Matrix3::identity();
        out.value += m.norm_squared();
        out.gradient.rotations[i] += r * m * 4.0;
    }
    out
}

/// Weighted objective with the per-term breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyEvaluation {
    pub total: f64,
    /// Unweighted term values in [`Term::ALL`] order.
    pub terms: [f64; NUM_TERMS],
    pub dropped: [usize; NUM_TERMS],
    pub gradient: StateGradient,
}

impl EnergyEvaluation {
    pub fn term(&self, t: Term) -> f64 {
        self.terms[t as usize]
    }

    pub fn dropped_total(&self) -> usize {
        self.dropped.iter().sum()
    }
}

pub fn evaluate_term(
    term: Term,
    state: &WindowState,
    obs: &WindowObservations,
    topo: &BoneTopology,
) -> TermValue {
    match term {
        Term::ReprojEgo => e_reproj_ego(state, obs),
        Term::ReprojExt => e_reproj_ext(state, obs),
        Term::PoseEgo => e_pose_ego(state, obs),
        Term::PoseExt => e_pose_ext(state, obs),
        Term::Smooth => e_smooth(state),
        Term::Bone => e_bone(state, topo),
        Term::CamConsistency => e_cam_consistency(state, obs),
        Term::CamOrth => e_cam_orth(state),
    }
}

/// `Σ λ_k E_k`. With a prior and `state.latent` set, the poses are decoded
/// from the latent first and the pose gradient is pulled back into
/// `gradient.latent`.
pub fn total_energy(
    state: &WindowState,
    obs: &WindowObservations,
    weights: &EnergyWeights,
    topo: &BoneTopology,
    prior: Option<&MotionPrior>,
) -> Result<EnergyEvaluation> {
    let decoded;
    let state = match (prior, &state.latent) {
        (Some(p), Some(z)) => {
            let mut s = state.clone();
            s.poses = p.decode(z)?;
            decoded = s;
            &decoded
        }
        _ => state,
    };
    let b = state.len();
    if state.cam_rotations.len() != b || state.cam_translations.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "state has {b} poses but {} rotations and {} translations",
            state.cam_rotations.len(),
            state.cam_translations.len()
        )));
    }
    if obs.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "state has {b} frames, observations {}",
            obs.len()
        )));
    }
    let lambdas = weights.as_array();
    let mut total = 0.0;
    let mut terms = [0.0; NUM_TERMS];
    let mut dropped = [0; NUM_TERMS];
    let mut gradient = StateGradient::zeros(b);
    for (k, term) in Term::ALL.into_iter().enumerate() {
        let tv = evaluate_term(term, state, obs, topo);
        terms[k] = tv.value;
        dropped[k] = tv.dropped;
        if lambdas[k] != 0.0 {
            total += lambdas[k] * tv.value;
            gradient.add_scaled(&tv.gradient, lambdas[k]);
        }
    }
    if let (Some(p), Some(_)) = (prior, &state.latent) {
        gradient.latent = Some(p.pullback(&gradient.flat_poses()));
    }
    Ok(EnergyEvaluation {
        total,
        terms,
        dropped,
        gradient,
    })
}

/// Flattened pose vector length for a window of `frames`.
pub fn pose_dim(frames: usize) -> usize {
    frames * FRAME_DIM
}

/// Flattened poses of a state (mm).
pub fn flat_poses(state: &WindowState) -> Vec<f64> {
    flatten(&state.poses)
}
