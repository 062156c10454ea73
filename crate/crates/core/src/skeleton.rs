//! 15-joint body model: joint order, bone tree and the standard skeleton.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 15;
pub const NUM_BONES: usize = NUM_JOINTS - 1;

/// Joint indices. All file formats use this order.
pub mod joint {
    pub const NECK: usize = 0;
    pub const RIGHT_SHOULDER: usize = 1;
    pub const RIGHT_ELBOW: usize = 2;
    pub const RIGHT_WRIST: usize = 3;
    pub const LEFT_SHOULDER: usize = 4;
    pub const LEFT_ELBOW: usize = 5;
    pub const LEFT_WRIST: usize = 6;
    pub const RIGHT_HIP: usize = 7;
    pub const RIGHT_KNEE: usize = 8;
    pub const RIGHT_ANKLE: usize = 9;
    pub const RIGHT_TOE: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const LEFT_KNEE: usize = 12;
    pub const LEFT_ANKLE: usize = 13;
    pub const LEFT_TOE: usize = 14;
}

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "right_toe",
    "left_hip",
    "left_knee",
    "left_ankle",
    "left_toe",
];

pub const ROOT_JOINT: usize = joint::NECK;

/// Hips, knees, ankles and toes.
pub const LOWER_BODY: [usize; 8] = [
    joint::RIGHT_HIP,
    joint::RIGHT_KNEE,
    joint::RIGHT_ANKLE,
    joint::RIGHT_TOE,
    joint::LEFT_HIP,
    joint::LEFT_KNEE,
    joint::LEFT_ANKLE,
    joint::LEFT_TOE,
];

pub const HANDS: [usize; 2] = [joint::RIGHT_WRIST, joint::LEFT_WRIST];

/// (parent, child, standard length in mm), parents listed before children.
const STANDARD_BONES: [(usize, usize, f64); NUM_BONES] = [
    (joint::NECK, joint::RIGHT_SHOULDER, 180.0),
    (joint::RIGHT_SHOULDER, joint::RIGHT_ELBOW, 280.0),
    (joint::RIGHT_ELBOW, joint::RIGHT_WRIST, 250.0),
    (joint::NECK, joint::LEFT_SHOULDER, 180.0),
    (joint::LEFT_SHOULDER, joint::LEFT_ELBOW, 280.0),
    (joint::LEFT_ELBOW, joint::LEFT_WRIST, 250.0),
    (joint::NECK, joint::RIGHT_HIP, 520.0),
    (joint::RIGHT_HIP, joint::RIGHT_KNEE, 440.0),
    (joint::RIGHT_KNEE, joint::RIGHT_ANKLE, 430.0),
    (joint::RIGHT_ANKLE, joint::RIGHT_TOE, 150.0),
    (joint::NECK, joint::LEFT_HIP, 520.0),
    (joint::LEFT_HIP, joint::LEFT_KNEE, 440.0),
    (joint::LEFT_KNEE, joint::LEFT_ANKLE, 430.0),
    (joint::LEFT_ANKLE, joint::LEFT_TOE, 150.0),
];

/// One 15-joint pose with per-joint detection confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointSet15 {
    pub joints: [Vector3<f64>; NUM_JOINTS],
    pub confidence: [f64; NUM_JOINTS],
}

impl Default for JointSet15 {
    fn default() -> Self {
        Self::from_joints([Vector3::zeros(); NUM_JOINTS])
    }
}

impl JointSet15 {
    /// All joints fully confident.
    pub fn from_joints(joints: [Vector3<f64>; NUM_JOINTS]) -> Self {
        Self {
            joints,
            confidence: [1.0; NUM_JOINTS],
        }
    }

    pub fn map_joints(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            joints: self.joints.map(|j| f(&j)),
            confidence: self.confidence,
        }
    }

    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        self.map_joints(|j| rotation * j + translation)
    }

    pub fn valid_count(&self) -> usize {
        self.confidence.iter().filter(|&&c| c > 0.0).count()
    }

    pub fn flat(&self) -> [f64; NUM_JOINTS * 3] {
        let mut out = [0.0; NUM_JOINTS * 3];
        for (j, p) in self.joints.iter().enumerate() {
            out[3 * j..3 * j + 3].copy_from_slice(p.as_slice());
        }
        out
    }
}

/// Bone tree rooted at the neck.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneTopology {
    pub edges: Vec<(usize, usize)>,
    pub reference_lengths: Vec<f64>,
}

impl Default for BoneTopology {
    fn default() -> Self {
        Self::standard()
    }
}

impl BoneTopology {
    /// The standard skeleton used for bone regularization and BA-MPJPE.
    pub fn standard() -> Self {
        Self {
            edges: STANDARD_BONES.iter().map(|&(p, c, _)| (p, c)).collect(),
            reference_lengths: STANDARD_BONES.iter().map(|&(_, _, l)| l).collect(),
        }
    }

    pub fn with_lengths(lengths: Vec<f64>) -> Result<Self> {
        let topo = Self {
            reference_lengths: lengths,
            ..Self::standard()
        };
        topo.validate()?;
        Ok(topo)
    }

    /// Checks tree shape (each non-root joint has exactly one parent that
    /// appears earlier) and positive reference lengths.
    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != NUM_BONES || self.reference_lengths.len() != NUM_BONES {
            return Err(Error::InvalidParameter(format!(
                "topology needs {NUM_BONES} edges with lengths"
            )));
        }
        let mut placed = [false; NUM_JOINTS];
        placed[ROOT_JOINT] = true;
        for &(p, c) in &self.edges {
            if p >= NUM_JOINTS || c >= NUM_JOINTS || !placed[p] || placed[c] {
                return Err(Error::InvalidParameter(format!(
                    "edge ({p}, {c}) breaks the parent-first tree order"
                )));
            }
            placed[c] = true;
        }
        if let Some(l) = self.reference_lengths.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "reference length {l} is not positive"
            )));
        }
        Ok(())
    }

    /// `{"edges": [[p, c], ...], "reference_lengths": [...]}`, validated.
    pub fn from_json(text: &str) -> Result<Self> {
        let topo: Self =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("topology: {e}")))?;
        topo.validate()
            .map_err(|e| Error::Schema(format!("topology: {e}")))?;
        Ok(topo)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Neutral standing pose at the reference lengths, neck at the origin,
    /// `+x` to the body's right, `+y` forward, `+z` up.
    pub fn reference_pose(&self) -> JointSet15 {
        let dirs = neutral_directions();
        let mut joints = [Vector3::zeros(); NUM_JOINTS];
        for (e, &(p, c)) in self.edges.iter().enumerate() {
            joints[c] = joints[p] + dirs[c] * self.reference_lengths[e];
        }
        JointSet15::from_joints(joints)
    }
}

/// Unit bone directions (indexed by child joint) of the neutral pose.
pub(crate) fn neutral_directions() -> [Vector3<f64>; NUM_JOINTS] {
    let down = -Vector3::z();
    let hip_lateral: f64 = 100.0 / 520.0;
    let hip_down = (1.0 - hip_lateral * hip_lateral).sqrt();
    let foot = Vector3::new(0.0, 0.9, -0.1).normalize();
    let mut d = [Vector3::zeros(); NUM_JOINTS];
    d[joint::RIGHT_SHOULDER] = Vector3::x();
    d[joint::RIGHT_ELBOW] = Vector3::new(0.1, 0.0, -1.0).normalize();
    d[joint::RIGHT_WRIST] = Vector3::new(0.0, 0.2, -1.0).normalize();
    d[joint::LEFT_SHOULDER] = -Vector3::x();
    d[joint::LEFT_ELBOW] = Vector3::new(-0.1, 0.0, -1.0).normalize();
    d[joint::LEFT_WRIST] = Vector3::new(0.0, 0.2, -1.0).normalize();
    d[joint::RIGHT_HIP] = Vector3::new(hip_lateral, 0.0, -hip_down);
    d[joint::RIGHT_KNEE] = down;
    d[joint::RIGHT_ANKLE] = down;
    d[joint::RIGHT_TOE] = foot;
    d[joint::LEFT_HIP] = Vector3::new(-hip_lateral, 0.0, -hip_down);
    d[joint::LEFT_KNEE] = down;
    d[joint::LEFT_ANKLE] = down;
    d[joint::LEFT_TOE] = foot;
    d
}

/// Ordered frames of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub frames: Vec<JointSet15>,
    pub frame_rate: f64,
    /// Optional per-frame labels (e.g. action names) used for breakdowns.
    pub tags: Option<Vec<String>>,
}

impl PoseSequence {
    pub fn new(frames: Vec<JointSet15>, frame_rate: f64) -> Self {
        Self {
            frames,
            frame_rate,
            tags: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PoseFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("pose file: {e}")))?;
        if file.frames.is_empty() {
            return Err(Error::Schema("pose file: no frames".into()));
        }
        let mut frames = Vec::with_capacity(file.frames.len());
        let mut tags = Vec::new();
        let mut any_tag = false;
        for (i, f) in file.frames.into_iter().enumerate() {
            if f.joints.len() != NUM_JOINTS {
                return Err(Error::Schema(format!(
                    "pose file: frame {i} has {} joints",
                    f.joints.len()
                )));
            }
            let mut set = JointSet15::default();
            for (j, p) in f.joints.iter().enumerate() {
                set.joints[j] = Vector3::new(p[0], p[1], p[2]);
            }
            if let Some(conf) = f.conf {
                if conf.len() != NUM_JOINTS {
                    return Err(Error::Schema(format!(
                        "pose file: frame {i} has {} confidences",
                        conf.len()
                    )));
                }
                set.confidence.copy_from_slice(&conf);
            }
            any_tag |= f.tag.is_some();
            tags.push(f.tag.unwrap_or_default());
            frames.push(set);
        }
        Ok(Self {
            frames,
            frame_rate: file.frame_rate,
            tags: any_tag.then_some(tags),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| PoseFrame {
                joints: f.joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
                conf: Some(f.confidence.to_vec()),
                tag: self.tags.as_ref().map(|t| t[i].clone()),
            })
            .collect();
        Ok(serde_json::to_string(&PoseFile {
            frames,
            frame_rate: self.frame_rate,
        })?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PoseFrame {
    joints: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conf: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tag: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    frames: Vec<PoseFrame>,
    frame_rate: f64,
}

/// Per-edge Euclidean bone lengths.
pub fn bone_lengths(pose: &JointSet15, topo: &BoneTopology) -> Vec<f64> {
    topo.edges
        .iter()
        .map(|&(p, c)| (pose.joints[c] - pose.joints[p]).norm())
        .collect()
}

/// Re-places every child along its original bone direction at the
/// reference length, keeping the root fixed.
pub fn rescale_to_skeleton(pose: &JointSet15, topo: &BoneTopology) -> Result<JointSet15> {
    let mut out = *pose;
    for (e, (&(p, c), &len)) in topo.edges.iter().zip(&topo.reference_lengths).enumerate() {
        let bone = pose.joints[c] - pose.joints[p];
        let n = bone.norm();
        if n < 1e-6 {
            return Err(Error::DegenerateBone { edge: e, length: n });
        }
        out.joints[c] = out.joints[p] + bone * (len / n);
    }
    Ok(out)
}
