//! Dataset ingestion, windowing, window dispatch, label encoding and the
//! bootstrapping loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyWeights, Keypoints2d, WindowObservations};
use crate::error::{Error, Result};
use crate::geometry::{Calibration, FisheyeModel, RigidTransform};
use crate::metrics::pa_mpjpe;
use crate::optimize::{optimize_window, OptimizationReport, OptimizerConfig};
use crate::par::{self, Execution};
use crate::prior::MotionPrior;
use crate::skeleton::{BoneTopology, JointSet15, PoseSequence, NUM_JOINTS};

/// Detector outputs for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub ego_2d: Keypoints2d,
    pub ego_3d: [Vector3<f64>; NUM_JOINTS],
    pub ext_2d: Keypoints2d,
    pub ext_3d: [Vector3<f64>; NUM_JOINTS],
    /// Maps the next frame's head-camera coordinates into this frame's.
    pub slam_to_next: Option<RigidTransform>,
    pub tag: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub id: String,
    pub frames: Vec<FrameRecord>,
    pub calibration: Calibration,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    frame: usize,
    ego2d: Vec<[f64; 3]>,
    ego3d: Vec<[f64; 3]>,
    ext2d: Vec<[f64; 3]>,
    ext3d: Vec<[f64; 3]>,
    slam_to_next: Option<TransformLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tag: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformLine {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl TransformLine {
    fn from_transform(t: &RigidTransform) -> Self {
        let mut r = [0.0; 9];
        for a in 0..3 {
            for b in 0..3 {
                r[3 * a + b] = t.rotation[(a, b)];
            }
        }
        Self {
            r,
            t: [t.translation.x, t.translation.y, t.translation.z],
        }
    }

    fn to_transform(&self) -> RigidTransform {
        RigidTransform::new(Matrix3::from_row_slice(&self.r), Vector3::from(self.t))
    }
}

fn keypoints_from(rows: &[[f64; 3]], what: &str, line: usize) -> Result<Keypoints2d> {
    let mut kp = Keypoints2d::default();
    for (j, r) in rows.iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) || r[2] < 0.0 {
            return Err(Error::Schema(format!(
                "line {line}: {what}[{j}] must be finite with non-negative confidence"
            )));
        }
        kp.pixels[j] = Vector2::new(r[0], r[1]);
        kp.confidence[j] = r[2];
    }
    Ok(kp)
}

fn points_from(rows: &[[f64; 3]], what: &str, line: usize) -> Result<[Vector3<f64>; NUM_JOINTS]> {
    let mut out = [Vector3::zeros(); NUM_JOINTS];
    for (j, r) in rows.iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("line {line}: {what}[{j}] is not finite")));
        }
        out[j] = Vector3::from(*r);
    }
    Ok(out)
}

fn keypoint_rows(kp: &Keypoints2d) -> Vec<[f64; 3]> {
    (0..NUM_JOINTS)
        .map(|j| [kp.pixels[j].x, kp.pixels[j].y, kp.confidence[j]])
        .collect()
}

fn point_rows(p: &[Vector3<f64>; NUM_JOINTS]) -> Vec<[f64; 3]> {
    p.iter().map(|v| [v.x, v.y, v.z]).collect()
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.frames.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(Error::Schema(format!(
                    "frame indices must increase: {} follows {}",
                    w[1].frame, w[0].frame
                )));
            }
        }
        for f in &self.frames {
            if let Some(s) = &f.slam_to_next {
                if !s.is_orthonormal(1e-6) {
                    return Err(Error::Schema(format!(
                        "frame {}: slam_to_next rotation is not orthonormal",
                        f.frame
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses the JSON-lines format; blank lines are ignored.
    pub fn from_jsonl(text: &str, calibration: Calibration, id: impl Into<String>) -> Result<Self> {
        let mut frames = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let n = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fl: FrameLine = serde_json::from_str(line)
                .map_err(|e| Error::Schema(format!("line {n}: {e}")))?;
            for (name, len) in [
                ("ego2d", fl.ego2d.len()),
                ("ego3d", fl.ego3d.len()),
                ("ext2d", fl.ext2d.len()),
                ("ext3d", fl.ext3d.len()),
            ] {
                if len != NUM_JOINTS {
                    return Err(Error::Schema(format!(
                        "line {n}: {name} has {len} joints, expected {NUM_JOINTS}"
                    )));
                }
            }
            frames.push(FrameRecord {
                frame: fl.frame,
                ego_2d: keypoints_from(&fl.ego2d, "ego2d", n)?,
                ego_3d: points_from(&fl.ego3d, "ego3d", n)?,
                ext_2d: keypoints_from(&fl.ext2d, "ext2d", n)?,
                ext_3d: points_from(&fl.ext3d, "ext3d", n)?,
                slam_to_next: fl.slam_to_next.as_ref().map(TransformLine::to_transform),
                tag: fl.tag,
            });
        }
        let ds = Self {
            id: id.into(),
            frames,
            calibration,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for f in &self.frames {
            let line = FrameLine {
                frame: f.frame,
                ego2d: keypoint_rows(&f.ego_2d),
                ego3d: point_rows(&f.ego_3d),
                ext2d: keypoint_rows(&f.ext_2d),
                ext3d: point_rows(&f.ext_3d),
                slam_to_next: f.slam_to_next.as_ref().map(TransformLine::from_transform),
                tag: f.tag.clone(),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>, calibration: Calibration) -> Result<Self> {
        let path = path.as_ref();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_jsonl(&fs::read_to_string(path)?, calibration, id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    /// Initial egocentric poses; confidence follows the fisheye 2D detections.
    pub fn ego_3d_init(&self) -> Vec<JointSet15> {
        self.frames
            .iter()
            .map(|f| JointSet15 {
                joints: f.ego_3d,
                confidence: f.ego_2d.confidence,
            })
            .collect()
    }

    /// Copy with the initial egocentric poses replaced (joints only).
    pub fn with_ego_3d_init(&self, poses: &[JointSet15]) -> Result<Self> {
        if poses.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: poses.len(),
            });
        }
        let mut out = self.clone();
        for (f, p) in out.frames.iter_mut().zip(poses) {
            f.ego_3d = p.joints;
        }
        Ok(out)
    }

    pub fn tags(&self) -> Option<Vec<String>> {
        if self.frames.iter().all(|f| f.tag.is_none()) {
            return None;
        }
        Some(
            self.frames
                .iter()
                .map(|f| f.tag.clone().unwrap_or_default())
                .collect(),
        )
    }

    /// Observations for frames `offset..offset + len`.
    pub fn window(&self, offset: usize, len: usize) -> Result<WindowObservations> {
        if offset + len > self.len() {
            return Err(Error::SequenceTooShort {
                len: self.len(),
                window: offset + len,
            });
        }
        let frames = &self.frames[offset..offset + len];
        Ok(WindowObservations {
            ego_2d: frames.iter().map(|f| f.ego_2d).collect(),
            ego_3d_init: frames
                .iter()
                .map(|f| JointSet15 {
                    joints: f.ego_3d,
                    confidence: f.ego_2d.confidence,
                })
                .collect(),
            ext_2d: frames.iter().map(|f| f.ext_2d).collect(),
            ext_3d: frames
                .iter()
                .map(|f| JointSet15 {
                    joints: f.ext_3d,
                    confidence: f.ext_2d.confidence,
                })
                .collect(),
            slam_rel: frames[..len - 1].iter().map(|f| f.slam_to_next).collect(),
            fisheye: self.calibration.fisheye,
            pinhole: self.calibration.pinhole,
        })
    }
}

/// Window start offsets: `0, stride, 2·stride, …` plus an end-anchored
/// window when the strides leave a remainder.
pub fn window_offsets(len: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window < 2 {
        return Err(Error::InvalidParameter("window must be ≥ 2".into()));
    }
    if stride == 0 || stride > window {
        return Err(Error::InvalidParameter(format!(
            "stride must be in 1..={window}, got {stride}"
        )));
    }
    if len < window {
        return Err(Error::SequenceTooShort { len, window });
    }
    let mut offsets: Vec<usize> = (0..=len - window).step_by(stride).collect();
    let last = *offsets.last().expect("len ≥ window");
    if last + window < len {
        offsets.push(len - window);
    }
    Ok(offsets)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub offset: usize,
    pub obs: WindowObservations,
}

pub fn segment(dataset: &SequenceDataset, window: usize, stride: usize) -> Result<Vec<Segment>> {
    window_offsets(dataset.len(), window, stride)?
        .into_iter()
        .map(|offset| {
            Ok(Segment {
                offset,
                obs: dataset.window(offset, window)?,
            })
        })
        .collect()
}

/// Label grid laid over the fisheye image circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub width: usize,
    pub height: usize,
    /// Gaussian σ in grid pixels.
    pub sigma: f64,
    /// Image pixels per grid pixel.
    pub scale: [f64; 2],
    /// Image pixel of grid point (0, 0).
    pub offset: [f64; 2],
}

impl HeatmapGrid {
    /// Grid spanning the image circle; the optical center falls on grid
    /// point `(width/2, height/2)`.
    pub fn for_fisheye(fisheye: &FisheyeModel, width: usize, height: usize, sigma: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("heatmap grid must be non-empty".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter("heatmap sigma must be positive".into()));
        }
        let sx = 2.0 * fisheye.image_radius / width as f64;
        let sy = 2.0 * fisheye.image_radius / height as f64;
        Ok(Self {
            width,
            height,
            sigma,
            scale: [sx, sy],
            offset: [
                fisheye.center.x - (width / 2) as f64 * sx,
                fisheye.center.y - (height / 2) as f64 * sy,
            ],
        })
    }

    pub fn to_grid(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            (pixel.x - self.offset[0]) / self.scale[0],
            (pixel.y - self.offset[1]) / self.scale[1],
        )
    }

    pub fn to_image(&self, grid: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            self.offset[0] + grid.x * self.scale[0],
            self.offset[1] + grid.y * self.scale[1],
        )
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }
}

/// Heatmap and distance targets for a set of poses.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedLabels {
    /// Per frame, `15 × height × width` row-major.
    pub heatmaps: Vec<Vec<f32>>,
    /// Per frame, camera-to-joint distances in mm.
    pub distances: Vec<[f64; NUM_JOINTS]>,
    /// False where the joint projects outside the field of view.
    pub in_view: Vec<[bool; NUM_JOINTS]>,
}

pub fn labels_to_heatmaps_distances(poses: &[JointSet15], fisheye: &FisheyeModel, grid: &HeatmapGrid) -> EncodedLabels {
    let mut out = EncodedLabels {
        heatmaps: Vec::with_capacity(poses.len()),
        distances: Vec::with_capacity(poses.len()),
        in_view: Vec::with_capacity(poses.len()),
    };
    for pose in poses {
        let (maps, dist, seen) = encode_frame(pose, fisheye, grid);
        out.heatmaps.push(maps);
        out.distances.push(dist);
        out.in_view.push(seen);
    }
    out
}

type FrameEncoding = (Vec<f32>, [f64; NUM_JOINTS], [bool; NUM_JOINTS]);

fn encode_frame(pose: &JointSet15, fisheye: &FisheyeModel, grid: &HeatmapGrid) -> FrameEncoding {
    let cells = grid.cells();
    let inv = 1.0 / (2.0 * grid.sigma * grid.sigma);
    let mut maps = vec![0f32; NUM_JOINTS * cells];
    let mut dist = [0.0; NUM_JOINTS];
    let mut seen = [false; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let p = pose.joints[j];
        dist[j] = p.norm();
        let Ok(px) = fisheye.project(&p) else { continue };
        seen[j] = true;
        let g = grid.to_grid(&px);
        let map = &mut maps[j * cells..(j + 1) * cells];
        for v in 0..grid.height {
            let dv = v as f64 - g.y;
            for u in 0..grid.width {
                let du = u as f64 - g.x;
                map[v * grid.width + u] = (-(du * du + dv * dv) * inv).exp() as f32;
            }
        }
    }
    (maps, dist, seen)
}

/// Grid cell `(u, v)` holding the largest value of one joint's heatmap.
pub fn heatmap_argmax(map: &[f32], grid: &HeatmapGrid) -> (usize, usize) {
    let mut best = 0;
    for (k, v) in map.iter().enumerate() {
        if *v > map[best] {
            best = k;
        }
    }
    (best % grid.width, best / grid.width)
}

/// Inverse of the encoding up to grid resolution.
pub fn decode_joint(map: &[f32], distance: f64, fisheye: &FisheyeModel, grid: &HeatmapGrid) -> Result<Vector3<f64>> {
    let (u, v) = heatmap_argmax(map, grid);
    let px = grid.to_image(&Vector2::new(u as f64, v as f64));
    fisheye.unproject(&px, distance)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub window: usize,
    pub stride: usize,
    pub optimizer: OptimizerConfig,
    pub heatmap_width: usize,
    pub heatmap_height: usize,
    pub heatmap_sigma: f64,
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: 50,
            stride: 50,
            optimizer: OptimizerConfig::default(),
            heatmap_width: 64,
            heatmap_height: 64,
            heatmap_sigma: 2.5,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutcome {
    pub offset: usize,
    pub len: usize,
    pub result: std::result::Result<OptimizationReport, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabel {
    /// Index of the window the label was taken from.
    pub window: usize,
    pub pose: JointSet15,
    pub camera: RigidTransform,
    pub heatmaps: Vec<f32>,
    pub distances: [f64; NUM_JOINTS],
    pub in_view: [bool; NUM_JOINTS],
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub grid: HeatmapGrid,
    pub frame_ids: Vec<usize>,
    /// `None` for frames whose every covering window failed.
    pub labels: Vec<Option<FrameLabel>>,
    pub windows: Vec<WindowOutcome>,
}

impl PseudoLabelSet {
    pub fn labeled_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|l| l.is_some()).count() as f64 / self.labels.len() as f64
    }

    pub fn failed_windows(&self) -> usize {
        self.windows.iter().filter(|w| w.result.is_err()).count()
    }

    pub fn all_windows_failed(&self) -> bool {
        !self.windows.is_empty() && self.failed_windows() == self.windows.len()
    }

    /// Labeled poses; unlabeled frames get zero confidence.
    pub fn poses(&self) -> Vec<JointSet15> {
        self.labels
            .iter()
            .map(|l| match l {
                Some(l) => l.pose,
                None => JointSet15 {
                    joints: [Vector3::zeros(); NUM_JOINTS],
                    confidence: [0.0; NUM_JOINTS],
                },
            })
            .collect()
    }

    pub fn to_pose_sequence(&self, frame_rate: f64) -> PoseSequence {
        PoseSequence::new(self.poses(), frame_rate)
    }

    /// Writes `labels.jsonl`, `heatmaps.bin` and `heatmaps.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<LabelFiles> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let files = LabelFiles {
            labels: dir.join("labels.jsonl"),
            heatmaps: dir.join("heatmaps.bin"),
            header: dir.join("heatmaps.json"),
        };
        let mut lines = String::new();
        let mut bin = Vec::new();
        let mut stored = 0usize;
        for (frame, label) in self.frame_ids.iter().zip(&self.labels) {
            let line = match label {
                Some(l) => {
                    for v in &l.heatmaps {
                        bin.extend_from_slice(&v.to_le_bytes());
                    }
                    stored += 1;
                    serde_json::json!({
                        "frame": frame,
                        "pose": point_rows(&l.pose.joints),
                        "cam": TransformLine::from_transform(&l.camera),
                        "distances": l.distances,
                        "heatmap_file": "heatmaps.bin",
                        "heatmap_index": stored - 1,
                        "flags": l.flags,
                    })
                }
                None => serde_json::json!({
                    "frame": frame,
                    "pose": null,
                    "cam": null,
                    "distances": null,
                    "heatmap_file": null,
                    "heatmap_index": null,
                    "flags": ["unlabeled"],
                }),
            };
            lines.push_str(&serde_json::to_string(&line)?);
            lines.push('\n');
        }
        fs::write(&files.labels, lines)?;
        let mut f = fs::File::create(&files.heatmaps)?;
        f.write_all(&bin)?;
        let header = serde_json::json!({
            "dtype": "float32",
            "endian": "little",
            "layout": ["frame", "joint", "row", "col"],
            "frames": stored,
            "joints": NUM_JOINTS,
            "width": self.grid.width,
            "height": self.grid.height,
            "grid": self.grid,
        });
        fs::write(&files.header, serde_json::to_string_pretty(&header)?)?;
        Ok(files)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelFiles {
    pub labels: PathBuf,
    pub heatmaps: PathBuf,
    pub header: PathBuf,
}

/// Reads the poses of a `labels.jsonl` file; unlabeled frames get zero
/// confidence.
pub fn read_label_poses(text: &str) -> Result<Vec<(usize, JointSet15)>> {
    #[derive(Deserialize)]
    struct Line {
        frame: usize,
        pose: Option<Vec<[f64; 3]>>,
    }
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: Line =
            serde_json::from_str(line).map_err(|e| Error::Schema(format!("line {}: {e}", n + 1)))?;
        let pose = match l.pose {
            Some(rows) => {
                if rows.len() != NUM_JOINTS {
                    return Err(Error::Schema(format!(
                        "line {}: pose has {} joints, expected {NUM_JOINTS}",
                        n + 1,
                        rows.len()
                    )));
                }
                JointSet15::from_joints(points_from(&rows, "pose", n + 1)?)
            }
            None => JointSet15 {
                joints: [Vector3::zeros(); NUM_JOINTS],
                confidence: [0.0; NUM_JOINTS],
            },
        };
        out.push((l.frame, pose));
    }
    Ok(out)
}

fn run_windows(
    dataset: &SequenceDataset,
    weights: &EnergyWeights,
    topo: &BoneTopology,
    prior: Option<&MotionPrior>,
    config: &PipelineConfig,
) -> Result<Vec<WindowOutcome>> {
    let offsets = window_offsets(dataset.len(), config.window, config.stride)?;
    if let Some(p) = prior {
        if p.window() != config.window {
            return Err(Error::DimensionMismatch {
                expected: config.window,
                got: p.window(),
            });
        }
    }
    Ok(par::map(&offsets, config.execution, |_, &offset| {
        let result = dataset
            .window(offset, config.window)
            .and_then(|obs| optimize_window(&obs, weights, topo, prior, &config.optimizer))
            .map_err(|e| e.to_string());
        WindowOutcome {
            offset,
            len: config.window,
            result,
        }
    }))
}

/// Index of the successful window whose center is nearest to `frame`;
/// ties go to the earlier window.
fn owner(frame: usize, windows: &[WindowOutcome]) -> Option<usize> {
    windows
        .iter()
        .enumerate()
        .filter(|(_, w)| w.result.is_ok() && frame >= w.offset && frame < w.offset + w.len)
        .min_by_key(|(k, w)| (((2 * frame) as isize - (2 * w.offset + w.len - 1) as isize).unsigned_abs(), *k))
        .map(|(k, _)| k)
}

/// Optimizes every window and stitches the per-frame results.
pub fn generate_pseudo_labels(
    dataset: &SequenceDataset,
    weights: &EnergyWeights,
    topo: &BoneTopology,
    prior: Option<&MotionPrior>,
    config: &PipelineConfig,
) -> Result<PseudoLabelSet> {
    dataset.calibration.pinhole.validate()?;
    dataset.calibration.fisheye.validate()?;
    weights.validate()?;
    config.optimizer.validate()?;
    let grid = HeatmapGrid::for_fisheye(
        &dataset.calibration.fisheye,
        config.heatmap_width,
        config.heatmap_height,
        config.heatmap_sigma,
    )?;
    let windows = run_windows(dataset, weights, topo, prior, config)?;

    let owners: Vec<Option<usize>> = (0..dataset.len()).map(|f| owner(f, &windows)).collect();
    let picked: Vec<Option<(usize, JointSet15, RigidTransform)>> = owners
        .iter()
        .enumerate()
        .map(|(f, o)| {
            o.map(|k| {
                let rep = windows[k].result.as_ref().expect("owner succeeded");
                let local = f - windows[k].offset;
                (k, rep.final_state.poses[local], rep.final_state.camera(local))
            })
        })
        .collect();
    let fisheye = dataset.calibration.fisheye;
    let labels = par::map(&picked, config.execution, |_, p| {
        p.as_ref().map(|(k, pose, camera)| {
            let (heatmaps, distances, in_view) = encode_frame(pose, &fisheye, &grid);
            let rep = windows[*k].result.as_ref().expect("owner succeeded");
            FrameLabel {
                window: *k,
                pose: *pose,
                camera: *camera,
                heatmaps,
                distances,
                in_view,
                flags: pose_frame_flags(rep, &in_view),
            }
        })
    });

    Ok(PseudoLabelSet {
        grid,
        frame_ids: dataset.frames.iter().map(|f| f.frame).collect(),
        labels,
        windows,
    })
}

fn pose_frame_flags(rep: &OptimizationReport, in_view: &[bool; NUM_JOINTS]) -> Vec<String> {
    let mut flags = Vec::new();
    if !rep.converged {
        flags.push("not_converged".to_string());
    }
    if !rep.pnp_failures.is_empty() {
        flags.push("pnp_fallback".to_string());
    }
    for (j, seen) in in_view.iter().enumerate() {
        if !seen {
            flags.push(format!("out_of_view:{j}"));
        }
    }
    flags
}

/// Stand-in for the egocentric network in the bootstrapping loop.
pub trait Estimator {
    fn predict(&mut self, dataset: &SequenceDataset) -> std::result::Result<Vec<JointSet15>, String>;
    fn update(&mut self, labels: &PseudoLabelSet) -> std::result::Result<(), String>;
}

/// Returns the dataset's own initial poses and never learns.
#[derive(Clone, Copy, Debug, Default)]
pub struct PassThroughEstimator;

impl Estimator for PassThroughEstimator {
    fn predict(&mut self, dataset: &SequenceDataset) -> std::result::Result<Vec<JointSet15>, String> {
        Ok(dataset.ego_3d_init())
    }

    fn update(&mut self, _labels: &PseudoLabelSet) -> std::result::Result<(), String> {
        Ok(())
    }
}

/// Memorizes poses and blends each round of labels into them:
/// `stored ← α·labels + (1 − α)·stored`.
#[derive(Clone, Debug)]
pub struct ReferenceEstimator {
    pub stored: Vec<JointSet15>,
    pub alpha: f64,
}

impl ReferenceEstimator {
    pub fn new(initial: Vec<JointSet15>, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("alpha must be in [0, 1], got {alpha}")));
        }
        Ok(Self { stored: initial, alpha })
    }
}

impl Estimator for ReferenceEstimator {
    fn predict(&mut self, dataset: &SequenceDataset) -> std::result::Result<Vec<JointSet15>, String> {
        if self.stored.len() != dataset.len() {
            return Err(format!(
                "estimator holds {} frames, dataset has {}",
                self.stored.len(),
                dataset.len()
            ));
        }
        Ok(self.stored.clone())
    }

    fn update(&mut self, labels: &PseudoLabelSet) -> std::result::Result<(), String> {
        if labels.labels.len() != self.stored.len() {
            return Err("label count does not match stored poses".into());
        }
        let a = self.alpha;
        for (s, l) in self.stored.iter_mut().zip(&labels.labels) {
            if let Some(l) = l {
                for j in 0..NUM_JOINTS {
                    s.joints[j] = l.pose.joints[j] * a + s.joints[j] * (1.0 - a);
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapResult {
    pub labels: PseudoLabelSet,
    /// Label PA-MPJPE per iteration (only with ground truth).
    pub pa_mpjpe_trace: Vec<f64>,
    pub iterations: usize,
}

/// Alternates estimator predictions (as initialization) with optimizer
/// passes (as training labels).
#[allow(clippy::too_many_arguments)]
pub fn bootstrap(
    dataset: &SequenceDataset,
    estimator: &mut dyn Estimator,
    weights: &EnergyWeights,
    topo: &BoneTopology,
    prior: Option<&MotionPrior>,
    config: &PipelineConfig,
    max_iter: usize,
    ground_truth: Option<&PoseSequence>,
) -> Result<BootstrapResult> {
    if max_iter < 1 {
        return Err(Error::InvalidParameter("max_iter must be ≥ 1".into()));
    }
    let mut trace = Vec::new();
    let mut last = None;
    for iteration in 0..max_iter {
        let init = estimator
            .predict(dataset)
            .map_err(|message| Error::Estimator { iteration, message })?;
        let current = dataset.with_ego_3d_init(&init)?;
        let labels = generate_pseudo_labels(&current, weights, topo, prior, config)?;
        if let Some(gt) = ground_truth {
            let rep = pa_mpjpe(&labels.to_pose_sequence(gt.frame_rate), gt)?;
            trace.push(rep.mean);
        }
        estimator
            .update(&labels)
            .map_err(|message| Error::Estimator { iteration, message })?;
        last = Some(labels);
    }
    Ok(BootstrapResult {
        labels: last.expect("max_iter ≥ 1"),
        pa_mpjpe_trace: trace,
        iterations: max_iter,
    })
}
