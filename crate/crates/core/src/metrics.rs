//! PA-MPJPE and BA-MPJPE with per-frame alignment.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::align::procrustes;
use crate::error::{Error, Result};
use crate::skeleton::{rescale_to_skeleton, BoneTopology, JointSet15, PoseSequence, NUM_JOINTS};

/// Mean joint error of one frame after aligning `pred` onto `gt`. Only
/// joints with positive confidence in both are used.
pub fn frame_pa_mpjpe(pred: &JointSet15, gt: &JointSet15, with_scale: bool) -> Result<f64> {
    let w: Vec<f64> = (0..NUM_JOINTS)
        .map(|j| {
            if pred.confidence[j] > 0.0 && gt.confidence[j] > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let al = procrustes(&pred.joints, &gt.joints, &w, with_scale)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 0..NUM_JOINTS {
        if w[j] > 0.0 {
            sum += (al.apply(&pred.joints[j]) - gt.joints[j]).norm();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    /// Mean over usable frames, in mm.
    pub mean: f64,
    pub median: f64,
    /// `None` for skipped frames.
    pub per_frame: Vec<Option<f64>>,
    pub frames_used: usize,
    pub frames_skipped: usize,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn summarize(per_frame: Vec<Option<f64>>) -> Result<MetricReport> {
    let mut used: Vec<f64> = per_frame.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mean = used.iter().sum::<f64>() / used.len() as f64;
    let frames_used = used.len();
    Ok(MetricReport {
        mean,
        median: median(&mut used),
        frames_skipped: per_frame.len() - frames_used,
        per_frame,
        frames_used,
    })
}

fn check_lengths(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

/// Similarity-aligned PA-MPJPE (mm); frames with fewer than three usable
/// joints or a degenerate configuration are skipped and counted.
pub fn pa_mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<MetricReport> {
    pa_mpjpe_with(pred, gt, true)
}

pub fn pa_mpjpe_with(pred: &PoseSequence, gt: &PoseSequence, with_scale: bool) -> Result<MetricReport> {
    check_lengths(pred, gt)?;
    summarize(
        pred.frames
            .iter()
            .zip(&gt.frames)
            .map(|(p, g)| frame_pa_mpjpe(p, g, with_scale).ok())
            .collect(),
    )
}

fn frame_ba_mpjpe(pred: &JointSet15, gt: &JointSet15, topo: &BoneTopology) -> Result<f64> {
    frame_pa_mpjpe(&rescale_to_skeleton(pred, topo)?, &rescale_to_skeleton(gt, topo)?, true)
}

/// PA-MPJPE after rescaling both skeletons to the reference bone lengths.
pub fn ba_mpjpe(pred: &PoseSequence, gt: &PoseSequence, topo: &BoneTopology) -> Result<MetricReport> {
    check_lengths(pred, gt)?;
    summarize(
        pred.frames
            .iter()
            .zip(&gt.frames)
            .map(|(p, g)| frame_ba_mpjpe(p, g, topo).ok())
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionBreakdown {
    pub pa_mpjpe: f64,
    pub ba_mpjpe: f64,
    pub frames: usize,
}

/// The `evaluate` report. Only frames where both metrics succeed are used.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub pa_mpjpe: f64,
    pub ba_mpjpe: f64,
    pub pa_mpjpe_median: f64,
    pub ba_mpjpe_median: f64,
    pub frames_used: usize,
    pub frames_skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_action: Option<BTreeMap<String, ActionBreakdown>>,
}

pub fn evaluate(pred: &PoseSequence, gt: &PoseSequence, topo: &BoneTopology, per_action: bool) -> Result<EvaluationReport> {
    check_lengths(pred, gt)?;
    let rows: Vec<Option<(f64, f64)>> = pred
        .frames
        .iter()
        .zip(&gt.frames)
        .map(|(p, g)| Some((frame_pa_mpjpe(p, g, true).ok()?, frame_ba_mpjpe(p, g, topo).ok()?)))
        .collect();
    let pa = summarize(rows.iter().map(|r| r.map(|v| v.0)).collect())?;
    let ba = summarize(rows.iter().map(|r| r.map(|v| v.1)).collect())?;

    let per_action = if per_action {
        let tags = gt.tags.as_ref().or(pred.tags.as_ref());
        tags.map(|tags| {
            let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
            for (tag, row) in tags.iter().zip(&rows) {
                if let Some((a, b)) = row {
                    let e = acc.entry(tag.clone()).or_default();
                    e.0 += a;
                    e.1 += b;
                    e.2 += 1;
                }
            }
            acc.into_iter()
                .map(|(k, (a, b, n))| {
                    (
                        k,
                        ActionBreakdown {
                            pa_mpjpe: a / n as f64,
                            ba_mpjpe: b / n as f64,
                            frames: n,
                        },
                    )
                })
                .collect()
        })
    } else {
        None
    };

    Ok(EvaluationReport {
        pa_mpjpe: pa.mean,
        ba_mpjpe: ba.mean,
        pa_mpjpe_median: pa.median,
        ba_mpjpe_median: ba.median,
        frames_used: pa.frames_used,
        frames_skipped: pa.frames_skipped,
        per_action,
    })
}
