//! First-order minimization of the window objective.
//!
//! The optimizer works on one flat variable vector:
//! `[latent | rotations | translations | slam scale?]`. Latent (pose) and
//! translation entries are stored in meters so that a single step size
//! suits every block.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::align::pnp_estimate;
use crate::energy::{
    total_energy, EnergyEvaluation, EnergyWeights, StateGradient, WindowObservations, WindowState,
    NUM_TERMS,
};
use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, RigidTransform, RotationParam};
use crate::prior::MotionPrior;
use crate::skeleton::BoneTopology;

/// Millimeters → optimizer units.
pub const LENGTH_SCALE: f64 = 1e-3;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Consecutive small decreases required before declaring convergence.
const STALL_PATIENCE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationMode {
    /// Three axis-angle parameters per camera; the orthogonality term is
    /// identically zero.
    AxisAngle,
    /// Nine free matrix entries per camera, kept near SO(3) by the
    /// orthogonality term and projected onto SO(3) on output.
    RawMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Initial trial step in optimizer units.
    pub step_size: f64,
    /// Stop once an accepted step lowers the energy by less than this fraction.
    pub tol_rel: f64,
    pub rotation_mode: RotationMode,
    pub optimize_slam_scale: bool,
    /// Recorded in reports; the minimizer itself is deterministic.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step_size: 1e-7,
            tol_rel: 1e-8,
            rotation_mode: RotationMode::RawMatrix,
            optimize_slam_scale: false,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be ≥ 1".into()));
        }
        if !(self.tol_rel > 0.0) {
            return Err(Error::InvalidParameter("tol_rel must be positive".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidParameter("step_size must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)
            .map_err(|e| Error::Schema(format!("optimizer config: {e}")))?;
        c.validate()
            .map_err(|e| Error::Schema(format!("optimizer config: {e}")))?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationReport {
    /// Explicit poses; cameras orthonormalized.
    pub final_state: WindowState,
    /// Total energy of the initialization followed by every accepted iterate.
    pub energy_trace: Vec<f64>,
    pub term_trace: Vec<[f64; NUM_TERMS]>,
    pub iterations_used: usize,
    pub converged: bool,
    pub dropped_residual_count: usize,
    pub initial_energy: f64,
    /// Energy of `final_state` (after projection onto SO(3)).
    pub final_energy: f64,
    /// Energy of the last iterate before SO(3) projection (raw-matrix mode).
    pub pre_projection_energy: Option<f64>,
    /// Frames whose PnP initialization failed and borrowed a neighbour's pose.
    pub pnp_failures: Vec<usize>,
}

impl OptimizationReport {
    /// CSV trace: `iter,total,<eight terms>`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,total");
        for t in crate::energy::Term::ALL {
            s.push(',');
            s.push_str(t.name());
        }
        s.push('\n');
        for (i, (total, terms)) in self.energy_trace.iter().zip(&self.term_trace).enumerate() {
            s.push_str(&format!("{i},{total:e}"));
            for v in terms {
                s.push_str(&format!(",{v:e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Index layout of the flat variable vector.
#[derive(Clone, Copy, Debug)]
struct Layout {
    frames: usize,
    latent: usize,
    rot_dim: usize,
    scale: bool,
    /// Stored value of the SLAM scale is `slam_scale · scale_factor`.
    scale_factor: f64,
}

impl Layout {
    fn rot_offset(&self) -> usize {
        self.latent
    }
    fn trans_offset(&self) -> usize {
        self.latent + self.frames * self.rot_dim
    }
    fn scale_offset(&self) -> usize {
        self.trans_offset() + 3 * self.frames
    }
    fn len(&self) -> usize {
        self.scale_offset() + usize::from(self.scale)
    }
}

/// Jacobi scaling of the SLAM scale variable: its curvature under the
/// consistency term, relative to that of one pose coordinate in meters
/// under a unit-weight mm² term.
fn slam_scale_factor(obs: &WindowObservations, weights: &EnergyWeights) -> f64 {
    let k = crate::energy::CONSISTENCY_LENGTH_SCALE;
    let curvature: f64 = obs
        .slam_rel
        .iter()
        .flatten()
        .map(|r| 2.0 * weights.lambda_cam_consistency * (r.translation * k).norm_squared())
        .sum();
    let reference = 2.0 / (LENGTH_SCALE * LENGTH_SCALE);
    if curvature > 0.0 {
        (curvature / reference).sqrt()
    } else {
        1.0
    }
}

/// The window objective as a function of the flat variable vector.
pub struct WindowObjective<'a> {
    obs: &'a WindowObservations,
    weights: &'a EnergyWeights,
    topo: &'a BoneTopology,
    prior: &'a MotionPrior,
    mode: RotationMode,
    layout: Layout,
}

impl<'a> WindowObjective<'a> {
    pub fn new(
        obs: &'a WindowObservations,
        weights: &'a EnergyWeights,
        topo: &'a BoneTopology,
        prior: &'a MotionPrior,
        config: &OptimizerConfig,
    ) -> Result<Self> {
        if prior.window() != obs.len() {
            return Err(Error::DimensionMismatch {
                expected: obs.len(),
                got: prior.window(),
            });
        }
        let layout = Layout {
            frames: obs.len(),
            latent: prior.latent_dim(),
            rot_dim: match config.rotation_mode {
                RotationMode::AxisAngle => 3,
                RotationMode::RawMatrix => 9,
            },
            scale: config.optimize_slam_scale,
            scale_factor: slam_scale_factor(obs, weights),
        };
        Ok(Self {
            obs,
            weights,
            topo,
            prior,
            mode: config.rotation_mode,
            layout,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn pack(&self, state: &WindowState) -> Result<Vec<f64>> {
        let l = self.layout;
        let mut x = vec![0.0; l.len()];
        let z = match &state.latent {
            Some(z) => z.clone(),
            None => self.prior.encode(&state.poses)?,
        };
        for (dst, v) in x[..l.latent].iter_mut().zip(&z) {
            *dst = v * LENGTH_SCALE;
        }
        for i in 0..l.frames {
            let off = l.rot_offset() + i * l.rot_dim;
            match self.mode {
                RotationMode::AxisAngle => {
                    let w = RotationParam::from_matrix(&state.cam_rotations[i]).axis_angle;
                    x[off..off + 3].copy_from_slice(w.as_slice());
                }
                RotationMode::RawMatrix => {
                    let r = state.cam_rotations[i];
                    for a in 0..3 {
                        for b in 0..3 {
                            x[off + 3 * a + b] = r[(a, b)];
                        }
                    }
                }
            }
            let t = state.cam_translations[i] * LENGTH_SCALE;
            x[l.trans_offset() + 3 * i..l.trans_offset() + 3 * i + 3].copy_from_slice(t.as_slice());
        }
        if l.scale {
            x[l.scale_offset()] = state.slam_scale * l.scale_factor;
        }
        Ok(x)
    }

    pub fn unpack(&self, x: &[f64]) -> Result<WindowState> {
        let l = self.layout;
        let z: Vec<f64> = x[..l.latent].iter().map(|v| v / LENGTH_SCALE).collect();
        let poses = self.prior.decode(&z)?;
        let mut cam_rotations = Vec::with_capacity(l.frames);
        let mut cam_translations = Vec::with_capacity(l.frames);
        for i in 0..l.frames {
            let off = l.rot_offset() + i * l.rot_dim;
            cam_rotations.push(match self.mode {
                RotationMode::AxisAngle => {
                    RotationParam::new(Vector3::from_column_slice(&x[off..off + 3])).to_matrix()
                }
                RotationMode::RawMatrix => Matrix3::from_row_slice(&x[off..off + 9]),
            });
            let t = Vector3::from_column_slice(&x[l.trans_offset() + 3 * i..l.trans_offset() + 3 * i + 3]);
            cam_translations.push(t / LENGTH_SCALE);
        }
        Ok(WindowState {
            poses,
            cam_rotations,
            cam_translations,
            slam_scale: if l.scale {
                x[l.scale_offset()] / l.scale_factor
            } else {
                1.0
            },
            latent: Some(z),
        })
    }

    fn pack_gradient(&self, x: &[f64], g: &StateGradient) -> Vec<f64> {
        let l = self.layout;
        let mut out = vec![0.0; l.len()];
        let gz = g
            .latent
            .clone()
            .unwrap_or_else(|| self.prior.pullback(&g.flat_poses()));
        for (dst, v) in out[..l.latent].iter_mut().zip(&gz) {
            *dst = v / LENGTH_SCALE;
        }
        for i in 0..l.frames {
            let off = l.rot_offset() + i * l.rot_dim;
            let gr = g.rotations[i];
            match self.mode {
                RotationMode::AxisAngle => {
                    let w = Vector3::from_column_slice(&x[off..off + 3]);
                    let d = RotationParam::new(w).matrix_derivatives();
                    for k in 0..3 {
                        out[off + k] = gr.component_mul(&d[k]).sum();
                    }
                }
                RotationMode::RawMatrix => {
                    for a in 0..3 {
                        for b in 0..3 {
                            out[off + 3 * a + b] = gr[(a, b)];
                        }
                    }
                }
            }
            for k in 0..3 {
                out[l.trans_offset() + 3 * i + k] = g.translations[i][k] / LENGTH_SCALE;
            }
        }
        if l.scale {
            out[l.scale_offset()] = g.slam_scale / l.scale_factor;
        }
        out
    }

    /// Energy and gradient at `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<(EnergyEvaluation, Vec<f64>)> {
        let state = self.unpack(x)?;
        let eval = total_energy(&state, self.obs, self.weights, self.topo, Some(self.prior))?;
        let grad = self.pack_gradient(x, &eval.gradient);
        Ok((eval, grad))
    }
}

/// Per-frame PnP of the external 2D joints against the initial egocentric
/// poses. Each frame tries the joints trusted by both detectors and the
/// joints trusted by the external detector alone, keeping the estimate that
/// reprojects best over all externally visible joints. Frames that fail
/// borrow the nearest successful frame's camera.
pub fn initialize_cameras(obs: &WindowObservations) -> Result<(Vec<RigidTransform>, Vec<usize>)> {
    let b = obs.len();
    let mut cams: Vec<Option<RigidTransform>> = Vec::with_capacity(b);
    for i in 0..b {
        let init = &obs.ego_3d_init[i];
        let kp = &obs.ext_2d[i];
        let both: Vec<f64> = (0..kp.confidence.len())
            .map(|j| kp.confidence[j] * init.confidence[j])
            .collect();
        let rms = |cam: &RigidTransform| {
            let (mut sum, mut w) = (0.0, 0.0);
            for j in 0..kp.confidence.len() {
                let c = kp.confidence[j];
                if c <= 0.0 {
                    continue;
                }
                match obs.pinhole.project(cam, &init.joints[j]) {
                    Ok(px) => {
                        sum += c * (px - kp.pixels[j]).norm_squared();
                        w += c;
                    }
                    Err(_) => return f64::INFINITY,
                }
            }
            if w > 0.0 {
                (sum / w).sqrt()
            } else {
                f64::INFINITY
            }
        };
        let best = [&both[..], &kp.confidence[..]]
            .into_iter()
            .filter_map(|w| pnp_estimate(&init.joints, &kp.pixels, w, &obs.pinhole).ok())
            .map(|e| (rms(&e.transform), e.transform))
            .filter(|(r, _)| r.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, t)| t);
        cams.push(best);
    }
    let failures: Vec<usize> = (0..b).filter(|&i| cams[i].is_none()).collect();
    if failures.len() == b {
        return Err(Error::InitializationFailure);
    }
    let filled = (0..b)
        .map(|i| {
            cams[i].unwrap_or_else(|| {
                let nearest = (0..b)
                    .filter(|&k| cams[k].is_some())
                    .min_by_key(|&k| (k as isize - i as isize).unsigned_abs())
                    .expect("at least one camera");
                cams[nearest].expect("checked")
            })
        })
        .collect();
    Ok((filled, failures))
}

/// Initial state: latent from the detector poses, cameras from PnP.
pub fn initial_state(obs: &WindowObservations, prior: &MotionPrior) -> Result<(WindowState, Vec<usize>)> {
    let (cams, failures) = initialize_cameras(obs)?;
    let z = prior.encode(&obs.ego_3d_init)?;
    let mut state = WindowState::new(prior.decode(&z)?, &cams);
    state.latent = Some(z);
    Ok((state, failures))
}

/// Minimizes the window objective from the PnP/encoder initialization.
pub fn optimize_window(
    obs: &WindowObservations,
    weights: &EnergyWeights,
    topo: &BoneTopology,
    prior: Option<&MotionPrior>,
    config: &OptimizerConfig,
) -> Result<OptimizationReport> {
    obs.validate()?;
    weights.validate()?;
    config.validate()?;
    let identity;
    let prior = match prior {
        Some(p) => p,
        None => {
            identity = MotionPrior::identity(obs.len());
            &identity
        }
    };
    let (state, failures) = initial_state(obs, prior)?;
    let mut report = optimize_from(obs, weights, topo, prior, config, &state)?;
    report.pnp_failures = failures;
    Ok(report)
}

/// Minimizes the window objective from a given state.
pub fn optimize_from(
    obs: &WindowObservations,
    weights: &EnergyWeights,
    topo: &BoneTopology,
    prior: &MotionPrior,
    config: &OptimizerConfig,
    init: &WindowState,
) -> Result<OptimizationReport> {
    config.validate()?;
    let objective = WindowObjective::new(obs, weights, topo, prior, config)?;
    let mut x = objective.pack(init)?;
    let (mut eval, mut grad) = objective.evaluate(&x)?;
    let initial_energy = eval.total;
    let mut energy_trace = vec![eval.total];
    let mut term_trace = vec![eval.terms];
    let mut converged = false;
    let mut iterations = 0;
    let mut step = config.step_size;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut stalled = 0;

    while iterations < config.max_iters {
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2 == 0.0 || !g2.is_finite() {
            converged = g2 == 0.0;
            break;
        }
        // Barzilai-Borwein trial step, then Armijo backtracking by halving.
        if let Some((px, pg)) = &prev {
            let (mut ss, mut sy) = (0.0, 0.0);
            for k in 0..x.len() {
                let s = x[k] - px[k];
                let y = grad[k] - pg[k];
                ss += s * s;
                sy += s * y;
            }
            if sy > 0.0 && ss > 0.0 {
                step = ss / sy;
            } else {
                step *= 2.0;
            }
        }
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - alpha * gi).collect();
            if let Ok((e, g)) = objective.evaluate(&cand) {
                if e.total.is_finite() && e.total <= eval.total - ARMIJO_C * alpha * g2 {
                    accepted = Some((cand, e, g));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((cand, e, g)) = accepted else {
            break;
        };
        iterations += 1;
        step = alpha;
        let decrease = eval.total - e.total;
        let scale = eval.total.abs().max(f64::MIN_POSITIVE);
        prev = Some((std::mem::replace(&mut x, cand), std::mem::replace(&mut grad, g)));
        eval = e;
        energy_trace.push(eval.total);
        term_trace.push(eval.terms);
        if decrease <= config.tol_rel * scale {
            stalled += 1;
            if stalled >= STALL_PATIENCE {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let mut final_state = objective.unpack(&x)?;
    let mut pre_projection_energy = None;
    let mut final_eval = eval;
    if config.rotation_mode == RotationMode::RawMatrix {
        pre_projection_energy = Some(final_eval.total);
        for r in final_state.cam_rotations.iter_mut() {
            *r = nearest_rotation(r);
        }
        final_eval = total_energy(&final_state, obs, weights, topo, Some(prior))?;
    }
    let final_energy = final_eval.total;
    final_state.poses = prior.decode(final_state.latent.as_deref().unwrap_or(&[]))?;
    Ok(OptimizationReport {
        final_state,
        energy_trace,
        term_trace,
        iterations_used: iterations,
        converged,
        dropped_residual_count: final_eval.dropped_total(),
        initial_energy,
        final_energy,
        pre_projection_energy,
        pnp_failures: Vec::new(),
    })
}
