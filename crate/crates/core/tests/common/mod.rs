//! Shared fixtures and finite-difference oracles for the integration tests.
#![allow(dead_code)]

use egolabel::energy::{evaluate_term, total_energy, EnergyWeights, StateGradient, Term, WindowObservations, WindowState};
use egolabel::geometry::RotationParam;
use egolabel::optimize::WindowObjective;
use egolabel::prior::MotionPrior;
use egolabel::skeleton::{BoneTopology, NUM_JOINTS};
use egolabel::synth::{gen_scenario, MotionKind, NoiseConfig, Occlusion, ScenarioConfig};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A short noisy window and a state perturbed away from ground truth, so
/// that every term is non-zero. Rotations are perturbed off SO(3).
pub fn perturbed_window(seed: u64, frames: usize) -> (WindowState, WindowObservations) {
    let s = gen_scenario(&ScenarioConfig {
        frames,
        motion: MotionKind::RandomSmooth,
        occlusion: Occlusion::None,
        noise: NoiseConfig::default(),
        seed,
        ..Default::default()
    })
    .unwrap();
    let obs = s.dataset.window(0, frames).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut state = WindowState::new(s.gt_poses.frames.clone(), &s.gt_cameras);
    for p in state.poses.iter_mut() {
        for j in p.joints.iter_mut() {
            *j += Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        }
    }
    for (r, t) in state.cam_rotations.iter_mut().zip(state.cam_translations.iter_mut()) {
        let w = Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
        *r = RotationParam::new(w).to_matrix() * *r;
        for v in r.iter_mut() {
            *v += rng.random_range(-0.02..0.02);
        }
        *t += Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    }
    state.slam_scale = rng.random_range(0.8..1.2);
    (state, obs)
}

/// Variable `k` of the explicit state, with its finite-difference step.
fn coord(state: &mut WindowState, k: usize) -> (&mut f64, f64) {
    let b = state.poses.len();
    let np = b * NUM_JOINTS * 3;
    if k < np {
        let (i, r) = (k / (NUM_JOINTS * 3), k % (NUM_JOINTS * 3));
        return (&mut state.poses[i].joints[r / 3][r % 3], 0.1);
    }
    let k = k - np;
    if k < 9 * b {
        return (&mut state.cam_rotations[k / 9][((k % 9) / 3, k % 3)], 1e-4);
    }
    let k = k - 9 * b;
    if k < 3 * b {
        return (&mut state.cam_translations[k / 3][k % 3], 0.3);
    }
    (&mut state.slam_scale, 1e-4)
}

fn flatten_gradient(g: &StateGradient) -> Vec<f64> {
    let mut out = g.flat_poses();
    for r in &g.rotations {
        for a in 0..3 {
            for b in 0..3 {
                out.push(r[(a, b)]);
            }
        }
    }
    for t in &g.translations {
        out.extend_from_slice(t.as_slice());
    }
    out.push(g.slam_scale);
    out
}

/// `max_k |analytic_k − fd_k| / max(‖fd‖∞, 1e-12)`.
pub fn relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic.iter().zip(fd).fold(0.0f64, |m, (a, f)| m.max((a - f).abs())) / scale
}

fn state_fd(state: &WindowState, f: impl Fn(&WindowState) -> f64) -> Vec<f64> {
    let n = state.poses.len() * (NUM_JOINTS * 3 + 12) + 1;
    let mut s = state.clone();
    (0..n)
        .map(|k| {
            let (v, h) = coord(&mut s, k);
            let x0 = *v;
            *v = x0 + h;
            let fp = f(&s);
            let (v, _) = coord(&mut s, k);
            *v = x0 - h;
            let fm = f(&s);
            let (v, _) = coord(&mut s, k);
            *v = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn term_gradient_error(term: Term, state: &WindowState, obs: &WindowObservations, topo: &BoneTopology) -> f64 {
    let analytic = flatten_gradient(&evaluate_term(term, state, obs, topo).gradient);
    let fd = state_fd(state, |s| evaluate_term(term, s, obs, topo).value);
    relative_error(&analytic, &fd)
}

pub fn total_gradient_error(state: &WindowState, obs: &WindowObservations, weights: &EnergyWeights, topo: &BoneTopology) -> f64 {
    let analytic = flatten_gradient(&total_energy(state, obs, weights, topo, None).unwrap().gradient);
    let fd = state_fd(state, |s| total_energy(s, obs, weights, topo, None).unwrap().total);
    relative_error(&analytic, &fd)
}

/// Gradient check of the optimizer's flat objective (latent, rotation
/// parameterization and unit scaling chained in).
pub fn objective_gradient_error(objective: &WindowObjective, x: &[f64]) -> f64 {
    let (_, analytic) = objective.evaluate(x).unwrap();
    let mut y = x.to_vec();
    let fd: Vec<f64> = (0..x.len())
        .map(|k| {
            let h = 1e-4 * x[k].abs().max(1.0) * 1e-1;
            y[k] = x[k] + h;
            let fp = objective.evaluate(&y).unwrap().0.total;
            y[k] = x[k] - h;
            let fm = objective.evaluate(&y).unwrap().0.total;
            y[k] = x[k];
            (fp - fm) / (2.0 * h)
        })
        .collect();
    relative_error(&analytic, &fd)
}

/// Random weights in [0.5, 2] so that every term carries a distinct share.
pub fn random_weights(seed: u64) -> EnergyWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
    let mut a = [0.0; 8];
    for v in a.iter_mut() {
        *v = rng.random_range(0.5..2.0);
    }
    EnergyWeights::from_array(a)
}

pub fn tolerance(term: Term) -> f64 {
    match term {
        Term::ReprojEgo | Term::PoseExt => 1e-4,
        _ => 1e-5,
    }
}

/// A linear prior fitted to seeded motions of `frames` frames.
pub fn fitted_prior(frames: usize, latent: usize) -> MotionPrior {
    let motions: Vec<_> = (0..latent as u64 + 4)
        .map(|seed| {
            gen_scenario(&ScenarioConfig {
                frames,
                motion: MotionKind::RandomSmooth,
                noise: NoiseConfig::zero(),
                seed: 1000 + seed,
                ..Default::default()
            })
            .unwrap()
            .gt_poses
        })
        .collect();
    egolabel::prior::fit_linear_subspace(&motions, latent).unwrap()
}
