mod common;

use common::*;
use egolabel::energy::{EnergyWeights, Term};
use egolabel::optimize::{OptimizerConfig, RotationMode, WindowObjective};
use egolabel::prior::MotionPrior;
use egolabel::skeleton::BoneTopology;

#[test]
fn every_term_matches_finite_differences() {
    let topo = BoneTopology::standard();
    for seed in 0..10 {
        let (state, obs) = perturbed_window(seed, 4);
        for term in Term::ALL {
            let err = term_gradient_error(term, &state, &obs, &topo);
            assert!(err < tolerance(term), "seed {seed} {}: {err:e}", term.name());
        }
        let err = total_gradient_error(&state, &obs, &random_weights(seed), &topo);
        assert!(err < 1e-4, "seed {seed} total: {err:e}");
    }
}

#[test]
fn flat_objective_chains_prior_and_rotation_parameters() {
    let topo = BoneTopology::standard();
    let weights = EnergyWeights::default();
    let linear = fitted_prior(4, 6);
    let identity = MotionPrior::identity(4);
    for seed in 0..3 {
        let (state, obs) = perturbed_window(seed, 4);
        for prior in [&identity, &linear] {
            for mode in [RotationMode::AxisAngle, RotationMode::RawMatrix] {
                for slam in [false, true] {
                    let config = OptimizerConfig {
                        rotation_mode: mode,
                        optimize_slam_scale: slam,
                        ..Default::default()
                    };
                    let obj = WindowObjective::new(&obs, &weights, &topo, prior, &config).unwrap();
                    let mut s = state.clone();
                    s.latent = None;
                    let x = obj.pack(&s).unwrap();
                    let err = objective_gradient_error(&obj, &x);
                    assert!(err < 1e-4, "seed {seed} {mode:?} slam {slam}: {err:e}");
                }
            }
        }
    }
}
