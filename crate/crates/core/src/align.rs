//! Weighted Procrustes alignment and PnP camera initialization.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Matrix6, Vector2, Vector3, Vector4, Vector6, SVD};

use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, skew, PinholeModel, RigidTransform, RotationParam};

/// Similarity (or rigid) transform mapping `source` onto `target`:
/// `target ≈ scale · R · source + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentResult {
    pub scale: f64,
    pub transform: RigidTransform,
    pub residual_rms: f64,
}

impl AlignmentResult {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.transform.rotation * p * self.scale + self.transform.translation
    }
}

const RANK_TOL: f64 = 1e-10;

/// Least-squares `argmin Σ wᵢ‖targetᵢ − (s R sourceᵢ + t)‖²` with `det R = +1`.
pub fn procrustes(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    weights: &[f64],
    with_scale: bool,
) -> Result<AlignmentResult> {
    if source.len() != target.len() || source.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "procrustes: {} source, {} target, {} weights",
            source.len(),
            target.len(),
            weights.len()
        )));
    }
    let active = weights.iter().filter(|&&w| w > 0.0).count();
    if active < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: active,
        });
    }
    let w_sum: f64 = weights.iter().filter(|&&w| w > 0.0).sum();
    let mut mu_s = Vector3::zeros();
    let mut mu_t = Vector3::zeros();
    for ((s, t), &w) in source.iter().zip(target).zip(weights) {
        if w > 0.0 {
            mu_s += s * w;
            mu_t += t * w;
        }
    }
    mu_s /= w_sum;
    mu_t /= w_sum;

    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for ((s, t), &w) in source.iter().zip(target).zip(weights) {
        if w > 0.0 {
            let sc = s - mu_s;
            let tc = t - mu_t;
            cov += tc * sc.transpose() * w;
            scatter += sc * sc.transpose() * w;
            var_s += w * sc.norm_squared();
        }
    }
    let spread = scatter.symmetric_eigenvalues();
    let (lo, hi) = sorted_pair(&spread);
    if hi <= 1e-18 || lo <= RANK_TOL * hi {
        return Err(Error::DegenerateConfiguration(
            "source points are coincident or collinear",
        ));
    }

    let svd = SVD::new(cov, true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if sv[order[1]] <= RANK_TOL * sv[order[0]].max(1e-300) {
        return Err(Error::DegenerateConfiguration(
            "cross-covariance has rank below two",
        ));
    }
    let d = (u * v_t).determinant().signum();
    let mut sign = Vector3::new(1.0, 1.0, 1.0);
    // flip the direction of the smallest singular value
    sign[order[2]] = d;
    let rotation = u * Matrix3::from_diagonal(&sign) * v_t;
    sv.component_mul_assign(&sign);
    let scale = if with_scale { sv.sum() / var_s } else { 1.0 };
    let translation = mu_t - rotation * mu_s * scale;

    let mut sq = 0.0;
    for ((s, t), &w) in source.iter().zip(target).zip(weights) {
        if w > 0.0 {
            sq += w * (t - (rotation * s * scale + translation)).norm_squared();
        }
    }
    Ok(AlignmentResult {
        scale,
        transform: RigidTransform::new(rotation, translation),
        residual_rms: (sq / w_sum).sqrt(),
    })
}

fn sorted_pair(ev: &Vector3<f64>) -> (f64, f64) {
    let mut v = [ev[0], ev[1], ev[2]];
    v.sort_by(f64::total_cmp);
    // second largest decides collinearity
    (v[1], v[2])
}

/// PnP result with the DLT starting point's RMS for comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnpEstimate {
    pub transform: RigidTransform,
    /// Weighted reprojection RMS in pixels.
    pub rms: f64,
    pub dlt_rms: f64,
    pub iterations: usize,
    /// False when refinement hit its iteration cap; `transform` is the best iterate.
    pub converged: bool,
}

const PNP_MAX_ITERS: usize = 100;

/// Camera pose `[R|t]` (world → camera) from 3D-2D correspondences:
/// normalized DLT, projection onto SO(3), then damped Gauss-Newton on the
/// reprojection error.
pub fn pnp_estimate(
    points3d: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    weights: &[f64],
    model: &PinholeModel,
) -> Result<PnpEstimate> {
    if points3d.len() != pixels.len() || points3d.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "pnp: {} points, {} pixels, {} weights",
            points3d.len(),
            pixels.len(),
            weights.len()
        )));
    }
    let idx: Vec<usize> = (0..points3d.len()).filter(|&i| weights[i] > 0.0).collect();
    if idx.len() < 6 {
        return Err(Error::InsufficientPoints {
            needed: 6,
            got: idx.len(),
        });
    }

    let w_sum: f64 = idx.iter().map(|&i| weights[i]).sum();
    let centroid = idx.iter().map(|&i| points3d[i] * weights[i]).sum::<Vector3<f64>>() / w_sum;
    let mut scatter = Matrix3::zeros();
    for &i in &idx {
        let d = points3d[i] - centroid;
        scatter += d * d.transpose() * weights[i];
    }
    let mut ev = scatter.symmetric_eigenvalues();
    ev.as_mut_slice().sort_by(f64::total_cmp);
    if ev[2] <= 1e-18 || ev[0] <= 1e-8 * ev[2] {
        return Err(Error::DegenerateConfiguration(
            "3D points are coplanar or collinear",
        ));
    }
    let spread = (ev.sum() / w_sum).sqrt();

    // normalized DLT on K⁻¹-normalized image coordinates
    let mut a = DMatrix::<f64>::zeros(2 * idx.len(), 12);
    for (row, &i) in idx.iter().enumerate() {
        let x = (points3d[i] - centroid) / spread;
        let xh = Vector4::new(x.x, x.y, x.z, 1.0);
        let n = model.normalize(&pixels[i]);
        let sw = weights[i].sqrt();
        for k in 0..4 {
            a[(2 * row, k)] = sw * xh[k];
            a[(2 * row, 8 + k)] = -sw * n.x * xh[k];
            a[(2 * row + 1, 4 + k)] = sw * xh[k];
            a[(2 * row + 1, 8 + k)] = -sw * n.y * xh[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration("DLT svd failed"))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let p: Vec<f64> = v_t.row(min_idx).iter().copied().collect();
    let p_norm = Matrix3x4::from_row_slice(&p);
    let mut denorm = Matrix4::identity() / spread;
    denorm[(3, 3)] = 1.0;
    denorm.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-centroid / spread));
    let mut proj = p_norm * denorm;
    // depth of the centroid must be positive
    if proj.row(2).dot(&Vector4::new(centroid.x, centroid.y, centroid.z, 1.0).transpose()) < 0.0 {
        proj = -proj;
    }
    let m = proj.fixed_view::<3, 3>(0, 0).into_owned();
    let msv = m.singular_values();
    let lambda = msv.mean();
    if !(lambda > 0.0) {
        return Err(Error::DegenerateConfiguration("DLT produced a null camera"));
    }
    let rotation = nearest_rotation(&m);
    let translation = proj.column(3) / lambda;
    let dlt = RigidTransform::new(rotation, translation.into_owned());

    let dlt_rms = reprojection_rms(&dlt, points3d, pixels, weights, model, &idx);
    let (transform, rms, iterations, converged) =
        refine_pose(dlt, dlt_rms, points3d, pixels, weights, model, &idx);
    Ok(PnpEstimate {
        transform,
        rms,
        dlt_rms,
        iterations,
        converged,
    })
}

fn reprojection_rms(
    cam: &RigidTransform,
    points3d: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    weights: &[f64],
    model: &PinholeModel,
    idx: &[usize],
) -> f64 {
    let mut sq = 0.0;
    let mut w_sum = 0.0;
    for &i in idx {
        match model.project(cam, &points3d[i]) {
            Ok(p) => sq += weights[i] * (pixels[i] - p).norm_squared(),
            Err(_) => return f64::INFINITY,
        }
        w_sum += weights[i];
    }
    (sq / w_sum).sqrt()
}

/// Levenberg-damped Gauss-Newton on a left-multiplicative rotation update.
fn refine_pose(
    init: RigidTransform,
    init_rms: f64,
    points3d: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    weights: &[f64],
    model: &PinholeModel,
    idx: &[usize],
) -> (RigidTransform, f64, usize, bool) {
    let mut best = init;
    let mut best_rms = init_rms;
    if !best_rms.is_finite() {
        return (best, best_rms, 0, false);
    }
    let mut damping = 1e-6;
    for iter in 0..PNP_MAX_ITERS {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for &i in idx {
            let rx = best.rotation * points3d[i];
            let pc = rx + best.translation;
            let Ok((px, jp)) = model.project_camera_point_with_jacobian(&pc) else {
                continue;
            };
            let r = pixels[i] - px;
            let mut jc = nalgebra::Matrix3x6::<f64>::zeros();
            jc.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rx)));
            jc.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = jp * jc;
            h += j.transpose() * j * weights[i];
            g += j.transpose() * r * weights[i];
        }
        if g.norm() <= 1e-14 * (1.0 + h.norm()) {
            return (best, best_rms, iter, true);
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut hd = h;
            for k in 0..6 {
                hd[(k, k)] += damping * h[(k, k)].max(1e-12);
            }
            let Some(delta) = hd.cholesky().map(|c| c.solve(&g)) else {
                damping *= 10.0;
                continue;
            };
            let dr = RotationParam::new(delta.fixed_rows::<3>(0).into_owned()).to_matrix();
            let cand = RigidTransform::new(
                dr * best.rotation,
                best.translation + delta.fixed_rows::<3>(3),
            );
            let rms = reprojection_rms(&cand, points3d, pixels, weights, model, idx);
            if rms < best_rms {
                let rel = (best_rms - rms) / best_rms.max(1e-300);
                best = cand;
                best_rms = rms;
                damping = (damping * 0.1).max(1e-12);
                improved = true;
                if rel < 1e-12 {
                    return (best, best_rms, iter + 1, true);
                }
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            // no descent direction left at machine precision
            return (best, best_rms, iter + 1, true);
        }
    }
    (best, best_rms, PNP_MAX_ITERS, false)
}
