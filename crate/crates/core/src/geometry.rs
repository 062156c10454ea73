//! Rigid transforms, rotation parameterization and the two camera models.
//!
//! Lengths are millimeters throughout. The external camera is a plain
//! pinhole; the head-mounted camera uses an omnidirectional polynomial
//! model where a pixel maps to the ray `(u', v', f(rho))` with
//! `f(rho) = a0 + a2 rho^2 + a3 rho^3 + a4 rho^4`.

use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Vector2, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum camera-frame depth accepted by the pinhole model.
pub const MIN_DEPTH_MM: f64 = 1e-6;

/// A rigid transform `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(RotationParam::new(axis_angle).to_matrix(), translation)
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Inverse assuming an orthonormal rotation block.
    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -(rt * self.translation))
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Replaces the rotation block by its nearest rotation (polar projection).
    pub fn orthonormalized(&self) -> Self {
        Self::new(nearest_rotation(&self.rotation), self.translation)
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        orthonormality_error(&self.rotation) < tol && self.rotation.determinant() > 0.0
    }
}

/// `a ∘ b`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// `‖RᵀR − I‖_F`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Closest matrix in SO(3) under the Frobenius norm.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = 0.5 * skew_vee(&(rel - rel.transpose())).norm();
    s.atan2(c)
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
fn skew_vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Axis-angle rotation parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationParam {
    pub axis_angle: Vector3<f64>,
}

impl RotationParam {
    pub fn new(axis_angle: Vector3<f64>) -> Self {
        Self { axis_angle }
    }

    /// Rodrigues' formula.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let w = self.axis_angle;
        let theta2 = w.norm_squared();
        let k = skew(&w);
        let (a, b) = if theta2 < 1e-10 {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            let theta = theta2.sqrt();
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        Matrix3::identity() + k * a + k * k * b
    }

    /// Logarithm of a rotation matrix. Angles near π use the symmetric part.
    pub fn from_matrix(r: &Matrix3<f64>) -> Self {
        let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let v = 0.5 * skew_vee(&(r - r.transpose()));
        let s = v.norm();
        let theta = s.atan2(c);
        if theta < 1e-6 {
            return Self::new(v * (1.0 + theta * theta / 6.0));
        }
        if std::f64::consts::PI - theta > 1e-4 {
            return Self::new(v * (theta / s));
        }
        // near π: R ≈ 2 n nᵀ − I
        let b = (r + Matrix3::identity()) * 0.5;
        let col = (0..3)
            .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
            .unwrap_or(0);
        let mut n = b.column(col).into_owned();
        n /= n.norm();
        if n.dot(&v) < 0.0 {
            n = -n;
        }
        Self::new(n * theta)
    }

    /// `∂R/∂ω_k` for k = 0, 1, 2.
    pub fn matrix_derivatives(&self) -> [Matrix3<f64>; 3] {
        let w = self.axis_angle;
        let r = self.to_matrix();
        let n2 = w.norm_squared();
        let mut out = [Matrix3::zeros(); 3];
        for (k, d) in out.iter_mut().enumerate() {
            let e = Vector3::ith(k, 1.0);
            if n2 < 1e-16 {
                *d = skew(&e) * r;
            } else {
                let ik = (Matrix3::identity() - r) * e;
                *d = (skew(&w) * w[k] + skew(&w.cross(&ik))) * r / n2;
            }
        }
        out
    }
}

/// Pinhole intrinsics of the external camera, no distortion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let m = Self { fx, fy, cx, cy };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "pinhole focal lengths must be positive, got fx={}, fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a world point through the camera pose `cam` (world → camera).
    pub fn project(&self, cam: &RigidTransform, point: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project_camera_point(&cam.apply(point))
    }

    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Result<Vector2<f64>> {
        if pc.z <= MIN_DEPTH_MM {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        Ok(Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    /// Pixel and `∂pixel/∂pc` for a camera-frame point.
    pub fn project_camera_point_with_jacobian(
        &self,
        pc: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, Matrix2x3<f64>)> {
        let px = self.project_camera_point(pc)?;
        let iz = 1.0 / pc.z;
        let j = Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * pc.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * pc.y * iz * iz,
        );
        Ok((px, j))
    }

    /// Normalized image coordinates `K⁻¹ [u v 1]ᵀ`.
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
        )
    }
}

/// Omnidirectional polynomial fisheye model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FisheyeModel {
    /// `[a0, a2, a3, a4]`; the linear coefficient is fixed to zero.
    pub poly: [f64; 4],
    pub center: Vector2<f64>,
    /// Maps undistorted sensor coordinates `(u', v')` to pixel offsets.
    pub affine: Matrix2<f64>,
    /// Largest valid `rho`.
    pub image_radius: f64,
}

const FISHEYE_SCAN_STEPS: usize = 64;

impl FisheyeModel {
    pub fn new(
        poly: [f64; 4],
        center: Vector2<f64>,
        affine: Matrix2<f64>,
        image_radius: f64,
    ) -> Result<Self> {
        let m = Self {
            poly,
            center,
            affine,
            image_radius,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.poly[0] == 0.0 || !self.poly.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter(
                "fisheye a0 must be finite and non-zero".into(),
            ));
        }
        if !(self.image_radius > 0.0) {
            return Err(Error::InvalidParameter(
                "fisheye image_radius must be positive".into(),
            ));
        }
        if self.affine.determinant().abs() < 1e-12 {
            return Err(Error::InvalidParameter(
                "fisheye affine matrix is singular".into(),
            ));
        }
        Ok(())
    }

    /// Synthetic head-mounted calibration: 1024×1024 sensor, roughly 195°
    /// field of view, mild stretch term.
    pub fn default_synthetic() -> Self {
        Self {
            poly: [300.0, -1.2e-3, -5.0e-7, 0.0],
            center: Vector2::new(512.0, 512.0),
            affine: Matrix2::new(1.0, 0.0, 0.0, 1.0),
            image_radius: 500.0,
        }
    }

    /// `+1` when the optical axis is `+z`, `-1` for the `a0 < 0` convention.
    pub fn axis_sign(&self) -> f64 {
        self.poly[0].signum()
    }

    #[inline]
    pub fn radial(&self, rho: f64) -> f64 {
        let [a0, a2, a3, a4] = self.poly;
        let r2 = rho * rho;
        a0 + r2 * (a2 + rho * (a3 + rho * a4))
    }

    #[inline]
    fn radial_derivative(&self, rho: f64) -> f64 {
        rho * self.radial_derivative_over_rho(rho)
    }

    /// `f'(rho) / rho`, finite at zero.
    #[inline]
    fn radial_derivative_over_rho(&self, rho: f64) -> f64 {
        let [_, a2, a3, a4] = self.poly;
        2.0 * a2 + rho * (3.0 * a3 + rho * 4.0 * a4)
    }

    /// Angle between the optical axis and the ray through sensor radius `rho`.
    pub fn field_angle(&self, rho: f64) -> f64 {
        rho.atan2(self.axis_sign() * self.radial(rho))
    }

    /// Half field of view: the field angle at `image_radius`.
    pub fn half_fov(&self) -> f64 {
        self.field_angle(self.image_radius)
    }

    /// Sensor radius of the ray through `point`, solving `f(rho)·r = z·rho`.
    fn solve_rho(&self, point: &Vector3<f64>) -> Result<f64> {
        let r = point.x.hypot(point.y);
        let z = point.z;
        let g = |rho: f64| self.radial(rho) * r - z * rho;
        let big_r = self.image_radius;
        let h = big_r / FISHEYE_SCAN_STEPS as f64;
        let mut lo = 0.0;
        let mut g_lo = g(lo);
        let mut bracket = None;
        for k in 1..=FISHEYE_SCAN_STEPS {
            let hi = if k == FISHEYE_SCAN_STEPS { big_r } else { k as f64 * h };
            let g_hi = g(hi);
            if g_hi == 0.0 {
                return Ok(hi);
            }
            if g_lo.signum() != g_hi.signum() {
                bracket = Some((lo, hi, g_lo));
                break;
            }
            lo = hi;
            g_lo = g_hi;
        }
        let (mut a, mut b, g_a) = match bracket {
            Some(br) => br,
            None => {
                // accept a root sitting on the boundary up to rounding
                let scale = (self.poly[0].abs() * r).max(z.abs() * big_r);
                if g(big_r).abs() <= 1e-12 * scale {
                    return Ok(big_r);
                }
                return Err(Error::OutsideFieldOfView);
            }
        };
        let sign_a = g_a.signum();
        let mut rho = 0.5 * (a + b);
        for _ in 0..100 {
            let val = g(rho);
            if val == 0.0 {
                break;
            }
            if val.signum() == sign_a {
                a = rho;
            } else {
                b = rho;
            }
            let slope = self.radial_derivative(rho) * r - z;
            let newton = rho - val / slope;
            let next = if slope != 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if (next - rho).abs() <= 1e-15 * big_r.max(1.0) {
                rho = next;
                break;
            }
            rho = next;
        }
        Ok(rho)
    }

    /// Projects a camera-frame point (mm) to pixels.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project_with_jacobian(point).map(|(p, _)| p)
    }

    /// Pixel and `∂pixel/∂point` by implicit differentiation of the radial
    /// equation written as `f(q r) − z q = 0` with `q = rho / r`.
    pub fn project_with_jacobian(
        &self,
        point: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, Matrix2x3<f64>)> {
        let norm = point.norm();
        if norm < 1e-6 {
            return Err(Error::OutsideFieldOfView);
        }
        let r = point.x.hypot(point.y);
        let z = point.z;
        let q = if r <= 1e-12 * norm {
            if z.signum() != self.axis_sign() {
                return Err(Error::OutsideFieldOfView);
            }
            self.poly[0] / z
        } else {
            self.solve_rho(point)? / r
        };
        let rho = q * r;
        let h_q = self.radial_derivative(rho) * r - z;
        if h_q.abs() < 1e-300 {
            return Err(Error::OutsideFieldOfView);
        }
        let c = -q * q * self.radial_derivative_over_rho(rho) / h_q;
        // ∂q/∂x = c x, ∂q/∂y = c y, ∂q/∂z = q / h_q
        let dq = Vector3::new(c * point.x, c * point.y, q / h_q);
        let sensor = Vector2::new(q * point.x, q * point.y);
        let mut d_sensor = Matrix2x3::zeros();
        d_sensor[(0, 0)] = q + point.x * dq.x;
        d_sensor[(0, 1)] = point.x * dq.y;
        d_sensor[(0, 2)] = point.x * dq.z;
        d_sensor[(1, 0)] = point.y * dq.x;
        d_sensor[(1, 1)] = q + point.y * dq.y;
        d_sensor[(1, 2)] = point.y * dq.z;
        let pixel = self.affine * sensor + self.center;
        Ok((pixel, self.affine * d_sensor))
    }

    /// Unit ray through `pixel`.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Result<Vector3<f64>> {
        let inv = self
            .affine
            .try_inverse()
            .ok_or(Error::InvalidParameter("singular affine".into()))?;
        let s = inv * (pixel - self.center);
        let rho = s.norm();
        if rho > self.image_radius * (1.0 + 1e-9) {
            return Err(Error::OutsideFieldOfView);
        }
        let ray = Vector3::new(s.x, s.y, self.radial(rho));
        Ok(ray / ray.norm())
    }

    /// 3D point at Euclidean `distance` along the ray through `pixel`.
    pub fn unproject(&self, pixel: &Vector2<f64>, distance: f64) -> Result<Vector3<f64>> {
        if !(distance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "unproject distance must be positive, got {distance}"
            )));
        }
        Ok(self.ray(pixel)? * distance)
    }
}

pub fn project_pinhole(
    model: &PinholeModel,
    cam: &RigidTransform,
    point: &Vector3<f64>,
) -> Result<Vector2<f64>> {
    model.project(cam, point)
}

pub fn project_fisheye(model: &FisheyeModel, point: &Vector3<f64>) -> Result<Vector2<f64>> {
    model.project(point)
}

pub fn unproject_fisheye(
    model: &FisheyeModel,
    pixel: &Vector2<f64>,
    distance: f64,
) -> Result<Vector3<f64>> {
    model.unproject(pixel, distance)
}

/// Both intrinsic calibrations of a capture rig.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub pinhole: PinholeModel,
    pub fisheye: FisheyeModel,
}

#[derive(Serialize, Deserialize)]
struct FisheyeFile {
    poly: [f64; 4],
    center: [f64; 2],
    affine: [[f64; 2]; 2],
    image_radius: f64,
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    pinhole: PinholeModel,
    fisheye: FisheyeFile,
}

impl Calibration {
    pub fn default_synthetic() -> Self {
        Self {
            pinhole: PinholeModel {
                fx: 1000.0,
                fy: 1000.0,
                cx: 640.0,
                cy: 480.0,
            },
            fisheye: FisheyeModel::default_synthetic(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CalibrationFile = serde_json::from_str(text)
            .map_err(|e| Error::Schema(format!("calibration: {e}")))?;
        let f = file.fisheye;
        if f.affine[1][1] != 1.0 {
            return Err(Error::Schema(
                "calibration: fisheye affine[1][1] must be 1".into(),
            ));
        }
        file.pinhole
            .validate()
            .map_err(|e| Error::Schema(format!("calibration: {e}")))?;
        let fisheye = FisheyeModel::new(
            f.poly,
            Vector2::new(f.center[0], f.center[1]),
            Matrix2::new(f.affine[0][0], f.affine[0][1], f.affine[1][0], f.affine[1][1]),
            f.image_radius,
        )
        .map_err(|e| Error::Schema(format!("calibration: {e}")))?;
        Ok(Self {
            pinhole: file.pinhole,
            fisheye,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let f = &self.fisheye;
        let file = CalibrationFile {
            pinhole: self.pinhole,
            fisheye: FisheyeFile {
                poly: f.poly,
                center: [f.center.x, f.center.y],
                affine: [
                    [f.affine[(0, 0)], f.affine[(0, 1)]],
                    [f.affine[(1, 0)], f.affine[(1, 1)]],
                ],
                image_radius: f.image_radius,
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let w = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let t = Vector3::new(
            rng.random_range(-500.0..500.0),
            rng.random_range(-500.0..500.0),
            rng.random_range(-500.0..500.0),
        );
        RigidTransform::from_axis_angle(w, t)
    }

    // Dense 4×4 product written out as scalar loops.
    fn matmul4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    fn to_rows(t: &RigidTransform) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = t.rotation[(i, j)];
            }
            m[i][3] = t.translation[i];
        }
        m[3][3] = 1.0;
        m
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_transform(&mut rng);
        let left = compose(&RigidTransform::identity(), &t);
        assert!((left.rotation - t.rotation).norm() < 1e-15);
        let id = compose(&t, &invert(&t));
        assert!((id.rotation - Matrix3::identity()).norm() < 1e-9);
        assert!(id.translation.norm() < 1e-9);
    }

    #[test]
    fn compose_matches_dense_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let expect = matmul4(&to_rows(&a), &to_rows(&b));
            let got = to_rows(&compose(&a, &b));
            for i in 0..4 {
                for j in 0..4 {
                    assert!((expect[i][j] - got[i][j]).abs() < 1e-9);
                }
            }
            let p = Vector3::new(1.0, -2.0, 3.0);
            assert!((compose(&a, &b).apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-9);
        }
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (a, b, c) = (
                random_transform(&mut rng),
                random_transform(&mut rng),
                random_transform(&mut rng),
            );
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            assert!((l.to_homogeneous() - r.to_homogeneous()).norm() < 1e-9);
        }
    }

    #[test]
    fn homogeneous_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_transform(&mut rng);
        assert_eq!(RigidTransform::from_homogeneous(&t.to_homogeneous()), t);
    }

    #[test]
    fn rodrigues_is_orthonormal_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let angle = rng.random_range(1e-3..std::f64::consts::PI - 1e-3);
            let p = RotationParam::new(axis * angle);
            let r = p.to_matrix();
            assert!(orthonormality_error(&r) < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            let back = RotationParam::from_matrix(&r);
            assert!((back.axis_angle - p.axis_angle).norm() < 1e-9, "{angle}");
        }
    }

    #[test]
    fn rotation_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let w = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let d = RotationParam::new(w).matrix_derivatives();
            for k in 0..3 {
                let h = 1e-6;
                let mut wp = w;
                wp[k] += h;
                let mut wm = w;
                wm[k] -= h;
                let fd = (RotationParam::new(wp).to_matrix() - RotationParam::new(wm).to_matrix())
                    / (2.0 * h);
                assert!((fd - d[k]).norm() < 1e-8);
            }
        }
        let d0 = RotationParam::new(Vector3::zeros()).matrix_derivatives();
        assert!((d0[2] - skew(&Vector3::z())).norm() < 1e-15);
    }

    #[test]
    fn nearest_rotation_fixes_scaled_matrix() {
        let r = RotationParam::new(Vector3::new(0.3, -0.2, 0.9)).to_matrix();
        let n = nearest_rotation(&(r * 2.5));
        assert!((n - r).norm() < 1e-12);
    }

    #[test]
    fn pinhole_examples() {
        let m = PinholeModel::new(500.0, 500.0, 320.0, 240.0).unwrap();
        let id = RigidTransform::identity();
        let p = m.project(&id, &Vector3::new(0.0, 0.0, 1000.0)).unwrap();
        assert_eq!(p, Vector2::new(320.0, 240.0));
        let p = m.project(&id, &Vector3::new(100.0, 0.0, 2000.0)).unwrap();
        assert_eq!(p, Vector2::new(345.0, 240.0));
        assert!(matches!(
            m.project(&id, &Vector3::new(0.0, 0.0, 0.0)),
            Err(Error::BehindCamera { .. })
        ));
        assert!(matches!(
            m.project(&id, &Vector3::new(1.0, 0.0, -10.0)),
            Err(Error::BehindCamera { .. })
        ));
        assert!(PinholeModel::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn pinhole_scale_invariance() {
        let m = PinholeModel::new(800.0, 760.0, 300.0, 200.0).unwrap();
        let id = RigidTransform::identity();
        let p = Vector3::new(120.0, -40.0, 900.0);
        let a = m.project(&id, &p).unwrap();
        for s in [0.1, 2.0, 17.0] {
            assert!((m.project(&id, &(p * s)).unwrap() - a).norm() < 1e-9);
        }
    }

    #[test]
    fn fisheye_optical_axis_hits_center() {
        let m = FisheyeModel::default_synthetic();
        let p = m.project(&Vector3::new(0.0, 0.0, 700.0)).unwrap();
        assert_eq!(p, m.center);
        let back = m.unproject(&m.center, 700.0).unwrap();
        assert!((back - Vector3::new(0.0, 0.0, 700.0)).norm() < 1e-12);
        assert!(matches!(
            m.project(&Vector3::new(0.0, 0.0, -700.0)),
            Err(Error::OutsideFieldOfView)
        ));
    }

    #[test]
    fn fisheye_negative_a0_convention() {
        let mut m = FisheyeModel::default_synthetic();
        m.poly = m.poly.map(|c| -c);
        let back = m.unproject(&m.center, 50.0).unwrap();
        assert!((back - Vector3::new(0.0, 0.0, -50.0)).norm() < 1e-12);
        let p = Vector3::new(120.0, -300.0, -900.0);
        let px = m.project(&p).unwrap();
        let q = m.unproject(&px, p.norm()).unwrap();
        assert!((q - p).norm() < 1e-6 * p.norm());
    }

    #[test]
    fn fisheye_rejects_origin_and_backward_rays() {
        let m = FisheyeModel::default_synthetic();
        assert!(m.project(&Vector3::new(0.0, 0.0, 1e-9)).is_err());
        // well past the half field of view
        assert!(m.project(&Vector3::new(100.0, 0.0, -1000.0)).is_err());
        assert!(m.unproject(&Vector2::new(512.0 + 501.0, 512.0), 1.0).is_err());
        assert!(m.unproject(&m.center, 0.0).is_err());
    }

    #[test]
    fn fisheye_jacobian_matches_finite_differences() {
        let mut m = FisheyeModel::default_synthetic();
        m.affine = Matrix2::new(1.02, 0.01, -0.015, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-1500.0..1500.0),
                rng.random_range(-1500.0..1500.0),
                rng.random_range(50.0..2000.0),
            );
            let (_, j) = m.project_with_jacobian(&p).unwrap();
            for k in 0..3 {
                let h = 1e-3;
                let mut pp = p;
                pp[k] += h;
                let mut pm = p;
                pm[k] -= h;
                let fd = (m.project(&pp).unwrap() - m.project(&pm).unwrap()) / (2.0 * h);
                assert!((fd - j.column(k)).norm() < 1e-6 * j.norm().max(1e-3));
            }
        }
        // on the optical axis
        let (_, j) = m.project_with_jacobian(&Vector3::new(0.0, 0.0, 800.0)).unwrap();
        let h = 1e-3;
        let fd = (m.project(&Vector3::new(h, 0.0, 800.0)).unwrap()
            - m.project(&Vector3::new(-h, 0.0, 800.0)).unwrap())
            / (2.0 * h);
        assert!((fd - j.column(0)).norm() < 1e-6);
    }

    #[test]
    fn calibration_json_round_trip() {
        let c = Calibration::default_synthetic();
        let back = Calibration::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(matches!(
            Calibration::from_json("{\"pinhole\": {}}"),
            Err(Error::Schema(_))
        ));
    }
}
