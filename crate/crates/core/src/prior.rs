//! Motion priors: a decoder from a latent vector to a window of poses.
//!
//! Two kinds ship: the identity prior (the latent *is* the flattened pose
//! window) and a linear subspace fitted by PCA over training windows.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{JointSet15, PoseSequence, NUM_JOINTS};

/// Coordinates per frame (15 joints × xyz).
pub const FRAME_DIM: usize = NUM_JOINTS * 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Identity,
    LinearSubspace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionPrior {
    kind: PriorKind,
    window: usize,
    latent_dim: usize,
    mean: DVector<f64>,
    /// `latent_dim × (window · 45)`, orthonormal rows. Empty for identity.
    basis: DMatrix<f64>,
}

impl MotionPrior {
    pub fn identity(window: usize) -> Self {
        let dim = window * FRAME_DIM;
        Self {
            kind: PriorKind::Identity,
            window,
            latent_dim: dim,
            mean: DVector::zeros(dim),
            basis: DMatrix::zeros(0, 0),
        }
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    fn data_dim(&self) -> usize {
        self.window * FRAME_DIM
    }

    /// Flattened poses for a latent vector.
    pub fn decode_flat(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        Ok(match self.kind {
            PriorKind::Identity => z.to_vec(),
            PriorKind::LinearSubspace => {
                let z = DVector::from_column_slice(z);
                let x = &self.mean + self.basis.tr_mul(&z);
                x.as_slice().to_vec()
            }
        })
    }

    pub fn encode_flat(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.data_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data_dim(),
                got: x.len(),
            });
        }
        Ok(match self.kind {
            PriorKind::Identity => x.to_vec(),
            PriorKind::LinearSubspace => {
                let centered = DVector::from_column_slice(x) - &self.mean;
                (&self.basis * centered).as_slice().to_vec()
            }
        })
    }

    /// Chains a gradient w.r.t. the flattened poses back to the latent.
    pub fn pullback(&self, grad_flat: &[f64]) -> Vec<f64> {
        match self.kind {
            PriorKind::Identity => grad_flat.to_vec(),
            PriorKind::LinearSubspace => {
                (&self.basis * DVector::from_column_slice(grad_flat))
                    .as_slice()
                    .to_vec()
            }
        }
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<JointSet15>> {
        Ok(unflatten(&self.decode_flat(z)?))
    }

    pub fn encode(&self, poses: &[JointSet15]) -> Result<Vec<f64>> {
        if poses.len() != self.window {
            return Err(Error::DimensionMismatch {
                expected: self.window,
                got: poses.len(),
            });
        }
        self.encode_flat(&flatten(poses))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PriorFile {
            kind: self.kind,
            b: self.window,
            k: self.latent_dim,
            mean: match self.kind {
                PriorKind::Identity => Vec::new(),
                PriorKind::LinearSubspace => self.mean.as_slice().to_vec(),
            },
            basis: match self.kind {
                PriorKind::Identity => Vec::new(),
                PriorKind::LinearSubspace => self.basis.transpose().as_slice().to_vec(),
            },
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: PriorFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("prior: {e}")))?;
        if f.b == 0 {
            return Err(Error::Schema("prior: B must be positive".into()));
        }
        match f.kind {
            PriorKind::Identity => Ok(Self::identity(f.b)),
            PriorKind::LinearSubspace => {
                let dim = f.b * FRAME_DIM;
                if f.mean.len() != dim || f.basis.len() != f.k * dim || f.k == 0 {
                    return Err(Error::Schema(format!(
                        "prior: expected mean of {dim} and basis of {}x{dim}",
                        f.k
                    )));
                }
                Ok(Self {
                    kind: PriorKind::LinearSubspace,
                    window: f.b,
                    latent_dim: f.k,
                    mean: DVector::from_vec(f.mean),
                    basis: DMatrix::from_row_slice(f.k, dim, &f.basis),
                })
            }
        }
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
struct PriorFile {
    kind: PriorKind,
    #[serde(rename = "B")]
    b: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(default)]
    mean: Vec<f64>,
    /// Row-major `K × (B·45)`.
    #[serde(default)]
    basis: Vec<f64>,
}

pub fn flatten(poses: &[JointSet15]) -> Vec<f64> {
    poses.iter().flat_map(|p| p.flat()).collect()
}

pub fn unflatten(x: &[f64]) -> Vec<JointSet15> {
    x.chunks_exact(FRAME_DIM)
        .map(|c| {
            let mut set = JointSet15::default();
            for (j, p) in set.joints.iter_mut().enumerate() {
                p.copy_from_slice(&c[3 * j..3 * j + 3]);
            }
            set
        })
        .collect()
}

/// PCA over training windows: mean plus the top `latent_dim` principal
/// directions of the centered data.
pub fn fit_linear_subspace(motions: &[PoseSequence], latent_dim: usize) -> Result<MotionPrior> {
    if motions.len() < latent_dim + 1 {
        return Err(Error::InsufficientData {
            needed: latent_dim + 1,
            got: motions.len(),
        });
    }
    let window = motions[0].len();
    if window == 0 || motions.iter().any(|m| m.len() != window) {
        return Err(Error::ShapeMismatch(
            "training windows must share one non-zero length".into(),
        ));
    }
    let dim = window * FRAME_DIM;
    if latent_dim == 0 || latent_dim > dim {
        return Err(Error::InvalidParameter(format!(
            "latent_dim {latent_dim} outside 1..={dim}"
        )));
    }
    let n = motions.len();
    let mut data = DMatrix::<f64>::zeros(dim, n);
    for (c, m) in motions.iter().enumerate() {
        data.set_column(c, &DVector::from_vec(flatten(&m.frames)));
    }
    let mean = data.column_mean();
    for mut col in data.column_iter_mut() {
        col -= &mean;
    }
    let svd = data.svd(true, false);
    let u = svd.u.expect("svd u");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut cols = DMatrix::<f64>::zeros(dim, latent_dim);
    let available = order.len().min(latent_dim);
    for (k, &src) in order.iter().take(available).enumerate() {
        cols.set_column(k, &u.column(src));
    }
    // pad with arbitrary orthonormal directions when the data has lower rank
    if available < latent_dim {
        let mut e = 0;
        for k in available..latent_dim {
            loop {
                let mut v = DVector::<f64>::zeros(dim);
                v[e % dim] = 1.0;
                e += 1;
                for j in 0..k {
                    let proj = cols.column(j).dot(&v);
                    v -= cols.column(j) * proj;
                }
                let nv = v.norm();
                if nv > 1e-6 {
                    cols.set_column(k, &(v / nv));
                    break;
                }
            }
        }
    }
    // re-orthonormalize against round-off
    let q = cols.qr().q();
    let basis = q.columns(0, latent_dim).transpose();
    Ok(MotionPrior {
        kind: PriorKind::LinearSubspace,
        window,
        latent_dim,
        mean,
        basis,
    })
}
