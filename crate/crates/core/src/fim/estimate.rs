use serde::{Deserialize, Serialize};

use super::scores::ScoreBatch;
use crate::error::{Error, Result};
use crate::ndmath::{clamp_psd, matmul, matmul_nt, matmul_tn, sym_eigen, LayerGrads, Matrix};

/// Largest parameter count accepted by the dense estimator.
pub const DENSE_PARAM_LIMIT: usize = 2000;

/// Relative tolerance for eigenvalues that should be nonnegative.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[serde(alias = "diag")]
    Diagonal,
    Kfac,
    Ekfac,
}

impl Estimator {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "diag" | "diagonal" => Some(Self::Diagonal),
            "kfac" => Some(Self::Kfac),
            "ekfac" => Some(Self::Ekfac),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Diagonal => "diag",
            Self::Kfac => "kfac",
            Self::Ekfac => "ekfac",
        }
    }
}

/// Kronecker factors of one layer. With row-major parameter order the
/// layer block is `G ⊗ A`.
#[derive(Debug, Clone, PartialEq)]
pub struct KfacFactors {
    /// `(in + 1) × (in + 1)`, `mean ããᵀ` over bias-augmented inputs.
    pub a: Matrix,
    /// `out × out`, `mean δδᵀ` over pre-activation gradients.
    pub g: Matrix,
}

impl KfacFactors {
    pub fn from_layer(layer: &LayerGrads) -> Result<Self> {
        let n = layer.sample_count();
        if n == 0 || layer.deltas.rows() != n {
            return Err(Error::shape("kfac", layer.deltas.shape(), layer.inputs.shape()));
        }
        let inv = 1.0 / n as f64;
        Ok(Self {
            a: symmetrize(matmul_tn(&layer.inputs, &layer.inputs)?.scale(inv)),
            g: symmetrize(matmul_tn(&layer.deltas, &layer.deltas)?.scale(inv)),
        })
    }

    /// Materialized layer block in row-major parameter order.
    pub fn block(&self) -> Matrix {
        self.g.kron(&self.a)
    }

    pub fn trace(&self) -> f64 {
        self.a.trace() * self.g.trace()
    }
}

/// Eigenvalue-corrected factors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfacLayer {
    /// Orthonormal eigenvectors of `A`, as columns.
    pub u_a: Matrix,
    /// Orthonormal eigenvectors of `G`, as columns.
    pub u_g: Matrix,
    /// `out × (in + 1)`, `Λ_jk = mean (U_Gᵀ Ĝ U_A)²_jk`.
    pub lambda: Matrix,
}

/// A Fisher approximation in one of four representations.
#[derive(Debug, Clone, PartialEq)]
pub enum FimEstimate {
    Dense { matrix: Matrix, layer_sizes: Vec<usize> },
    Diagonal { values: Vec<f64>, layer_sizes: Vec<usize> },
    Kfac(Vec<KfacFactors>),
    Ekfac(Vec<EkfacLayer>),
}

impl FimEstimate {
    pub fn layer_sizes(&self) -> Vec<usize> {
        match self {
            Self::Dense { layer_sizes, .. } | Self::Diagonal { layer_sizes, .. } => {
                layer_sizes.clone()
            }
            Self::Kfac(f) => f.iter().map(|l| l.a.rows() * l.g.rows()).collect(),
            Self::Ekfac(f) => f.iter().map(|l| l.lambda.rows() * l.lambda.cols()).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes().iter().sum()
    }

    pub fn trace(&self) -> f64 {
        fim_trace(self)
    }

    /// Trace of each layer's diagonal block.
    pub fn layer_traces(&self) -> Vec<f64> {
        match self {
            Self::Dense { matrix, layer_sizes } => {
                let mut off = 0;
                layer_sizes
                    .iter()
                    .map(|&s| {
                        let t = (off..off + s).map(|k| matrix[(k, k)]).sum();
                        off += s;
                        t
                    })
                    .collect()
            }
            Self::Diagonal { values, layer_sizes } => {
                let mut off = 0;
                layer_sizes
                    .iter()
                    .map(|&s| {
                        let t = values[off..off + s].iter().sum();
                        off += s;
                        t
                    })
                    .collect()
            }
            Self::Kfac(f) => f.iter().map(KfacFactors::trace).collect(),
            Self::Ekfac(f) => f.iter().map(|l| l.lambda.data().iter().sum()).collect(),
        }
    }
}

fn symmetrize(m: Matrix) -> Matrix {
    let t = m.transpose();
    Matrix::from_fn(m.rows(), m.cols(), |i, j| 0.5 * (m[(i, j)] + t[(i, j)]))
}

/// Mean of per-sample score outer products.
pub fn empirical_fim_full(scores: &ScoreBatch) -> Result<FimEstimate> {
    let p = scores.param_count();
    if p > DENSE_PARAM_LIMIT {
        return Err(Error::TooManyParameters {
            count: p,
            limit: DENSE_PARAM_LIMIT,
        });
    }
    let s = scores.to_matrix();
    let matrix = matmul_tn(&s, &s)?.scale(1.0 / scores.sample_count() as f64);
    Ok(FimEstimate::Dense {
        matrix: symmetrize(matrix),
        layer_sizes: scores.layer_sizes(),
    })
}

/// Per-parameter mean of squared scores.
pub fn empirical_fim_diag(scores: &ScoreBatch) -> FimEstimate {
    let inv = 1.0 / scores.sample_count() as f64;
    let mut values = Vec::with_capacity(scores.param_count());
    for l in scores.layers() {
        let d2 = l.deltas.map(|v| v * v);
        let a2 = l.inputs.map(|v| v * v);
        let m = matmul_tn(&d2, &a2).expect("factor row counts agree");
        values.extend(m.data().iter().map(|v| v * inv));
    }
    FimEstimate::Diagonal {
        values,
        layer_sizes: scores.layer_sizes(),
    }
}

pub fn kfac_estimate(scores: &ScoreBatch) -> Result<FimEstimate> {
    Ok(FimEstimate::Kfac(
        scores
            .layers()
            .iter()
            .map(KfacFactors::from_layer)
            .collect::<Result<_>>()?,
    ))
}

/// Re-estimates the Fisher eigenvalues in the Kronecker eigenbasis of `kfac`.
/// `scores` must be the batch the factors were computed from.
pub fn ekfac_estimate(kfac: &FimEstimate, scores: &ScoreBatch) -> Result<FimEstimate> {
    let FimEstimate::Kfac(factors) = kfac else {
        return Err(Error::InvalidConfig("ekfac needs a kfac estimate".into()));
    };
    if factors.len() != scores.layers().len() {
        return Err(Error::shape(
            "ekfac layers",
            (factors.len(), 1),
            (scores.layers().len(), 1),
        ));
    }
    let inv = 1.0 / scores.sample_count() as f64;
    let mut layers = Vec::with_capacity(factors.len());
    for (f, l) in factors.iter().zip(scores.layers()) {
        if (f.g.rows(), f.a.rows()) != l.param_shape() {
            return Err(Error::shape("ekfac layer", (f.g.rows(), f.a.rows()), l.param_shape()));
        }
        let u_a = sym_eigen(&f.a)?.vectors;
        let u_g = sym_eigen(&f.g)?.vectors;
        // (U_Gᵀ δ ãᵀ U_A)_jk = (U_Gᵀδ)_j (U_Aᵀã)_k
        let rd = matmul(&l.deltas, &u_g)?.map(|v| v * v);
        let ra = matmul(&l.inputs, &u_a)?.map(|v| v * v);
        let lambda = matmul_tn(&rd, &ra)?.scale(inv);
        layers.push(EkfacLayer { u_a, u_g, lambda });
    }
    Ok(FimEstimate::Ekfac(layers))
}

/// Builds the requested estimate from one score batch.
pub fn estimate(scores: &ScoreBatch, estimator: Estimator) -> Result<FimEstimate> {
    match estimator {
        Estimator::Diagonal => Ok(empirical_fim_diag(scores)),
        Estimator::Kfac => kfac_estimate(scores),
        Estimator::Ekfac => ekfac_estimate(&kfac_estimate(scores)?, scores),
    }
}

pub fn fim_trace(est: &FimEstimate) -> f64 {
    est.layer_traces().iter().sum()
}

fn quarter_root_scale(value: f64, damping: f64) -> Result<f64> {
    let s = (value + damping).powf(-0.25);
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::NonFinite(format!(
            "inverse quarter root of eigenvalue {value} with damping {damping}"
        )))
    }
}

/// `U_G [(U_Gᵀ E U_A) ⊘ (Λ + d)^{1/4}] U_Aᵀ` for layer noise `E`.
fn rotate_scale(
    noise: &Matrix,
    u_g: &Matrix,
    u_a: &Matrix,
    mut scale: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<Matrix> {
    let mut r = matmul(&matmul_tn(u_g, noise)?, u_a)?;
    for j in 0..r.rows() {
        for k in 0..r.cols() {
            r[(j, k)] *= scale(j, k)?;
        }
    }
    matmul_nt(&matmul(u_g, &r)?, u_a)
}

/// Applies `(F + damping)^{-1/4}` to a parameter-shaped `noise` vector.
pub fn inv_quarter_root_apply(est: &FimEstimate, noise: &[f64], damping: f64) -> Result<Vec<f64>> {
    if !(damping >= 0.0 && damping.is_finite()) {
        return Err(Error::InvalidConfig(format!("damping {damping} must be nonnegative")));
    }
    let p = est.param_count();
    if noise.len() != p {
        return Err(Error::shape("inv_quarter_root_apply", (noise.len(), 1), (p, 1)));
    }
    match est {
        FimEstimate::Diagonal { values, .. } => values
            .iter()
            .zip(noise)
            .map(|(&f, &e)| Ok(e * quarter_root_scale(f.max(0.0), damping)?))
            .collect(),
        FimEstimate::Dense { matrix, .. } => {
            let mut eig = sym_eigen(matrix)?;
            clamp_psd(&mut eig.values, PSD_TOLERANCE)?;
            let eps = Matrix::from_vec(p, 1, noise.to_vec())?;
            let mut r = matmul_tn(&eig.vectors, &eps)?;
            for (k, &s) in eig.values.iter().enumerate() {
                r[(k, 0)] *= quarter_root_scale(s, damping)?;
            }
            Ok(matmul(&eig.vectors, &r)?.into_vec())
        }
        FimEstimate::Kfac(factors) => {
            let mut out = Vec::with_capacity(p);
            let mut off = 0;
            for f in factors {
                let (rows, cols) = (f.g.rows(), f.a.rows());
                let e = Matrix::from_vec(rows, cols, noise[off..off + rows * cols].to_vec())?;
                off += rows * cols;
                let mut ea = sym_eigen(&f.a)?;
                let mut eg = sym_eigen(&f.g)?;
                clamp_psd(&mut ea.values, PSD_TOLERANCE)?;
                clamp_psd(&mut eg.values, PSD_TOLERANCE)?;
                let shaped = rotate_scale(&e, &eg.vectors, &ea.vectors, |j, k| {
                    quarter_root_scale(eg.values[j] * ea.values[k], damping)
                })?;
                out.extend(shaped.into_vec());
            }
            Ok(out)
        }
        FimEstimate::Ekfac(layers) => {
            let mut out = Vec::with_capacity(p);
            let mut off = 0;
            for l in layers {
                let (rows, cols) = l.lambda.shape();
                let e = Matrix::from_vec(rows, cols, noise[off..off + rows * cols].to_vec())?;
                off += rows * cols;
                let shaped = rotate_scale(&e, &l.u_g, &l.u_a, |j, k| {
                    quarter_root_scale(l.lambda[(j, k)], damping)
                })?;
                out.extend(shaped.into_vec());
            }
            Ok(out)
        }
    }
}
