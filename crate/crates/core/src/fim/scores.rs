use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ndmath::{LayerGrads, Matrix, Mlp, PerSampleGrads};
use crate::nets::{concat_columns, GaussianPolicy, TwinCritic};

/// Per-sample log-likelihood gradients, one factored block per layer.
///
/// Layers may come from several networks; parameter order is the
/// concatenation of the layer matrices, each row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    layers: Vec<LayerGrads>,
}

impl ScoreBatch {
    /// Invariants: at least one layer and one sample, equal sample counts,
    /// all entries finite.
    pub fn new(layers: Vec<LayerGrads>) -> Result<Self> {
        let n = layers
            .first()
            .map(LayerGrads::sample_count)
            .ok_or_else(|| Error::InvalidConfig("score batch without layers".into()))?;
        if n == 0 {
            return Err(Error::EmptyBuffer);
        }
        for l in &layers {
            if l.sample_count() != n || l.deltas.rows() != n {
                return Err(Error::shape("score batch", (l.sample_count(), 0), (n, 0)));
            }
            if !l.inputs.is_finite() || !l.deltas.is_finite() {
                return Err(Error::NonFinite("score".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn from_grads(grads: PerSampleGrads) -> Result<Self> {
        Self::new(grads.layers)
    }

    /// Joins batches drawn on the same samples (e.g. both critics).
    pub fn concat(parts: Vec<ScoreBatch>) -> Result<Self> {
        Self::new(parts.into_iter().flat_map(|p| p.layers).collect())
    }

    pub fn layers(&self) -> &[LayerGrads] {
        &self.layers
    }

    pub fn sample_count(&self) -> usize {
        self.layers[0].sample_count()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerGrads::param_count).sum()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(LayerGrads::param_count).collect()
    }

    pub fn sample_flat(&self, i: usize) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.sample_grad(i).into_vec())
            .collect()
    }

    /// `N × P` matrix whose rows are the flattened sample scores.
    pub fn to_matrix(&self) -> Matrix {
        let n = self.sample_count();
        let p = self.param_count();
        let mut out = Matrix::zeros(n, p);
        for i in 0..n {
            let row = out.row_mut(i);
            let mut off = 0;
            for l in &self.layers {
                let (d, a) = (l.deltas.row(i), l.inputs.row(i));
                for &dj in d {
                    for (o, &ak) in row[off..off + a.len()].iter_mut().zip(a) {
                        *o = dj * ak;
                    }
                    off += a.len();
                }
            }
        }
        out
    }
}

/// Monte-Carlo scores of `log π(a|s)` at actions freshly drawn from the
/// current policy. Only the Gaussian part depends on the weights, so with
/// `u = μ + σz` the output-layer gradient is `z/σ` for the mean and `z² − 1`
/// for the log-std (zero where the log-std is clamped).
pub fn actor_scores<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    obs: &Matrix,
    rng: &mut R,
) -> Result<ScoreBatch> {
    if obs.rows() == 0 {
        return Err(Error::EmptyBuffer);
    }
    let heads = policy.heads(obs)?;
    let (n, d) = heads.mean.shape();
    let mut out = Matrix::zeros(n, 2 * d);
    for i in 0..n {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            let sigma = heads.log_std[(i, j)].exp();
            out[(i, j)] = z / sigma;
            out[(i, d + j)] = (z * z - 1.0) * heads.log_std_live[(i, j)];
        }
    }
    ScoreBatch::from_grads(policy.net.backward_per_sample(&heads.pass, &out)?)
}

/// Scores under a unit-variance Gaussian predictive model `y ~ N(Q(x), 1)`:
/// `(y − Q)∇Q` with the residual drawn as a standard normal. One residual is
/// drawn per sample and network.
pub fn critic_scores_from_jacobians<R: Rng + ?Sized>(
    jacobians: &[PerSampleGrads],
    rng: &mut R,
) -> Result<ScoreBatch> {
    let mut parts = Vec::with_capacity(jacobians.len());
    for jac in jacobians {
        let residuals: Vec<f64> = (0..jac.sample_count())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mut scaled = jac.clone();
        scaled.scale_samples(&residuals);
        parts.push(ScoreBatch::from_grads(scaled)?);
    }
    ScoreBatch::concat(parts)
}

/// Jacobians `∂Q(sᵢ, aᵢ)/∂w` of each network in order.
pub fn q_jacobians(nets: &[&Mlp], obs: &Matrix, actions: &Matrix) -> Result<Vec<PerSampleGrads>> {
    if obs.rows() == 0 {
        return Err(Error::EmptyBuffer);
    }
    let x = concat_columns(obs, actions)?;
    let ones = Matrix::from_fn(x.rows(), 1, |_, _| 1.0);
    nets.iter()
        .map(|net| net.backward_per_sample(&net.forward(&x)?, &ones))
        .collect()
}

/// Scores of both critics, layers of `q1` followed by those of `q2`.
pub fn critic_scores<R: Rng + ?Sized>(
    critic: &TwinCritic,
    obs: &Matrix,
    actions: &Matrix,
    rng: &mut R,
) -> Result<ScoreBatch> {
    let jac = q_jacobians(&critic.nets(), obs, actions)?;
    critic_scores_from_jacobians(&jac, rng)
}
