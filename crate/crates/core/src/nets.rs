//! Actor and critic networks for soft actor-critic.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ndmath::{Activation, Dense, ForwardPass, Matrix, Mlp};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Keeps `log(1 - tanh(u)² + ε)` finite when `|tanh(u)| → 1`.
pub const SQUASH_EPS: f64 = 1e-6;

/// Network with `dims[0]` inputs, hidden layers using `hidden_activation`,
/// and a linear output layer. Weights ~ U(±1/√fan_in), biases zero.
pub fn init_mlp<R: Rng + ?Sized>(
    dims: &[usize],
    hidden_activation: Activation,
    rng: &mut R,
) -> Result<Mlp> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "mlp needs at least input and output widths, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "zero-width layer in {dims:?}"
        )));
    }
    let n = dims.len() - 1;
    let mut layers = Vec::with_capacity(n);
    for l in 0..n {
        let (fan_in, out) = (dims[l], dims[l + 1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let params = Matrix::from_fn(out, fan_in + 1, |_, k| {
            if k == fan_in {
                0.0
            } else {
                rng.random_range(-bound..=bound)
            }
        });
        let act = if l + 1 == n {
            Activation::Identity
        } else {
            hidden_activation
        };
        layers.push(Dense::new(params, act)?);
    }
    Mlp::new(layers)
}

/// Elementwise `target ← τ·online + (1 − τ)·target`.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("polyak tau {tau} outside [0, 1]")));
    }
    if target.dims() != online.dims() {
        return Err(Error::shape(
            "polyak_update",
            (target.param_count(), 1),
            (online.param_count(), 1),
        ));
    }
    for (t, o) in target.layers_mut().iter_mut().zip(online.layers()) {
        for (tv, ov) in t.params_mut().data_mut().iter_mut().zip(o.params().data()) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

/// Squashed-Gaussian policy. The network's output layer carries both heads:
/// the first `act_dim` outputs are the mean, the rest the raw log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub net: Mlp,
    act_dim: usize,
}

/// Policy head values for a batch.
#[derive(Debug, Clone)]
pub struct PolicyHeads {
    pub pass: ForwardPass,
    pub mean: Matrix,
    /// Clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Matrix,
    /// 1.0 where the raw log-std lies inside the clamp, else 0.0.
    pub log_std_live: Matrix,
}

/// Reparameterized draw `a = tanh(μ + σ·z)` with everything needed to
/// differentiate through it.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub heads: PolicyHeads,
    pub noise: Matrix,
    pub pre_tanh: Matrix,
    pub actions: Matrix,
    pub log_probs: Vec<f64>,
}

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * act_dim);
        Ok(Self {
            net: init_mlp(&dims, activation, rng)?,
            act_dim,
        })
    }

    pub fn from_net(net: Mlp, act_dim: usize) -> Result<Self> {
        if net.output_dim() != 2 * act_dim {
            return Err(Error::shape(
                "policy heads",
                (net.output_dim(), 1),
                (2 * act_dim, 1),
            ));
        }
        Ok(Self { net, act_dim })
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn heads(&self, obs: &Matrix) -> Result<PolicyHeads> {
        let pass = self.net.forward(obs)?;
        let out = pass.output();
        let n = obs.rows();
        let d = self.act_dim;
        let mean = Matrix::from_fn(n, d, |i, j| out[(i, j)]);
        let raw = Matrix::from_fn(n, d, |i, j| out[(i, d + j)]);
        let log_std = raw.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let log_std_live = raw.map(|v| {
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&v) {
                1.0
            } else {
                0.0
            }
        });
        Ok(PolicyHeads {
            pass,
            mean,
            log_std,
            log_std_live,
        })
    }

    /// Draws standard-normal noise and samples actions.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &Matrix, rng: &mut R) -> Result<PolicySample> {
        let noise = Matrix::from_fn(obs.rows(), self.act_dim, |_, _| rng.sample(StandardNormal));
        self.sample_with_noise(obs, noise)
    }

    /// Samples with caller-supplied noise `z` (the reparameterization path).
    pub fn sample_with_noise(&self, obs: &Matrix, noise: Matrix) -> Result<PolicySample> {
        if !obs.is_finite() {
            return Err(Error::NonFinite("policy observation".into()));
        }
        let heads = self.heads(obs)?;
        if noise.shape() != heads.mean.shape() {
            return Err(Error::shape("policy noise", noise.shape(), heads.mean.shape()));
        }
        let (n, d) = heads.mean.shape();
        let pre_tanh =
            Matrix::from_fn(n, d, |i, j| heads.mean[(i, j)] + heads.log_std[(i, j)].exp() * noise[(i, j)]);
        let actions = pre_tanh.map(f64::tanh);
        let log_probs = (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let z = noise[(i, j)];
                        let a = actions[(i, j)];
                        -0.5 * z * z - heads.log_std[(i, j)] - HALF_LOG_TWO_PI
                            - (1.0 - a * a + SQUASH_EPS).ln()
                    })
                    .sum()
            })
            .collect();
        Ok(PolicySample {
            heads,
            noise,
            pre_tanh,
            actions,
            log_probs,
        })
    }

    /// Log-density of given squashed actions (|a| < 1).
    pub fn log_prob(&self, obs: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let heads = self.heads(obs)?;
        if actions.shape() != heads.mean.shape() {
            return Err(Error::shape("policy log_prob", actions.shape(), heads.mean.shape()));
        }
        let (n, d) = actions.shape();
        Ok((0..n)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let a = actions[(i, j)];
                        let u = a.atanh();
                        let ls = heads.log_std[(i, j)];
                        let z = (u - heads.mean[(i, j)]) / ls.exp();
                        -0.5 * z * z - ls - HALF_LOG_TWO_PI - (1.0 - a * a + SQUASH_EPS).ln()
                    })
                    .sum()
            })
            .collect())
    }

    /// Deterministic action `tanh(μ)`.
    pub fn mean_action(&self, obs: &Matrix) -> Result<Matrix> {
        Ok(self.heads(obs)?.mean.map(f64::tanh))
    }
}

/// Twin Q-networks over concatenated `(observation, action)` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritic {
    pub q1: Mlp,
    pub q2: Mlp,
}

pub fn concat_columns(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::shape("concat_columns", a.shape(), b.shape()));
    }
    let (ca, cb) = (a.cols(), b.cols());
    Ok(Matrix::from_fn(a.rows(), ca + cb, |i, j| {
        if j < ca {
            a[(i, j)]
        } else {
            b[(i, j - ca)]
        }
    }))
}

impl TwinCritic {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![obs_dim + act_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let q1 = init_mlp(&dims, activation, rng)?;
        let q2 = init_mlp(&dims, activation, rng)?;
        Ok(Self { q1, q2 })
    }

    pub fn nets(&self) -> [&Mlp; 2] {
        [&self.q1, &self.q2]
    }

    pub fn nets_mut(&mut self) -> [&mut Mlp; 2] {
        [&mut self.q1, &mut self.q2]
    }

    /// Returns `(Q1(s, a), Q2(s, a))` per sample.
    pub fn forward(&self, obs: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = concat_columns(obs, actions)?;
        if x.cols() != self.q1.input_dim() {
            return Err(Error::shape("q_forward", x.shape(), (x.rows(), self.q1.input_dim())));
        }
        let q1 = self.q1.predict(&x)?.into_vec();
        let q2 = self.q2.predict(&x)?.into_vec();
        Ok((q1, q2))
    }

    pub fn polyak_from(&mut self, online: &TwinCritic, tau: f64) -> Result<()> {
        polyak_update(&mut self.q1, &online.q1, tau)?;
        polyak_update(&mut self.q2, &online.q2, tau)
    }
}

/// Log-density of `N(0, 1)` at `x`; used by tests and the score oracles.
pub fn std_normal_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_rejects_zero_width() {
        assert!(init_mlp(&[3, 0, 1], Activation::Tanh, &mut rng(0)).is_err());
        assert!(init_mlp(&[3], Activation::Tanh, &mut rng(0)).is_err());
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let net = init_mlp(&[100, 7, 1], Activation::Tanh, &mut rng(1)).unwrap();
        let l0 = &net.layers()[0];
        for j in 0..7 {
            for k in 0..100 {
                assert!(l0.weight(j, k).abs() <= 0.1);
            }
            assert_eq!(l0.bias(j), 0.0);
        }
        assert_eq!(net.layers()[1].activation(), Activation::Identity);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_mlp(&[4, 8, 2], Activation::Tanh, &mut rng(5)).unwrap();
        let b = init_mlp(&[4, 8, 2], Activation::Tanh, &mut rng(5)).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
    }

    fn policy_with_heads(mean_bias: f64, log_std_bias: f64) -> GaussianPolicy {
        let mut net = init_mlp(&[2, 1, 2], Activation::Tanh, &mut rng(0)).unwrap();
        net.for_each_param_mut(|_, p| *p = 0.0);
        let out = &mut net.layers_mut()[1];
        out.set_bias(0, mean_bias);
        out.set_bias(1, log_std_bias);
        GaussianPolicy::from_net(net, 1).unwrap()
    }

    #[test]
    fn collapsed_variance_is_deterministic() {
        let p = policy_with_heads(0.4, -25.0);
        let obs = Matrix::zeros(5, 2);
        let s = p.sample(&obs, &mut rng(2)).unwrap();
        for i in 0..5 {
            assert!((s.actions[(i, 0)] - 0.4f64.tanh()).abs() < 1e-8);
            assert_eq!(s.heads.log_std[(i, 0)], LOG_STD_MIN);
        }
    }

    #[test]
    fn log_prob_at_origin() {
        let p = policy_with_heads(0.0, 0.0);
        let s = p
            .sample_with_noise(&Matrix::zeros(1, 2), Matrix::zeros(1, 1))
            .unwrap();
        let expected = -0.5 * (2.0 * PI).ln() - (1.0f64 + 1e-6).ln();
        assert!((s.log_probs[0] - expected).abs() < 1e-15);
        assert!((s.log_probs[0] + 0.918_939_533).abs() < 1e-8);
        let lp = p.log_prob(&Matrix::zeros(1, 2), &Matrix::zeros(1, 1)).unwrap();
        assert!((lp[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn density_normalizes_monte_carlo() {
        let p = policy_with_heads(0.3, -0.2);
        let mut r = rng(77);
        let n = 100_000;
        let actions = Matrix::from_fn(n, 1, |_, _| r.random_range(-1.0..1.0));
        let lp = p.log_prob(&Matrix::zeros(n, 2), &actions).unwrap();
        let integral = 2.0 * lp.iter().map(|v| v.exp()).sum::<f64>() / n as f64;
        assert!((integral - 1.0).abs() < 0.02, "{integral}");
    }

    #[test]
    fn sampled_actions_inside_box_with_finite_log_prob() {
        let p = GaussianPolicy::new(3, 2, &[16, 16], Activation::Tanh, &mut rng(8)).unwrap();
        let mut r = rng(9);
        let obs = Matrix::from_fn(500, 3, |_, _| r.random_range(-5.0..5.0));
        let s = p.sample(&obs, &mut r).unwrap();
        assert!(s.actions.data().iter().all(|a| a.abs() < 1.0));
        assert!(s.log_probs.iter().all(|l| l.is_finite() && l.abs() < 1e4));
    }

    #[test]
    fn log_prob_mean_path_gradient_check() {
        // log π at fixed squashed actions, as a function of the head outputs.
        let p = GaussianPolicy::new(3, 2, &[5], Activation::Tanh, &mut rng(10)).unwrap();
        let mut r = rng(11);
        let obs = Matrix::from_fn(4, 3, |_, _| r.random_range(-1.0..1.0));
        let acts = Matrix::from_fn(4, 2, |_, _| r.random_range(-0.9..0.9));
        let check = finite_diff_check(&p.net, &obs, |out| {
            let mut v = 0.0;
            let mut g = Matrix::zeros(out.rows(), out.cols());
            for i in 0..out.rows() {
                for j in 0..2 {
                    let u = acts[(i, j)].atanh();
                    let (mu, ls) = (out[(i, j)], out[(i, 2 + j)]);
                    let z = (u - mu) / ls.exp();
                    v += -0.5 * z * z - ls;
                    g[(i, j)] = z / ls.exp();
                    g[(i, 2 + j)] = z * z - 1.0;
                }
            }
            (v, g)
        })
        .unwrap();
        assert!(check.max_rel_error <= 1e-5, "{}", check.max_rel_error);
    }

    #[test]
    fn zero_critics_output_bias() {
        let mut c = TwinCritic::new(3, 1, &[4], Activation::Tanh, &mut rng(3)).unwrap();
        for (k, q) in c.nets_mut().into_iter().enumerate() {
            q.for_each_param_mut(|_, p| *p = 0.0);
            q.layers_mut()[1].set_bias(0, 1.5 + k as f64);
        }
        let (q1, q2) = c.forward(&Matrix::zeros(2, 3), &Matrix::zeros(2, 1)).unwrap();
        assert_eq!(q1, vec![1.5, 1.5]);
        assert_eq!(q2, vec![2.5, 2.5]);
    }

    #[test]
    fn critic_forward_pure_and_composed() {
        let c = TwinCritic::new(3, 1, &[6, 6], Activation::Tanh, &mut rng(4)).unwrap();
        let mut r = rng(5);
        let obs = Matrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0));
        let act = Matrix::from_fn(3, 1, |_, _| r.random_range(-1.0..1.0));
        let a = c.forward(&obs, &act).unwrap();
        assert_eq!(a, c.forward(&obs, &act).unwrap());
        let x = concat_columns(&obs, &act).unwrap();
        assert_eq!(a.0, c.q1.predict(&x).unwrap().into_vec());
        assert_eq!(a.1, c.q2.predict(&x).unwrap().into_vec());
        assert_ne!(a.0, a.1);
        assert!(c.forward(&obs, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn polyak_cases() {
        let online = init_mlp(&[2, 3, 1], Activation::Tanh, &mut rng(1)).unwrap();
        let base = init_mlp(&[2, 3, 1], Activation::Tanh, &mut rng(2)).unwrap();

        let mut t = base.clone();
        polyak_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);

        let mut t = base.clone();
        polyak_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, base);

        let mut a = base.clone();
        a.for_each_param_mut(|_, p| *p = 2.0);
        let mut b = base.clone();
        b.for_each_param_mut(|_, p| *p = 4.0);
        polyak_update(&mut a, &b, 0.5).unwrap();
        assert!(a.flat_params().iter().all(|&v| v == 3.0));

        assert!(polyak_update(&mut t, &online, 1.5).is_err());
        let mut wrong = init_mlp(&[2, 4, 1], Activation::Tanh, &mut rng(3)).unwrap();
        assert!(polyak_update(&mut wrong, &online, 0.5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn polyak_contracts_per_parameter(seed in 0u64..300, tau in 0.0f64..=1.0) {
            let online = init_mlp(&[3, 4, 1], Activation::Tanh, &mut rng(seed)).unwrap();
            let mut target = init_mlp(&[3, 4, 1], Activation::Tanh, &mut rng(seed + 1000)).unwrap();
            let before = target.flat_params();
            polyak_update(&mut target, &online, tau).unwrap();
            for ((t, b), o) in target.flat_params().iter().zip(&before).zip(online.flat_params()) {
                let lhs = (t - o).abs();
                let rhs = (1.0 - tau) * (b - o).abs();
                proptest::prop_assert!((lhs - rhs).abs() <= 1e-15);
            }
        }
    }
}
