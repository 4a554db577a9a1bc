use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::estimate::{inv_quarter_root_apply, Estimator, FimEstimate};
use crate::error::{Error, Result};
use crate::ndmath::Mlp;
use crate::sac::{SacAgent, SacConfig};

/// Standard deviation of Gaussian scrubbing relative to the mean weight
/// magnitude.
pub const GAUSSIAN_SCRUB_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrubTarget {
    #[serde(alias = "actor")]
    ActorOnly,
    #[serde(alias = "critic")]
    CriticOnly,
    Both,
}

impl ScrubTarget {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "actor" | "actor_only" => Some(Self::ActorOnly),
            "critic" | "critic_only" => Some(Self::CriticOnly),
            "both" => Some(Self::Both),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ActorOnly => "actor_only",
            Self::CriticOnly => "critic_only",
            Self::Both => "both",
        }
    }

    pub fn actor(self) -> bool {
        matches!(self, Self::ActorOnly | Self::Both)
    }

    pub fn critic(self) -> bool {
        matches!(self, Self::CriticOnly | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScrubConfig {
    pub lambda: f64,
    /// Multiplies `lambda`; kept separate only for clarity of the noise law.
    pub sigma_sq: f64,
    /// Gradient steps between scrubs.
    pub frequency: u64,
    pub target: ScrubTarget,
    /// Added to every Fisher eigenvalue before the inverse quarter root.
    pub damping: f64,
    pub estimator: Estimator,
}

impl Default for ScrubConfig {
    fn default() -> Self {
        Self {
            lambda: 5e-7,
            sigma_sq: 1.0,
            frequency: 10,
            target: ScrubTarget::Both,
            damping: 1e-8,
            estimator: Estimator::Ekfac,
        }
    }
}

impl ScrubConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("scrub lambda must be >= 0".into()));
        }
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::InvalidConfig("scrub sigma_sq must be >= 0".into()));
        }
        if self.frequency == 0 {
            return Err(Error::InvalidConfig("scrub frequency must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidConfig("scrub damping must be > 0".into()));
        }
        Ok(())
    }

    /// `(λσ²)^{1/4}`.
    pub fn noise_scale(&self) -> f64 {
        (self.lambda * self.sigma_sq).powf(0.25)
    }
}

/// Adds `(λσ²)^{1/4} (F + damping)^{-1/4} ε` to the parameters of `nets`,
/// taken in order, where `est` covers exactly their concatenated parameters.
/// Returns the applied perturbation. On a non-finite result no weight changes.
pub fn fgsf_scrub<R: Rng + ?Sized>(
    nets: &mut [&mut Mlp],
    est: &FimEstimate,
    cfg: &ScrubConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let total: usize = nets.iter().map(|n| n.param_count()).sum();
    if est.param_count() != total {
        return Err(Error::shape("fgsf_scrub", (est.param_count(), 1), (total, 1)));
    }
    let scale = cfg.noise_scale();
    if scale == 0.0 {
        return Ok(vec![0.0; total]);
    }
    let eps: Vec<f64> = (0..total).map(|_| rng.sample(StandardNormal)).collect();
    let mut delta = inv_quarter_root_apply(est, &eps, cfg.damping)?;
    for d in &mut delta {
        *d *= scale;
    }
    if !delta.iter().all(|d| d.is_finite()) {
        return Err(Error::NonFinite("scrub perturbation".into()));
    }
    let mut off = 0;
    for net in nets.iter_mut() {
        net.for_each_param_mut(|i, p| *p += delta[off + i]);
        off += net.param_count();
    }
    Ok(delta)
}

/// Adds `N(0, (0.001·mean|w|)²)` noise to every parameter of `net`.
pub fn gaussian_scrub<R: Rng + ?Sized>(net: &mut Mlp, rng: &mut R) {
    let n = net.param_count();
    let mean_abs = net.flat_params().iter().map(|w| w.abs()).sum::<f64>() / n as f64;
    let std = GAUSSIAN_SCRUB_SCALE * mean_abs;
    if std == 0.0 {
        return;
    }
    net.for_each_param_mut(|_, p| {
        let z: f64 = rng.sample(StandardNormal);
        *p += std * z;
    });
}

/// Reinitializes actor, critics, targets and network optimizers from `rng`.
/// The temperature and the replay buffer are left alone.
pub fn periodic_reset<R: Rng + ?Sized>(
    agent: &mut SacAgent,
    cfg: &SacConfig,
    rng: &mut R,
) -> Result<()> {
    let log_alpha = agent.log_alpha;
    let alpha_opt = agent.alpha_opt.clone();
    let obs_dim = agent.policy.obs_dim();
    let act_dim = agent.policy.act_dim();
    *agent = SacAgent::new(obs_dim, act_dim, cfg, rng)?;
    agent.log_alpha = log_alpha;
    agent.alpha_opt = alpha_opt;
    Ok(())
}

/// Whether a reset falls due after gradient step `grad_steps`.
pub fn reset_due(grad_steps: u64, interval: u64) -> bool {
    interval > 0 && grad_steps > 0 && grad_steps % interval == 0
}
