//! Replay buffer and the soft actor-critic update.

mod adam;
mod buffer;
mod update;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use buffer::{Batch, ReplayBuffer, Transition};
pub use update::{
    actor_loss_grads, actor_update, alpha_of, alpha_update, critic_loss_grads, critic_update,
    td_targets, ActorGrads, ActorStep, CriticGrads, CriticStep,
};

use crate::error::{Error, Result};
use crate::ndmath::Activation;
use crate::nets::{GaussianPolicy, TwinCritic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    /// Defaults to `-action_dim` when absent.
    pub target_entropy: Option<f64>,
    /// Gradient updates per environment step.
    pub replay_ratio: u64,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_log_alpha: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            learning_rate: 3e-4,
            batch_size: 256,
            warmup_steps: 1000,
            target_entropy: None,
            replay_ratio: 1,
            buffer_capacity: 100_000,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            init_log_alpha: 0.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.replay_ratio == 0 {
            return bad("replay_ratio must be at least 1");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be nonempty and positive");
        }
        Ok(())
    }

    pub fn target_entropy_for(&self, act_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(act_dim as f64))
    }
}

/// Networks, target networks, temperature and all optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub policy: GaussianPolicy,
    pub critic: TwinCritic,
    pub target_critic: TwinCritic,
    pub log_alpha: f64,
    pub policy_opt: Adam,
    pub critic_opt: [Adam; 2],
    pub alpha_opt: Adam,
}

/// Outcome of one full update (critic, actor, temperature, target tracking).
#[derive(Debug, Clone)]
pub struct UpdateStats {
    pub critic: CriticStep,
    pub actor_loss: f64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        cfg: &SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let policy = GaussianPolicy::new(obs_dim, act_dim, &cfg.hidden, cfg.activation, rng)?;
        let critic = TwinCritic::new(obs_dim, act_dim, &cfg.hidden, cfg.activation, rng)?;
        let lr = cfg.learning_rate;
        Ok(Self {
            policy_opt: Adam::new(policy.net.param_count(), lr),
            critic_opt: [
                Adam::new(critic.q1.param_count(), lr),
                Adam::new(critic.q2.param_count(), lr),
            ],
            alpha_opt: Adam::new(1, lr),
            target_critic: critic.clone(),
            policy,
            critic,
            log_alpha: cfg.init_log_alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        alpha_of(self.log_alpha)
    }

    /// Critic step, actor step, temperature step, then Polyak tracking.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        cfg: &SacConfig,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        let alpha = self.alpha();
        let critic = critic_update(
            &mut self.critic,
            &mut self.critic_opt,
            &self.target_critic,
            &self.policy,
            alpha,
            batch,
            cfg,
            rng,
        )?;
        let actor = actor_update(
            &mut self.policy,
            &mut self.policy_opt,
            &self.critic,
            alpha,
            batch,
            rng,
        )?;
        self.log_alpha = alpha_update(
            self.log_alpha,
            &mut self.alpha_opt,
            &actor.log_probs,
            cfg.target_entropy_for(self.policy.act_dim()),
        )?;
        self.target_critic.polyak_from(&self.critic, cfg.tau)?;
        Ok(UpdateStats {
            critic,
            actor_loss: actor.loss,
        })
    }
}
