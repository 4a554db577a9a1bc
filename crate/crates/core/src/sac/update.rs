//! Soft actor-critic losses, their gradients, and the optimizer steps.

use rand::Rng;

use super::adam::Adam;
use super::buffer::Batch;
use super::SacConfig;
use crate::error::{Error, Result};
use crate::ndmath::{Matrix, PerSampleGrads};
use crate::nets::{concat_columns, GaussianPolicy, TwinCritic, SQUASH_EPS};

/// TD targets `y = r + γ(1 − done)(min Q′(s′, a′) − α log π(a′|s′))`, with
/// `a′ ~ π(·|s′)` drawn from `rng`.
pub fn td_targets<R: Rng + ?Sized>(
    target_critic: &TwinCritic,
    policy: &GaussianPolicy,
    alpha: f64,
    batch: &Batch,
    gamma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let next = policy.sample(&batch.next_obs, rng)?;
    let (q1, q2) = target_critic.forward(&batch.next_obs, &next.actions)?;
    Ok((0..batch.len())
        .map(|i| {
            let not_done = if batch.dones[i] { 0.0 } else { 1.0 };
            let soft_v = q1[i].min(q2[i]) - alpha * next.log_probs[i];
            batch.rewards[i] + gamma * not_done * soft_v
        })
        .collect())
}

/// Critic loss `½[mean (Q₁ − y)² + mean (Q₂ − y)²]` and its gradients.
#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub loss: f64,
    /// Flat batch gradients for `q1` and `q2`.
    pub grads: [Vec<f64>; 2],
    /// Per-sample Jacobians `∂Q_k(sᵢ, aᵢ)/∂w`, kept for Fisher estimation.
    pub jacobians: [PerSampleGrads; 2],
}

pub fn critic_loss_grads(
    critic: &TwinCritic,
    obs: &Matrix,
    actions: &Matrix,
    targets: &[f64],
) -> Result<CriticGrads> {
    let n = obs.rows();
    if n == 0 || targets.len() != n {
        return Err(Error::shape("critic targets", (n, 1), (targets.len(), 1)));
    }
    let x = concat_columns(obs, actions)?;
    let ones = Matrix::from_fn(n, 1, |_, _| 1.0);
    let mut loss = 0.0;
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut jacobians: Vec<PerSampleGrads> = Vec::with_capacity(2);
    for net in critic.nets() {
        let pass = net.forward(&x)?;
        let q = pass.output().data();
        let mut sq = 0.0;
        let scales: Vec<f64> = (0..n)
            .map(|i| {
                let r = q[i] - targets[i];
                sq += r * r;
                r / n as f64
            })
            .collect();
        loss += 0.5 * sq / n as f64;
        let jac = net.backward_per_sample(&pass, &ones)?;
        let mut weighted = jac.clone();
        weighted.scale_samples(&scales);
        grads.push(weighted.sum_flat());
        jacobians.push(jac);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    let [g1, g2]: [Vec<f64>; 2] = grads.try_into().unwrap();
    let [j1, j2]: [PerSampleGrads; 2] = jacobians.try_into().unwrap();
    Ok(CriticGrads {
        loss,
        grads: [g1, g2],
        jacobians: [j1, j2],
    })
}

/// Result of one critic step.
#[derive(Debug, Clone)]
pub struct CriticStep {
    pub loss: f64,
    pub targets: Vec<f64>,
    pub jacobians: [PerSampleGrads; 2],
}

/// One adaptive-moment step on both critics toward the shared TD targets.
#[allow(clippy::too_many_arguments)]
pub fn critic_update<R: Rng + ?Sized>(
    critic: &mut TwinCritic,
    optimizers: &mut [Adam; 2],
    target_critic: &TwinCritic,
    policy: &GaussianPolicy,
    alpha: f64,
    batch: &Batch,
    cfg: &SacConfig,
    rng: &mut R,
) -> Result<CriticStep> {
    if batch.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let targets = td_targets(target_critic, policy, alpha, batch, cfg.gamma, rng)?;
    let g = critic_loss_grads(critic, &batch.obs, &batch.actions, &targets)?;
    let [o1, o2] = optimizers;
    o1.step_mlp(&mut critic.q1, &g.grads[0])?;
    o2.step_mlp(&mut critic.q2, &g.grads[1])?;
    Ok(CriticStep {
        loss: g.loss,
        targets,
        jacobians: g.jacobians,
    })
}

/// Actor objective `mean[α log π(ã|s) − min(Q₁, Q₂)(s, ã)]` with
/// `ã = tanh(μ + σ·z)` for the supplied noise `z`.
#[derive(Debug, Clone)]
pub struct ActorGrads {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub log_probs: Vec<f64>,
}

pub fn actor_loss_grads(
    policy: &GaussianPolicy,
    critic: &TwinCritic,
    alpha: f64,
    obs: &Matrix,
    noise: Matrix,
) -> Result<ActorGrads> {
    let n = obs.rows();
    if n == 0 {
        return Err(Error::EmptyBuffer);
    }
    let d = policy.act_dim();
    let s = policy.sample_with_noise(obs, noise)?;
    let x = concat_columns(obs, &s.actions)?;
    let inv_n = 1.0 / n as f64;

    let p1 = critic.q1.forward(&x)?;
    let p2 = critic.q2.forward(&x)?;
    let (q1, q2) = (p1.output().data(), p2.output().data());
    let mut loss = 0.0;
    let mut g1 = Matrix::zeros(n, 1);
    let mut g2 = Matrix::zeros(n, 1);
    for i in 0..n {
        let q = if q1[i] <= q2[i] {
            g1[(i, 0)] = -inv_n;
            q1[i]
        } else {
            g2[(i, 0)] = -inv_n;
            q2[i]
        };
        loss += alpha * s.log_probs[i] - q;
    }
    loss *= inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    let b1 = critic.q1.backward_per_sample(&p1, &g1)?;
    let b2 = critic.q2.backward_per_sample(&p2, &g2)?;
    let obs_dim = obs.cols();

    let mut out_grads = Matrix::zeros(n, 2 * d);
    for i in 0..n {
        for j in 0..d {
            let a = s.actions[(i, j)];
            let one_minus = 1.0 - a * a;
            let dq_da = b1.input_grads[(i, obs_dim + j)] + b2.input_grads[(i, obs_dim + j)];
            let dlogp_du = 2.0 * a * one_minus / (one_minus + SQUASH_EPS);
            let du = dq_da * one_minus + alpha * inv_n * dlogp_du;
            let sigma = s.heads.log_std[(i, j)].exp();
            out_grads[(i, j)] = du;
            out_grads[(i, d + j)] =
                (du * sigma * s.noise[(i, j)] - alpha * inv_n) * s.heads.log_std_live[(i, j)];
        }
    }
    let grads = policy
        .net
        .backward_per_sample(&s.heads.pass, &out_grads)?
        .sum_flat();
    Ok(ActorGrads {
        loss,
        grads,
        log_probs: s.log_probs,
    })
}

#[derive(Debug, Clone)]
pub struct ActorStep {
    pub loss: f64,
    pub log_probs: Vec<f64>,
}

/// One adaptive-moment step on the policy with fresh reparameterization noise.
pub fn actor_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    optimizer: &mut Adam,
    critic: &TwinCritic,
    alpha: f64,
    batch: &Batch,
    rng: &mut R,
) -> Result<ActorStep> {
    let noise = Matrix::from_fn(batch.len(), policy.act_dim(), |_, _| {
        rng.sample(rand_distr::StandardNormal)
    });
    let g = actor_loss_grads(policy, critic, alpha, &batch.obs, noise)?;
    optimizer.step_mlp(&mut policy.net, &g.grads)?;
    Ok(ActorStep {
        loss: g.loss,
        log_probs: g.log_probs,
    })
}

/// Temperature step on `−log α · mean(log π + H̄)`; returns the new log α.
pub fn alpha_update(
    log_alpha: f64,
    optimizer: &mut Adam,
    batch_log_probs: &[f64],
    target_entropy: f64,
) -> Result<f64> {
    if batch_log_probs.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mean =
        batch_log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / batch_log_probs.len() as f64;
    let mut p = [log_alpha];
    optimizer.step_slice(&mut p, &[-mean])?;
    Ok(p[0])
}

/// `exp(log α)`, floored at the smallest positive normal so α stays positive.
pub fn alpha_of(log_alpha: f64) -> f64 {
    log_alpha.exp().max(f64::MIN_POSITIVE)
}
