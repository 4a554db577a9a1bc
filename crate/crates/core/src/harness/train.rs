use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig};
use super::log::{write_atomic, LogRow, RunLog};
use super::streams::{Stream, Streams};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::fim::{
    actor_scores, critic_scores_from_jacobians, estimate, fgsf_scrub, gaussian_scrub,
    periodic_reset, q_jacobians, reset_due,
};
use crate::metrics::{dormant_fraction, weight_update_kl, WeightSnapshot};
use crate::ndmath::Matrix;
use crate::nets::concat_columns;
use crate::sac::{Batch, ReplayBuffer, SacAgent, Transition};

pub const CSV_FILE: &str = "run.csv";
pub const RESULT_FILE: &str = "result.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Training episodes averaged for the final-return statistic.
pub const FINAL_EPISODES: usize = 100;
/// Evaluation episodes averaged for the final evaluation score.
pub const FINAL_EVAL_EPISODES: usize = 10;

/// Returns of one evaluation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub returns: Vec<f64>,
}

impl EvalRecord {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub agent: SacAgent,
    pub buffer: ReplayBuffer,
    pub env: Env,
    pub streams: Streams,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub scrubs: u64,
    pub resets: u64,
    /// Return accumulated so far in the running episode.
    pub episode_return: f64,
    pub episode_returns: Vec<f64>,
    pub evals: Vec<EvalRecord>,
    /// Actor and critic weights at the previous log row.
    pub snapshots: [WeightSnapshot; 2],
    pub log: RunLog,
    pub elapsed_ms: f64,
}

/// Summary written next to the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub env: String,
    pub method: String,
    pub seed: u64,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub scrubs: u64,
    pub resets: u64,
    pub episodes: usize,
    /// Mean and sample standard deviation of the last 100 training episodes.
    pub final_return_mean: Option<f64>,
    pub final_return_std: Option<f64>,
    /// Mean over the last 10 evaluation episodes.
    pub final_eval_mean: Option<f64>,
    pub peak_tr_f_actor: Option<f64>,
    pub peak_tr_f_critic: Option<f64>,
    pub evals: Vec<EvalRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub csv_path: PathBuf,
    pub result: RunResult,
}

/// Mean and sample standard deviation; `None` when empty.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

fn peak(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.filter(|v| v.is_finite()).fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
}

pub struct Trainer {
    cfg: RunConfig,
    state: TrainerState,
    started: Instant,
    elapsed_at_start: f64,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.resolved();
        let mut streams = Streams::new(cfg.seed);
        let env = Env::new(cfg.env, streams.get(Stream::Env));
        let agent = SacAgent::new(
            env.obs_dim(),
            env.act_dim(),
            &cfg.sac,
            streams.get(Stream::Init),
        )?;
        let snapshots = [
            WeightSnapshot::of(0, &[&agent.policy.net])?,
            WeightSnapshot::of(0, &[&agent.critic.q1, &agent.critic.q2])?,
        ];
        let state = TrainerState {
            buffer: ReplayBuffer::new(cfg.sac.buffer_capacity)?,
            agent,
            env,
            streams,
            env_steps: 0,
            grad_steps: 0,
            scrubs: 0,
            resets: 0,
            episode_return: 0.0,
            episode_returns: Vec::new(),
            evals: Vec::new(),
            snapshots,
            log: RunLog::default(),
            elapsed_ms: 0.0,
        };
        Ok(Self::from_parts(cfg, state))
    }

    /// Continues from a saved state; the configuration is taken as given.
    pub fn from_parts(cfg: RunConfig, state: TrainerState) -> Self {
        Self {
            elapsed_at_start: state.elapsed_ms,
            cfg,
            state,
            started: Instant::now(),
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.env_steps >= self.cfg.env_steps()
    }

    fn elapsed_ms(&self) -> f64 {
        if self.cfg.wall_clock {
            self.elapsed_at_start + self.started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    }

    /// One environment step followed by its gradient updates, log row,
    /// evaluation and checkpoint when due.
    pub fn step(&mut self) -> Result<()> {
        let warmup = self.cfg.sac.warmup_steps;
        let ratio = self.cfg.sac.replay_ratio;
        let batch_size = self.cfg.sac.batch_size;
        let st = &mut self.state;
        let obs = st.env.observation();
        let act_dim = st.env.act_dim();
        let action: Vec<f64> = if st.env_steps < warmup {
            let rng = st.streams.get(Stream::Action);
            (0..act_dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
        } else {
            let o = Matrix::from_vec(1, obs.len(), obs.clone())?;
            let s = st.agent.policy.sample(&o, st.streams.get(Stream::Action))?;
            s.actions.into_vec()
        };
        let res = st.env.step(&action)?;
        st.episode_return += res.reward;
        st.buffer.push(Transition {
            obs,
            action,
            reward: res.reward,
            next_obs: res.observation,
            done: res.terminal,
        })?;
        if res.done {
            st.episode_returns.push(st.episode_return);
            st.episode_return = 0.0;
            st.env.reset(st.streams.get(Stream::Env));
        }
        st.env_steps += 1;

        if st.env_steps > warmup {
            let log_mark = st.grad_steps / self.cfg.log_every;
            let mut last = None;
            for _ in 0..ratio {
                let st = &mut self.state;
                let batch = st.buffer.sample(batch_size, st.streams.get(Stream::Replay))?;
                self.update(&batch)?;
                last = Some(batch);
            }
            if self.state.grad_steps / self.cfg.log_every > log_mark {
                let batch = last.expect("replay_ratio >= 1");
                self.log_row(&batch)?;
            }
        }
        if self.state.env_steps % self.cfg.eval_every == 0 {
            self.evaluate()?;
        }
        if self.cfg.checkpoint_every > 0 && self.state.env_steps % self.cfg.checkpoint_every == 0 {
            let path = self.cfg.output_dir.join(CHECKPOINT_FILE);
            fs::create_dir_all(&self.cfg.output_dir)?;
            self.save_checkpoint(&path)?;
        }
        Ok(())
    }

    fn update(&mut self, batch: &Batch) -> Result<()> {
        let cfg = &self.cfg;
        let st = &mut self.state;
        st.agent
            .update(batch, &cfg.sac, st.streams.get(Stream::Update))?;
        st.grad_steps += 1;
        let t = st.grad_steps;
        let scrub = &cfg.scrub;
        match cfg.method {
            Method::Baseline => {}
            Method::Fgsf => {
                if scrub.lambda > 0.0 && t % scrub.frequency == 0 {
                    let rng = st.streams.get(Stream::Scrub);
                    let agent = &mut st.agent;
                    if scrub.target.actor() {
                        let scores = actor_scores(&agent.policy, &batch.obs, rng)?;
                        let est = estimate(&scores, scrub.estimator)?;
                        fgsf_scrub(&mut [&mut agent.policy.net], &est, scrub, rng)?;
                    }
                    if scrub.target.critic() {
                        let c = &mut agent.critic;
                        let jac = q_jacobians(&[&c.q1, &c.q2], &batch.obs, &batch.actions)?;
                        let scores = critic_scores_from_jacobians(&jac, rng)?;
                        let est = estimate(&scores, scrub.estimator)?;
                        fgsf_scrub(&mut [&mut c.q1, &mut c.q2], &est, scrub, rng)?;
                    }
                    st.scrubs += 1;
                }
            }
            Method::Gauss => {
                if t % scrub.frequency == 0 {
                    let rng = st.streams.get(Stream::Scrub);
                    if scrub.target.actor() {
                        gaussian_scrub(&mut st.agent.policy.net, rng);
                    }
                    if scrub.target.critic() {
                        gaussian_scrub(&mut st.agent.critic.q1, rng);
                        gaussian_scrub(&mut st.agent.critic.q2, rng);
                    }
                    st.scrubs += 1;
                }
            }
            Method::Reset => {
                if reset_due(t, cfg.reset_every()) {
                    periodic_reset(&mut st.agent, &cfg.sac, st.streams.get(Stream::Reset))?;
                    st.resets += 1;
                }
            }
        }
        if !st.agent.policy.net.is_finite() || !st.agent.critic.q1.is_finite() || !st.agent.critic.q2.is_finite() {
            return Err(Error::NonFinite("network weights".into()));
        }
        Ok(())
    }

    /// Records traces, dormancy and weight drift on `batch`.
    fn log_row(&mut self, batch: &Batch) -> Result<()> {
        let cfg = &self.cfg;
        let estimator = cfg.scrub.estimator;
        let elapsed = self.elapsed_ms();
        let st = &mut self.state;
        let rng = st.streams.get(Stream::Diag);
        let agent = &st.agent;
        let tr_actor = estimate(&actor_scores(&agent.policy, &batch.obs, rng)?, estimator)?.trace();
        let c = &agent.critic;
        let jac = q_jacobians(&[&c.q1, &c.q2], &batch.obs, &batch.actions)?;
        let tr_critic = estimate(&critic_scores_from_jacobians(&jac, rng)?, estimator)?.trace();

        let probe_rows = cfg.dormant.probe_batch_size.min(batch.len());
        let probe_obs = Matrix::from_fn(probe_rows, batch.obs.cols(), |i, j| batch.obs[(i, j)]);
        let probe_act = Matrix::from_fn(probe_rows, batch.actions.cols(), |i, j| batch.actions[(i, j)]);
        let dormant_actor = dormant_fraction(&[&agent.policy.net], &probe_obs, &cfg.dormant)?;
        let critic_probe = concat_columns(&probe_obs, &probe_act)?;
        let dormant_critic = dormant_fraction(&[&c.q1, &c.q2], &critic_probe, &cfg.dormant)?;

        let step = st.env_steps;
        let snaps = [
            WeightSnapshot::of(step, &[&agent.policy.net])?,
            WeightSnapshot::of(step, &[&c.q1, &c.q2])?,
        ];
        let kl_actor = weight_update_kl(&st.snapshots[0], &snaps[0])?;
        let kl_critic = weight_update_kl(&st.snapshots[1], &snaps[1])?;
        let row = LogRow {
            step,
            episode_return: st.episode_returns.last().copied().unwrap_or(f64::NAN),
            tr_f_actor: tr_actor,
            tr_f_critic: tr_critic,
            dormant_actor,
            dormant_critic,
            kl_actor,
            kl_critic,
            alpha: agent.alpha(),
            wall_ms: elapsed,
        };
        st.snapshots = snaps;
        st.elapsed_ms = elapsed;
        st.log.rows.push(row);
        Ok(())
    }

    /// Deterministic `tanh(μ)` episodes on a copy of the training task.
    fn evaluate(&mut self) -> Result<()> {
        let st = &mut self.state;
        let mut env = st.env.clone();
        let mut returns = Vec::with_capacity(self.cfg.eval_episodes);
        for _ in 0..self.cfg.eval_episodes {
            let mut obs = env.reset(st.streams.get(Stream::Eval));
            let mut total = 0.0;
            loop {
                let o = Matrix::from_vec(1, obs.len(), obs)?;
                let a = st.agent.policy.mean_action(&o)?.into_vec();
                let r = env.step(&a)?;
                total += r.reward;
                obs = r.observation;
                if r.done {
                    break;
                }
            }
            returns.push(total);
        }
        st.evals.push(EvalRecord {
            step: st.env_steps,
            returns,
        });
        Ok(())
    }

    /// Runs until `env_steps` environment steps have been taken in total.
    pub fn run_until(&mut self, env_steps: u64) -> Result<()> {
        let target = env_steps.min(self.cfg.env_steps());
        while self.state.env_steps < target {
            self.step()?;
        }
        Ok(())
    }

    pub fn result(&self) -> RunResult {
        let st = &self.state;
        let tail = &st.episode_returns[st.episode_returns.len().saturating_sub(FINAL_EPISODES)..];
        let final_stat = mean_std(tail);
        let eval_returns: Vec<f64> = st.evals.iter().flat_map(|e| e.returns.iter().copied()).collect();
        let eval_tail = &eval_returns[eval_returns.len().saturating_sub(FINAL_EVAL_EPISODES)..];
        RunResult {
            env: self.cfg.env.name().to_string(),
            method: self.cfg.method.name().to_string(),
            seed: self.cfg.seed,
            env_steps: st.env_steps,
            grad_steps: st.grad_steps,
            scrubs: st.scrubs,
            resets: st.resets,
            episodes: st.episode_returns.len(),
            final_return_mean: final_stat.map(|s| s.0),
            final_return_std: final_stat.map(|s| s.1),
            final_eval_mean: mean_std(eval_tail).map(|s| s.0),
            peak_tr_f_actor: peak(st.log.rows.iter().map(|r| r.tr_f_actor)),
            peak_tr_f_critic: peak(st.log.rows.iter().map(|r| r.tr_f_critic)),
            evals: st.evals.clone(),
        }
    }

    /// Writes the log, the result summary and the resolved configuration.
    pub fn write_outputs(&self) -> Result<RunOutcome> {
        let dir = &self.cfg.output_dir;
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(CONFIG_FILE), self.cfg.to_toml_string()?.as_bytes())?;
        let csv_path = dir.join(CSV_FILE);
        self.state.log.write_atomic(&csv_path)?;
        let result = self.result();
        let json = serde_json::to_string_pretty(&result)
            .map_err(|e| Error::InvalidConfig(format!("result serialization: {e}")))?;
        write_atomic(&dir.join(RESULT_FILE), json.as_bytes())?;
        Ok(RunOutcome { csv_path, result })
    }

    /// Runs to completion and writes outputs. A non-finite state ends the
    /// run early with a NaN diagnostic row before the error is returned.
    pub fn run(&mut self) -> Result<RunOutcome> {
        fs::create_dir_all(&self.cfg.output_dir)?;
        let outcome = self.run_until(self.cfg.env_steps());
        if let Err(e) = outcome {
            if matches!(e, Error::NonFinite(_)) {
                self.push_diagnostic_row();
                self.write_outputs()?;
            }
            return Err(e);
        }
        if self.state.log.rows.is_empty() && !self.state.buffer.is_empty() {
            let batch = self.state.buffer.sample(
                self.cfg.sac.batch_size,
                self.state.streams.get(Stream::Diag),
            )?;
            self.log_row(&batch)?;
        }
        self.write_outputs()
    }

    fn push_diagnostic_row(&mut self) {
        let st = &mut self.state;
        let step = st.env_steps;
        if st.log.rows.last().is_some_and(|r| r.step >= step) {
            st.log.rows.pop();
        }
        st.log.rows.push(LogRow {
            step,
            episode_return: st.episode_returns.last().copied().unwrap_or(f64::NAN),
            tr_f_actor: f64::NAN,
            tr_f_critic: f64::NAN,
            dormant_actor: f64::NAN,
            dormant_critic: f64::NAN,
            kl_actor: f64::NAN,
            kl_critic: f64::NAN,
            alpha: st.agent.alpha(),
            wall_ms: st.elapsed_ms,
        });
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut state = self.state.clone();
        state.elapsed_ms = self.elapsed_ms().max(state.elapsed_ms);
        super::checkpoint::save_checkpoint(&self.cfg, &state, path)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let (cfg, state) = super::checkpoint::load_checkpoint(path)?;
        Ok(Self::from_parts(cfg, state))
    }
}

/// Trains with `cfg` and writes `run.csv`, `result.json` and `config.toml`
/// into its output directory.
pub fn run_training(cfg: &RunConfig) -> Result<RunOutcome> {
    Trainer::new(cfg.clone())?.run()
}
