//! Binary checkpoint format, all integers and reals little-endian:
//!
//! ```text
//! "FGSF" | version u32 | config (TOML string)
//! shape table: count u32, then per network name, layer count u32,
//!              per layer (out u32, in u32, activation u8)
//! weights:     per network, its parameters as f64 in flat order
//! optimizers:  actor, q1, q2, temperature: lr, step, m, v
//! log α | RNG streams: count u32, per stream (seed [u8; 32], stream u64, word u128)
//! counters:    env steps, gradient steps, scrubs, resets
//! episodes, environment, replay buffer, weight snapshots, evaluations, log rows
//! ```

use std::path::Path;

use super::config::RunConfig;
use super::log::{write_atomic, LogRow, RunLog};
use super::streams::{StreamState, Streams};
use super::train::{EvalRecord, TrainerState};
use crate::env::{Env, Pendulum, PendulumState, ShiftingGoal, ShiftingGoalState};
use crate::error::{Error, Result};
use crate::metrics::WeightSnapshot;
use crate::ndmath::{Activation, Dense, Mlp};
use crate::nets::{GaussianPolicy, TwinCritic};
use crate::sac::{Adam, ReplayBuffer, SacAgent, Transition};

pub const MAGIC: &[u8; 4] = b"FGSF";
pub const VERSION: u32 = 1;

const NET_NAMES: [&str; 5] = ["actor", "q1", "q2", "q1_target", "q2_target"];

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::TruncatedCheckpoint);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    /// Element count, bounded by the bytes that remain.
    fn len(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()?;
        if n.saturating_mul(elem_size.max(1) as u64) > self.buf.len() as u64 {
            return Err(Error::TruncatedCheckpoint);
        }
        Ok(n as usize)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("non-utf8 string"))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(corrupt("bad flag")),
        }
    }
}

fn corrupt(what: &str) -> Error {
    Error::CorruptCheckpoint(what.to_string())
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Tanh => 1,
        Activation::Relu => 2,
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::Tanh),
        2 => Ok(Activation::Relu),
        _ => Err(corrupt("unknown activation")),
    }
}

fn put_adam(w: &mut Writer, a: &Adam) {
    w.f64(a.lr);
    w.u64(a.step);
    w.f64s(&a.m);
    w.f64s(&a.v);
}

fn get_adam(r: &mut Reader) -> Result<Adam> {
    let lr = r.f64()?;
    let step = r.u64()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    if m.len() != v.len() {
        return Err(corrupt("optimizer moment lengths differ"));
    }
    Ok(Adam { lr, step, m, v })
}

/// Serializes `state` under `cfg` to bytes.
pub fn encode(cfg: &RunConfig, state: &TrainerState) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(&cfg.to_toml_string()?);

    let a = &state.agent;
    let nets: [&Mlp; 5] = [
        &a.policy.net,
        &a.critic.q1,
        &a.critic.q2,
        &a.target_critic.q1,
        &a.target_critic.q2,
    ];
    w.u32(nets.len() as u32);
    for (name, net) in NET_NAMES.iter().zip(&nets) {
        w.str(name);
        w.u32(net.layers().len() as u32);
        for l in net.layers() {
            w.u32(l.out_dim() as u32);
            w.u32(l.in_dim() as u32);
            w.u8(activation_code(l.activation()));
        }
    }
    for net in &nets {
        for p in net.flat_params() {
            w.f64(p);
        }
    }
    for opt in [&a.policy_opt, &a.critic_opt[0], &a.critic_opt[1], &a.alpha_opt] {
        put_adam(&mut w, opt);
    }
    w.f64(a.log_alpha);
    w.u64(a.policy.act_dim() as u64);

    let streams = state.streams.states();
    w.u32(streams.len() as u32);
    for s in &streams {
        w.buf.extend_from_slice(&s.seed);
        w.u64(s.stream);
        w.u128(s.word_pos);
    }

    for c in [state.env_steps, state.grad_steps, state.scrubs, state.resets] {
        w.u64(c);
    }
    w.f64(state.episode_return);
    w.f64s(&state.episode_returns);

    match &state.env {
        Env::Pendulum(p) => {
            w.u8(0);
            w.f64(p.state.theta);
            w.f64(p.state.theta_dot);
            w.u64(p.steps as u64);
        }
        Env::ShiftingGoal(g) => {
            w.u8(1);
            g.state.position.iter().for_each(|&v| w.f64(v));
            g.state.goal.iter().for_each(|&v| w.f64(v));
            w.u64(g.state.episodes_elapsed as u64);
            w.u64(g.shift_episode as u64);
            w.u8(g.shifted as u8);
            w.u64(g.steps as u64);
        }
    }

    let buf = &state.buffer;
    w.u64(buf.capacity() as u64);
    w.u64(buf.cursor() as u64);
    w.len(buf.len());
    for t in buf.storage() {
        w.f64s(&t.obs);
        w.f64s(&t.action);
        w.f64(t.reward);
        w.f64s(&t.next_obs);
        w.u8(t.done as u8);
    }

    for s in &state.snapshots {
        w.u64(s.step);
        w.f64s(s.params());
    }
    w.len(state.evals.len());
    for e in &state.evals {
        w.u64(e.step);
        w.f64s(&e.returns);
    }
    w.len(state.log.rows.len());
    for row in &state.log.rows {
        w.u64(row.step);
        row.fields().iter().for_each(|&v| w.f64(v));
    }
    w.f64(state.elapsed_ms);
    Ok(w.buf)
}

/// Inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(RunConfig, TrainerState)> {
    let mut r = Reader { buf: bytes };
    if r.take(4).map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let cfg = RunConfig::from_toml_str(&r.str()?)?;

    let count = r.u32()? as usize;
    if count != NET_NAMES.len() {
        return Err(corrupt("unexpected network count"));
    }
    let mut shapes = Vec::with_capacity(count);
    for name in NET_NAMES {
        if r.str()? != name {
            return Err(corrupt("network name mismatch"));
        }
        let layers = r.u32()? as usize;
        let mut dims = Vec::with_capacity(layers);
        for _ in 0..layers {
            let out = r.u32()? as usize;
            let inp = r.u32()? as usize;
            dims.push((out, inp, activation_from(r.u8()?)?));
        }
        shapes.push(dims);
    }
    let mut nets = Vec::with_capacity(count);
    for dims in shapes {
        let layers = dims
            .iter()
            .map(|&(out, inp, act)| Dense::zeros(inp, out, act))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Mlp::new(layers)?;
        let params = (0..net.param_count()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        net.set_flat_params(&params)?;
        nets.push(net);
    }
    let policy_opt = get_adam(&mut r)?;
    let critic_opt = [get_adam(&mut r)?, get_adam(&mut r)?];
    let alpha_opt = get_adam(&mut r)?;
    let log_alpha = r.f64()?;
    let act_dim = r.u64()? as usize;

    let mut nets = nets.into_iter();
    let mut next = || nets.next().expect("five networks");
    let policy = GaussianPolicy::from_net(next(), act_dim)?;
    let critic = TwinCritic {
        q1: next(),
        q2: next(),
    };
    let target_critic = TwinCritic {
        q1: next(),
        q2: next(),
    };
    let agent = SacAgent {
        policy,
        critic,
        target_critic,
        log_alpha,
        policy_opt,
        critic_opt,
        alpha_opt,
    };

    let n_streams = r.u32()? as usize;
    let mut states = Vec::with_capacity(n_streams);
    for _ in 0..n_streams {
        states.push(StreamState {
            seed: r.array()?,
            stream: r.u64()?,
            word_pos: r.u128()?,
        });
    }
    let streams = Streams::from_states(&states).ok_or_else(|| corrupt("stream count"))?;

    let env_steps = r.u64()?;
    let grad_steps = r.u64()?;
    let scrubs = r.u64()?;
    let resets = r.u64()?;
    let episode_return = r.f64()?;
    let episode_returns = r.f64s()?;

    let env = match r.u8()? {
        0 => Env::Pendulum(Pendulum {
            state: PendulumState {
                theta: r.f64()?,
                theta_dot: r.f64()?,
            },
            steps: r.u64()? as usize,
        }),
        1 => {
            let position = [r.f64()?, r.f64()?];
            let goal = [r.f64()?, r.f64()?];
            let episodes_elapsed = r.u64()? as usize;
            Env::ShiftingGoal(ShiftingGoal {
                state: ShiftingGoalState {
                    position,
                    goal,
                    episodes_elapsed,
                },
                shift_episode: r.u64()? as usize,
                shifted: r.bool()?,
                steps: r.u64()? as usize,
            })
        }
        _ => return Err(corrupt("unknown environment")),
    };

    let capacity = r.u64()? as usize;
    let cursor = r.u64()? as usize;
    let stored = r.len(1)?;
    let mut storage = Vec::with_capacity(stored);
    for _ in 0..stored {
        storage.push(Transition {
            obs: r.f64s()?,
            action: r.f64s()?,
            reward: r.f64()?,
            next_obs: r.f64s()?,
            done: r.bool()?,
        });
    }
    let buffer = ReplayBuffer::from_parts(capacity, storage, cursor)?;

    let mut snap = || -> Result<WeightSnapshot> {
        let step = r.u64()?;
        WeightSnapshot::new(step, r.f64s()?)
    };
    let snapshots = [snap()?, snap()?];
    let n_evals = r.len(16)?;
    let mut evals = Vec::with_capacity(n_evals);
    for _ in 0..n_evals {
        evals.push(EvalRecord {
            step: r.u64()?,
            returns: r.f64s()?,
        });
    }
    let n_rows = r.len(80)?;
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let step = r.u64()?;
        let mut f = [0.0; 9];
        for v in &mut f {
            *v = r.f64()?;
        }
        rows.push(LogRow::from_fields(step, f));
    }
    let elapsed_ms = r.f64()?;
    if !r.buf.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    Ok((
        cfg,
        TrainerState {
            agent,
            buffer,
            env,
            streams,
            env_steps,
            grad_steps,
            scrubs,
            resets,
            episode_return,
            episode_returns,
            evals,
            snapshots,
            log: RunLog { rows },
            elapsed_ms,
        },
    ))
}

pub fn save_checkpoint(cfg: &RunConfig, state: &TrainerState, path: &Path) -> Result<()> {
    write_atomic(path, &encode(cfg, state)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, TrainerState)> {
    decode(&std::fs::read(path)?)
}
