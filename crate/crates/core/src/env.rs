//! Closed-form continuous-control tasks with seedable, deterministic dynamics.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum,
    ShiftingGoal,
}

impl EnvKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "pendulum" => Ok(EnvKind::Pendulum),
            "shifting_goal" => Ok(EnvKind::ShiftingGoal),
            other => Err(Error::InvalidConfig(format!("unknown environment {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::ShiftingGoal => "shifting_goal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Episode over (time limit reached).
    pub done: bool,
    /// The new state is absorbing. Neither task has absorbing states, so time
    /// limits never cut off bootstrapping.
    pub terminal: bool,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    x - 2.0 * PI * ((x - PI) / (2.0 * PI)).ceil()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

pub const PENDULUM_GRAVITY: f64 = 10.0;
pub const PENDULUM_MASS: f64 = 1.0;
pub const PENDULUM_LENGTH: f64 = 1.0;
pub const PENDULUM_DT: f64 = 0.05;
pub const PENDULUM_MAX_TORQUE: f64 = 2.0;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const PENDULUM_HORIZON: usize = 200;

/// Swing-up cost of being in `state` while applying torque `torque`.
pub fn pendulum_reward(state: PendulumState, torque: f64) -> f64 {
    let th = wrap_angle(state.theta);
    -(th * th + 0.1 * state.theta_dot * state.theta_dot + 0.001 * torque * torque)
}

/// One semi-implicit Euler step under `torque`.
pub fn pendulum_dynamics(state: PendulumState, torque: f64) -> PendulumState {
    let (g, m, l, dt) = (PENDULUM_GRAVITY, PENDULUM_MASS, PENDULUM_LENGTH, PENDULUM_DT);
    let accel = 3.0 * g / (2.0 * l) * state.theta.sin() + 3.0 * torque / (m * l * l);
    let theta_dot =
        (state.theta_dot + accel * dt).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
    PendulumState {
        theta: wrap_angle(state.theta + theta_dot * dt),
        theta_dot,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub state: PendulumState,
    pub steps: usize,
}

impl Pendulum {
    pub const OBS_DIM: usize = 3;
    pub const ACT_DIM: usize = 1;

    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut p = Pendulum {
            state: PendulumState {
                theta: 0.0,
                theta_dot: 0.0,
            },
            steps: 0,
        };
        p.reset(rng);
        p
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        // (-π, π]: reflect the half-open sample so π is reachable and -π is not.
        let theta = -rng.random_range(-PI..PI);
        let theta_dot = rng.random_range(-1.0..1.0);
        self.state = PendulumState { theta, theta_dot };
        self.steps = 0;
        self.state.observation()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = single_action(action, Self::ACT_DIM)?[0];
        let torque = PENDULUM_MAX_TORQUE * a.clamp(-1.0, 1.0);
        let reward = pendulum_reward(self.state, torque);
        self.state = pendulum_dynamics(self.state, torque);
        self.steps += 1;
        Ok(StepResult {
            observation: self.state.observation(),
            reward,
            done: self.steps >= PENDULUM_HORIZON,
            terminal: false,
        })
    }
}

pub const SHIFTING_GOAL_HORIZON: usize = 100;
pub const SHIFTING_GOAL_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftingGoalState {
    pub position: [f64; 2],
    pub goal: [f64; 2],
    pub episodes_elapsed: usize,
}

/// Point mass that must reach a goal; after `shift_episode` completed
/// episodes the goal jumps to the reflected quadrant, so early experience
/// becomes actively misleading.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftingGoal {
    pub state: ShiftingGoalState,
    pub shift_episode: usize,
    pub shifted: bool,
    pub steps: usize,
}

impl ShiftingGoal {
    pub const OBS_DIM: usize = 4;
    pub const ACT_DIM: usize = 2;
    pub const DEFAULT_SHIFT_EPISODE: usize = 50;
    pub const INITIAL_GOAL: [f64; 2] = [0.7, 0.7];

    pub fn new<R: Rng + ?Sized>(shift_episode: usize, rng: &mut R) -> Self {
        let mut env = ShiftingGoal {
            state: ShiftingGoalState {
                position: [0.0, 0.0],
                goal: Self::INITIAL_GOAL,
                episodes_elapsed: 0,
            },
            shift_episode,
            shifted: false,
            steps: 0,
        };
        env.reset(rng);
        env
    }

    pub fn observation(&self) -> Vec<f64> {
        let s = &self.state;
        vec![s.position[0], s.position[1], s.goal[0], s.goal[1]]
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        if !self.shifted && self.state.episodes_elapsed >= self.shift_episode {
            self.state.goal = [-self.state.goal[0], -self.state.goal[1]];
            self.shifted = true;
        }
        self.state.position = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        self.steps = 0;
        self.observation()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = single_action(action, Self::ACT_DIM)?;
        let s = &mut self.state;
        for d in 0..2 {
            s.position[d] =
                (s.position[d] + SHIFTING_GOAL_STEP * a[d].clamp(-1.0, 1.0)).clamp(-1.0, 1.0);
        }
        let dx = s.position[0] - s.goal[0];
        let dy = s.position[1] - s.goal[1];
        let reward = -(dx * dx + dy * dy).sqrt();
        self.steps += 1;
        let done = self.steps >= SHIFTING_GOAL_HORIZON;
        if done {
            s.episodes_elapsed += 1;
        }
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done,
            terminal: false,
        })
    }
}

fn single_action(action: &[f64], dim: usize) -> Result<&[f64]> {
    if action.len() != dim {
        return Err(Error::shape("env step", (action.len(), 1), (dim, 1)));
    }
    if !action.iter().all(|a| a.is_finite()) {
        return Err(Error::NonFinite("action".into()));
    }
    Ok(action)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Pendulum(Pendulum),
    ShiftingGoal(ShiftingGoal),
}

impl Env {
    pub fn new<R: Rng + ?Sized>(kind: EnvKind, rng: &mut R) -> Self {
        match kind {
            EnvKind::Pendulum => Env::Pendulum(Pendulum::new(rng)),
            EnvKind::ShiftingGoal => {
                Env::ShiftingGoal(ShiftingGoal::new(ShiftingGoal::DEFAULT_SHIFT_EPISODE, rng))
            }
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            Env::Pendulum(_) => EnvKind::Pendulum,
            Env::ShiftingGoal(_) => EnvKind::ShiftingGoal,
        }
    }

    pub fn obs_dim(&self) -> usize {
        dims(self.kind()).0
    }

    pub fn act_dim(&self) -> usize {
        dims(self.kind()).1
    }

    pub fn observation(&self) -> Vec<f64> {
        match self {
            Env::Pendulum(p) => p.state.observation(),
            Env::ShiftingGoal(s) => s.observation(),
        }
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        match self {
            Env::Pendulum(p) => p.reset(rng),
            Env::ShiftingGoal(s) => s.reset(rng),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        match self {
            Env::Pendulum(p) => p.step(action),
            Env::ShiftingGoal(s) => s.step(action),
        }
    }
}

/// `(observation dim, action dim)` of a task.
pub fn dims(kind: EnvKind) -> (usize, usize) {
    match kind {
        EnvKind::Pendulum => (Pendulum::OBS_DIM, Pendulum::ACT_DIM),
        EnvKind::ShiftingGoal => (ShiftingGoal::OBS_DIM, ShiftingGoal::ACT_DIM),
    }
}
