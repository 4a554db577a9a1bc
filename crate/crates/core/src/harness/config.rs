use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::fim::ScrubConfig;
use crate::metrics::DormantSpec;
use crate::sac::SacConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Fgsf,
    Reset,
    Gauss,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "fgsf" => Ok(Self::Fgsf),
            "reset" => Ok(Self::Reset),
            "gauss" => Ok(Self::Gauss),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Fgsf => "fgsf",
            Self::Reset => "reset",
            Self::Gauss => "gauss",
        }
    }
}

/// Default run length per task, in environment steps.
pub fn default_env_steps(env: EnvKind) -> u64 {
    match env {
        EnvKind::Pendulum => 30_000,
        EnvKind::ShiftingGoal => 50_000,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub method: Method,
    pub seed: u64,
    /// Defaults per task when absent.
    pub total_env_steps: Option<u64>,
    /// Environment steps between evaluations.
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Gradient steps between log rows.
    pub log_every: u64,
    /// Gradient steps between resets; defaults to a fifth of all updates.
    pub reset_interval: Option<u64>,
    /// Environment steps between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    /// Records elapsed time in the log; off makes logs bitwise reproducible.
    pub wall_clock: bool,
    pub output_dir: PathBuf,
    pub sac: SacConfig,
    pub scrub: ScrubConfig,
    pub dormant: DormantSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Pendulum,
            method: Method::Baseline,
            seed: 0,
            total_env_steps: None,
            eval_every: 1000,
            eval_episodes: 5,
            log_every: 200,
            reset_interval: None,
            checkpoint_every: 0,
            wall_clock: true,
            output_dir: PathBuf::from("runs/default"),
            sac: SacConfig::default(),
            scrub: ScrubConfig::default(),
            dormant: DormantSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn env_steps(&self) -> u64 {
        self.total_env_steps.unwrap_or_else(|| default_env_steps(self.env))
    }

    /// Gradient steps between resets.
    pub fn reset_every(&self) -> u64 {
        self.reset_interval
            .unwrap_or_else(|| (self.env_steps() * self.sac.replay_ratio / 5).max(1))
    }

    /// Fills every defaulted field with its concrete value.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.total_env_steps = Some(self.env_steps());
        if c.method == Method::Reset {
            c.reset_interval = Some(self.reset_every());
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.env_steps() == 0 {
            return bad("total_env_steps must be positive");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        if self.reset_interval == Some(0) {
            return bad("reset_interval must be positive");
        }
        self.sac.validate()?;
        self.dormant.validate()?;
        if self.method != Method::Baseline {
            self.scrub.validate()?;
        }
        Ok(())
    }
}
