use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::{Method, RunConfig};
use super::log::write_atomic;
use super::train::{mean_std, run_training, RunResult};
use crate::error::{Error, Result};
use crate::fim::ScrubTarget;

pub const SUMMARY_FILE: &str = "summary.txt";

/// One swept hyperparameter and its grid.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Lambda(Vec<f64>),
    ReplayRatio(Vec<u64>),
    Target(Vec<ScrubTarget>),
}

impl SweepAxis {
    /// Parses an axis name and a comma-separated value list.
    pub fn parse(name: &str, values: &str) -> Result<Self> {
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let bad = |v: &str| Error::InvalidConfig(format!("bad {name} value {v:?}"));
        let axis = match name {
            "lambda" => Self::Lambda(
                items
                    .iter()
                    .map(|v| v.parse::<f64>().ok().filter(|x| *x >= 0.0 && x.is_finite()).ok_or_else(|| bad(v)))
                    .collect::<Result<_>>()?,
            ),
            "replay_ratio" => Self::ReplayRatio(
                items
                    .iter()
                    .map(|v| v.parse::<u64>().ok().filter(|x| *x >= 1).ok_or_else(|| bad(v)))
                    .collect::<Result<_>>()?,
            ),
            "target" => Self::Target(
                items
                    .iter()
                    .map(|v| ScrubTarget::parse(v).ok_or_else(|| bad(v)))
                    .collect::<Result<_>>()?,
            ),
            other => return Err(Error::InvalidConfig(format!("unknown sweep axis {other:?}"))),
        };
        if axis.len() == 0 {
            return Err(Error::InvalidConfig(format!("sweep axis {name} has no values")));
        }
        Ok(axis)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Lambda(_) => "lambda",
            Self::ReplayRatio(_) => "replay_ratio",
            Self::Target(_) => "target",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Lambda(v) => v.len(),
            Self::ReplayRatio(v) => v.len(),
            Self::Target(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> String {
        match self {
            Self::Lambda(v) => format!("{:e}", v[i]),
            Self::ReplayRatio(v) => v[i].to_string(),
            Self::Target(v) => v[i].name().to_string(),
        }
    }

    /// Sets value `i` on `cfg`. The scrub axes imply the Fisher method.
    pub fn apply(&self, cfg: &mut RunConfig, i: usize) {
        match self {
            Self::Lambda(v) => {
                cfg.scrub.lambda = v[i];
                cfg.method = Method::Fgsf;
            }
            Self::ReplayRatio(v) => cfg.sac.replay_ratio = v[i],
            Self::Target(v) => {
                cfg.scrub.target = v[i];
                if cfg.method == Method::Baseline {
                    cfg.method = Method::Fgsf;
                }
            }
        }
    }
}

/// Outcome of one (value, seed) run.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub seed: u64,
    pub outcome: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub label: String,
    pub runs: Vec<SweepRun>,
}

impl SweepCell {
    /// Final returns of the runs that succeeded.
    pub fn finals(&self) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok()?.final_return_mean)
            .collect()
    }

    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Mean and standard deviation over seeds of each run's final return.
    pub fn stat(&self) -> Option<(f64, f64)> {
        mean_std(&self.finals())
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub axis: String,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>24} {:>6} {:>6}", self.axis, "final_return", "ok", "failed");
        for c in &self.cells {
            let stat = match c.stat() {
                Some((m, s)) => format!("{m:.3} ± {s:.3}"),
                None => "failed".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<14} {:>24} {:>6} {:>6}",
                c.label,
                stat,
                c.runs.len() - c.failed(),
                c.failed()
            );
        }
        out
    }
}

/// One run per (value, seed) under `base.output_dir/<axis>_<value>/seed_<seed>`,
/// then `summary.txt` in `base.output_dir`. Failed runs are recorded, not
/// propagated.
pub fn sweep(base: &RunConfig, axis: &SweepAxis, seeds: &[u64]) -> Result<SweepReport> {
    if axis.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep needs values and seeds".into()));
    }
    let mut jobs = Vec::with_capacity(axis.len() * seeds.len());
    for i in 0..axis.len() {
        for &seed in seeds {
            let mut cfg = base.clone();
            axis.apply(&mut cfg, i);
            cfg.seed = seed;
            cfg.output_dir = base
                .output_dir
                .join(format!("{}_{}", axis.name(), axis.label(i)))
                .join(format!("seed_{seed}"));
            cfg.validate()?;
            jobs.push((i, cfg));
        }
    }

    let results: Mutex<Vec<Option<SweepRun>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, cfg)) = jobs.get(k) else { break };
                let outcome = run_training(cfg).map(|o| o.result).map_err(|e| e.to_string());
                results.lock().unwrap()[k] = Some(SweepRun {
                    seed: cfg.seed,
                    outcome,
                });
            });
        }
    });

    let results = results.into_inner().unwrap();
    let mut cells: Vec<SweepCell> = (0..axis.len())
        .map(|i| SweepCell {
            label: axis.label(i),
            runs: Vec::new(),
        })
        .collect();
    for ((i, _), run) in jobs.iter().zip(results) {
        cells[*i].runs.push(run.expect("every job ran"));
    }
    let report = SweepReport {
        axis: axis.name().to_string(),
        cells,
    };
    std::fs::create_dir_all(&base.output_dir)?;
    write_atomic(&base.output_dir.join(SUMMARY_FILE), report.render().as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_axes() {
        assert_eq!(
            SweepAxis::parse("lambda", "5e-6, 5e-7,5e-8").unwrap(),
            SweepAxis::Lambda(vec![5e-6, 5e-7, 5e-8])
        );
        assert_eq!(
            SweepAxis::parse("replay_ratio", "1,2,4").unwrap(),
            SweepAxis::ReplayRatio(vec![1, 2, 4])
        );
        assert_eq!(
            SweepAxis::parse("target", "actor,critic,both").unwrap(),
            SweepAxis::Target(vec![ScrubTarget::ActorOnly, ScrubTarget::CriticOnly, ScrubTarget::Both])
        );
        assert!(SweepAxis::parse("lambda", "-1").is_err());
        assert!(SweepAxis::parse("replay_ratio", "0").is_err());
        assert!(SweepAxis::parse("gamma", "0.9").is_err());
        assert!(SweepAxis::parse("lambda", "").is_err());
    }

    #[test]
    fn duplicated_runs_have_zero_spread() {
        let result = RunResult {
            env: "pendulum".into(),
            method: "baseline".into(),
            seed: 0,
            env_steps: 1,
            grad_steps: 0,
            scrubs: 0,
            resets: 0,
            episodes: 1,
            final_return_mean: Some(-321.5),
            final_return_std: Some(0.0),
            final_eval_mean: None,
            peak_tr_f_actor: None,
            peak_tr_f_critic: None,
            evals: vec![],
        };
        let cell = SweepCell {
            label: "x".into(),
            runs: (0..3)
                .map(|_| SweepRun {
                    seed: 0,
                    outcome: Ok(result.clone()),
                })
                .collect(),
        };
        assert_eq!(cell.stat(), Some((-321.5, 0.0)));
    }

    #[test]
    fn failures_are_counted() {
        let cell = SweepCell {
            label: "x".into(),
            runs: vec![SweepRun {
                seed: 1,
                outcome: Err("boom".into()),
            }],
        };
        assert_eq!(cell.failed(), 1);
        assert_eq!(cell.stat(), None);
    }
}
