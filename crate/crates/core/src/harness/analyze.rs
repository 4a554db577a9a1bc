use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::log::RunLog;
use super::train::{mean_std, FINAL_EPISODES};
use crate::error::Result;
use crate::pbdetect::{classify_phases, PhaseInterval, PhaseReport, PhaseThresholds, SavGolSpec, TraceSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogAnalysis {
    pub rows: usize,
    pub actor: PhaseReport,
    pub critic: PhaseReport,
    /// Either network shows the pattern.
    pub pb_detected: bool,
    /// Over the last 100 finite logged episode returns.
    pub final_return: Option<ReturnStat>,
}

fn trace_series(log: &RunLog, pick: impl Fn(&super::log::LogRow) -> f64) -> Result<TraceSeries> {
    let (steps, values): (Vec<u64>, Vec<f64>) = log
        .rows
        .iter()
        .map(|r| (r.step, pick(r)))
        .filter(|(_, v)| v.is_finite())
        .unzip();
    TraceSeries::new(steps, values)
}

pub fn analyze_run_log(
    log: &RunLog,
    spec: &SavGolSpec,
    thresholds: &PhaseThresholds,
) -> Result<LogAnalysis> {
    let actor = classify_phases(&trace_series(log, |r| r.tr_f_actor)?, spec, thresholds)?;
    let critic = classify_phases(&trace_series(log, |r| r.tr_f_critic)?, spec, thresholds)?;
    let returns: Vec<f64> = log
        .rows
        .iter()
        .map(|r| r.episode_return)
        .filter(|v| v.is_finite())
        .collect();
    let tail = &returns[returns.len().saturating_sub(FINAL_EPISODES)..];
    let final_return = mean_std(tail).map(|(mean, std)| ReturnStat {
        mean,
        std,
        count: tail.len(),
    });
    Ok(LogAnalysis {
        rows: log.rows.len(),
        pb_detected: actor.pb_detected || critic.pb_detected,
        actor,
        critic,
        final_return,
    })
}

/// Reads a run log and classifies both trace columns.
pub fn analyze_log(
    csv_path: &Path,
    spec: &SavGolSpec,
    thresholds: &PhaseThresholds,
) -> Result<LogAnalysis> {
    analyze_run_log(&RunLog::read(csv_path)?, spec, thresholds)
}

fn interval(p: &Option<PhaseInterval>) -> String {
    match p {
        Some(p) => format!("steps {}..={} ({} samples)", p.start_step, p.end_step, p.len()),
        None => "none".to_string(),
    }
}

impl LogAnalysis {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rows: {}", self.rows);
        for (name, r) in [("actor", &self.actor), ("critic", &self.critic)] {
            let _ = writeln!(out, "[{name}]");
            let _ = writeln!(out, "  pb_detected: {}", r.pb_detected);
            let _ = writeln!(out, "  peak: step {} value {:.6e}", r.peak_step, r.peak_value);
            let _ = writeln!(out, "  plateau: {:.6e}", r.plateau_value);
            let _ = writeln!(out, "  memorization: {}", interval(&r.memorization));
            let _ = writeln!(out, "  reorganization: {}", interval(&r.reorganization));
        }
        let _ = writeln!(out, "primacy_bias: {}", self.pb_detected);
        match &self.final_return {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "final_return: {:.3} ± {:.3} over {} episodes",
                    s.mean, s.std, s.count
                );
            }
            None => {
                let _ = writeln!(out, "final_return: none");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::harness::log::LogRow;

    fn log_with(traces: impl Fn(usize) -> f64, n: usize) -> RunLog {
        RunLog {
            rows: (0..n)
                .map(|i| LogRow {
                    step: 100 * (i as u64 + 1),
                    episode_return: -1000.0 + i as f64,
                    tr_f_actor: traces(i),
                    tr_f_critic: 5.0,
                    dormant_actor: 0.0,
                    dormant_critic: 0.0,
                    kl_actor: 0.0,
                    kl_critic: 0.0,
                    alpha: 0.1,
                    wall_ms: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn injected_rise_fall_is_detected() {
        let log = log_with(|i| 1e5 * (i + 1) as f64 * (-((i + 1) as f64) / 60.0).exp(), 400);
        let a = analyze_run_log(&log, &SavGolSpec::default(), &PhaseThresholds::default()).unwrap();
        assert!(a.actor.pb_detected);
        assert!(!a.critic.pb_detected);
        assert!(a.pb_detected);
        let f = a.final_return.unwrap();
        assert_eq!(f.count, 100);
        assert!((f.mean - (-1000.0 + 349.5)).abs() < 1e-9);
        assert!(a.render().contains("primacy_bias: true"));
    }

    #[test]
    fn constant_traces_are_not_detected() {
        let log = log_with(|_| 3.0, 300);
        let a = analyze_run_log(&log, &SavGolSpec::default(), &PhaseThresholds::default()).unwrap();
        assert!(!a.pb_detected);
    }

    #[test]
    fn fifty_rows_are_too_short() {
        let log = log_with(|_| 3.0, 50);
        assert!(matches!(
            analyze_run_log(&log, &SavGolSpec::default(), &PhaseThresholds::default()),
            Err(Error::SeriesTooShort { len: 50, .. })
        ));
    }
}
