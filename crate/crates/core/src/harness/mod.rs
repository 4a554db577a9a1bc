//! Experiment orchestration: configuration, the training loop with its
//! forgetting methods, CSV logs, checkpoints, sweeps and log analysis.

mod analyze;
mod checkpoint;
mod config;
mod log;
mod streams;
mod sweep;
mod train;

pub use analyze::{analyze_log, analyze_run_log, LogAnalysis, ReturnStat};
pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use config::{default_env_steps, Method, RunConfig};
pub use log::{write_atomic, LogRow, RunLog, CSV_HEADER};
pub use streams::{Stream, StreamState, Streams};
pub use sweep::{sweep, SweepAxis, SweepCell, SweepReport, SweepRun, SUMMARY_FILE};
pub use train::{
    mean_std, run_training, EvalRecord, RunOutcome, RunResult, Trainer, TrainerState,
    CHECKPOINT_FILE, CONFIG_FILE, CSV_FILE, FINAL_EPISODES, FINAL_EVAL_EPISODES, RESULT_FILE,
};
