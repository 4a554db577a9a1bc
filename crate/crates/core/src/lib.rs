//! Fisher-guided selective forgetting for off-policy actor-critic agents.
//!
//! The crate is a small, self-contained laboratory: soft actor-critic on
//! closed-form control tasks, Fisher information estimators (dense, diagonal,
//! KFAC and EKFAC), Fisher-shaped weight scrubbing with its baselines
//! (Gaussian noise, periodic reset), and detection of the primacy-bias
//! pattern in logged Fisher traces.

pub mod error;
pub mod env;
pub mod fim;
pub mod harness;
pub mod metrics;
pub mod ndmath;
pub mod nets;
pub mod pbdetect;
pub mod sac;

pub use error::{Error, Result};
