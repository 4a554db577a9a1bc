//! Fisher information estimates and the weight-modification operators built
//! on them.
//!
//! Scores are kept in the factored per-layer form produced by
//! backpropagation, so the diagonal, KFAC and EKFAC estimators never
//! materialize a per-sample gradient.

mod estimate;
mod scores;
mod scrub;

pub use estimate::{
    ekfac_estimate, empirical_fim_diag, empirical_fim_full, estimate, fim_trace,
    inv_quarter_root_apply, kfac_estimate, EkfacLayer, Estimator, FimEstimate, KfacFactors,
    DENSE_PARAM_LIMIT, PSD_TOLERANCE,
};
pub use scores::{
    actor_scores, critic_scores, critic_scores_from_jacobians, q_jacobians, ScoreBatch,
};
pub use scrub::{
    fgsf_scrub, gaussian_scrub, periodic_reset, reset_due, ScrubConfig, ScrubTarget,
    GAUSSIAN_SCRUB_SCALE,
};
