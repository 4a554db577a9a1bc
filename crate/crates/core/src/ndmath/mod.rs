//! Dense linear algebra and per-sample backpropagation for fixed-shape MLPs.

mod eigen;
mod matrix;
mod mlp;

pub use eigen::{sym_eigen, SymEigen};
pub(crate) use eigen::clamp_psd;
pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix};
pub use mlp::{
    augment, finite_diff_check, Activation, Dense, ForwardPass, GradCheck, LayerCache,
    LayerGrads, Mlp, PerSampleGrads,
};
