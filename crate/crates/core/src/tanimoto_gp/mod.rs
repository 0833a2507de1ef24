//! Exact Gaussian-process regression over count fingerprints with the
//! Tanimoto kernel, probability-of-improvement and Monte-Carlo batch EI.

mod kernel;
mod posterior;
mod qei;

pub use kernel::{gram, similarity_matrix, tanimoto, KernelParams};
pub use posterior::{fit, fit_inputs, GpPosterior, GpSettings, Prediction};
pub use qei::{dedup_canonical, qei_estimate, qei_greedy_select, BaseDraws, QeiEstimate};
