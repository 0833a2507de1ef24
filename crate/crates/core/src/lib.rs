//! Structure-space Bayesian optimization driven by a generative prior.
//!
//! A pre-trained decoder maps Gaussian latent codes to discrete structures.
//! Instead of fitting a surrogate in latent space, a Tanimoto-kernel Gaussian
//! process is fitted on the evaluated structures themselves, and new batches
//! are drawn from the decoder's prior conditioned on the GP predicting an
//! improvement over the incumbent. The conditioned latent distribution is
//! sampled with an adaptive preconditioned Crank–Nicolson (PCN) chain.
//!
//! A latent-space BO baseline with a clipped search box and a random-search
//! control are included for comparison, together with geometry diagnostics
//! for high-dimensional Gaussian priors.

pub mod config;
pub mod decoder;
pub mod diagnostics;
pub mod error;
pub mod normal;
pub mod objectives;
pub mod optimizer;
pub mod parallel;
pub mod pcn;
pub mod rng;
mod search;
pub mod tanimoto_gp;
pub mod trace;
pub mod types;
pub mod validation;

pub use error::{Error, Result};
pub use types::{dataset_best, Dataset, Evaluation, Fingerprint, LatentVector, Structure};
