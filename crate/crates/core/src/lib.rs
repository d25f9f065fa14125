//! Generalized score-based diffusion toward `N(μ, Σ)` and a toy non-autoregressive
//! text-to-feature pipeline built on it.
//!
//! * [`schedule`]: noise schedule and closed-form conditional marginals
//! * [`diffusion`]: forward sampling, Euler–Maruyama reference paths, exact scores
//! * [`sampler`]: reverse SDE / probability-flow ODE sampling and ODE likelihoods
//! * [`scorenet`]: trainable per-frame score network, diffusion loss, Adam
//! * [`align`]: monotonic alignment search, durations, frame expansion
//! * [`tts`]: encoder, duration predictor and decoder trained jointly on a synthetic corpus
//! * [`cli`]: the `gradtts` command-line tool

pub mod align;
pub mod analytic;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod diffusion;
pub mod error;
pub mod io;
pub(crate) mod mlp;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod scorenet;
pub mod tts;

pub use error::{Error, Result};
pub use sampler::{SamplerConfig, SamplerMode, ScoreModel};
pub use schedule::{DiffusionSpec, NoiseSchedule};
