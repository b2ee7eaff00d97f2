//! Hidden Markov loss development model.
//!
//! Cumulative losses in each experience period develop through a volatile
//! *body* regime (chain-ladder link ratios) and a smooth *tail* regime
//! (generalised Bondy decay), with the regime treated as a latent two-state
//! Markov chain. This crate holds the pure algorithmic pieces:
//!
//! - [`triangle`]: loss triangles, train/test partitioning, link ratios
//! - [`model`]: parameter spaces, priors, densities, prior-predictive draws
//! - [`inference`]: forward filtering, Viterbi decoding, posterior sampling
//! - [`predict`]: posterior-predictive trajectories and one-step densities
//! - [`twostep`]: the fixed switch-point baseline
//! - [`metrics`]: ELPD, RMSE, paired differences and PIT values
//! - [`sbc`]: simulation-based calibration
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line and parallel drivers live in the `lossdev` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod inference;
pub mod math;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod rng;
pub mod sbc;
pub mod triangle;
pub mod twostep;

pub use inference::{
    forward_log_likelihood, sample_posterior, viterbi, ForwardResult, PosteriorDraws,
    SamplerConfig, StatePath,
};
pub use model::{
    EmissionParams, ParameterDraw, PriorConfig, State, TransitionParams, Variant,
};
pub use triangle::{Cell, Triangle, TriangleError};
