//! Bayesian estimation of election polling error.
//!
//! Three hierarchical models (static, linear-logit drift, reverse random
//! walk) are fit by a custom MCMC sampler. Closed-form posteriors in
//! [`oracle`] check the sampler, and [`simulate`] generates synthetic polls
//! with known truth.

// `!(x > 0.0)` is used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod domain;
pub mod error;
pub mod filter;
pub mod ingest;
pub mod models;
pub mod oracle;
pub mod par;
pub mod sampler;
pub mod simulate;

pub use domain::{filter_window, ContestId, ElectionContest, Poll, PollDataset, WindowConfig};
pub use error::{Error, Result};
pub use models::{FixedParams, HyperPriorConfig, LikelihoodMode, ModelFamily, ModelSpec};
pub use sampler::{fit, FitResult, SamplerConfig};
