//! Probabilistic accuracy analysis for answer-aggregation schemes and a
//! utility-driven router that assigns questions to reasoning methods.
//!
//! The crate is organized bottom-up:
//!
//! * [`distributions`] — answer/score models for a single generation setup,
//!   plus the standard normal CDF primitive everything downstream relies on.
//! * [`aggregation`] — aggregation rules (majority vote, score-sum, score-max),
//!   exact enumeration for small majority votes, and Monte Carlo win-probability
//!   estimation.
//! * [`bounds`] — closed-form lower/upper bounds on the probability that
//!   aggregation returns the correct answer, with the 1-D inner minimizations
//!   they require.
//! * [`dataset`] — method registries, per-question records, synthetic benchmark
//!   generation, and cost/utility arithmetic.
//! * [`router`] — a small MLP question embedder trained contrastively against
//!   learned method embeddings, with a bound-derived ratio regularizer.
//! * [`eval`] — routing policy evaluation, baselines, Pareto sweeps, and 2-D
//!   projections of the learned embedding space.

pub mod aggregation;
pub mod bounds;
pub mod dataset;
pub mod distributions;
mod error;
pub mod eval;
pub mod router;

pub use error::{Error, Result};
