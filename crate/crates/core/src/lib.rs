//! Factor-augmented feature learning.
//!
//! The crate turns a feature panel into an augmented design in four steps:
//! nonlinear transformations of the raw features, latent factor recovery
//! from the transformed panel, decorrelation of the idiosyncratic residual,
//! and assembly of the blocks into one design for a downstream learner.
//! Around that core sit decorrelated variable screening, rolling
//! out-of-sample evaluation, and finance tooling (sentiment scores, event
//! studies, portfolio backtests).
//!
//! Entry points:
//! - [`pipeline::run_pipeline`] drives the whole evaluation from a config.
//! - [`factors`] and [`augment`] expose the individual building blocks.
//! - [`finance`] consumes prediction scores and return panels.

pub mod augment;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod factors;
pub mod finance;
pub mod io;
pub mod learners;
pub mod linalg;
pub mod matrix;
pub mod pipeline;
pub mod screening;
pub mod synth;
pub mod transforms;

pub use error::{Error, Result};
pub use matrix::Matrix;
