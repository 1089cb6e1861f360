//! Goodness-of-fit testing for the innovation distribution of GARCH and
//! ARMA–GARCH models.
//!
//! The test is built on a vector of weighted residual empirical processes
//! whose weights come from the scale-parameter derivatives of the
//! conditional variance. Under the null its supremum statistic converges to
//! the supremum norm of independent Gaussian processes whose covariance
//! depends only on the hypothesised law, so critical values can be tabulated
//! once per null family.
//!
//! Module map:
//! - [`errordist`]: null families, scores and Fisher constants.
//! - [`models`]: simulation, filtering, gradients and W-blocks.
//! - [`estimation`]: Gaussian QMLE, information matrix, one-step update.
//! - [`gof`]: the weighted process, the statistic, expansion diagnostics.
//! - [`limitproc`]: the limiting process and critical values.
//! - [`harness`]: experiments, single-series analysis and tabulation.

// `!(x < y)` is used on purpose so that NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod errordist;
pub mod estimation;
pub mod gof;
pub mod harness;
pub mod limitproc;
pub mod linalg;
pub mod models;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
pub use errordist::{Family, NullFamily};
pub use models::{InnovationLaw, ModelKind, ModelParams};
