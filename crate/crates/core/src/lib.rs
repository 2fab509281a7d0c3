//! Best-choice rerandomization toolkit.
//!
//! Designs two-arm experiments by drawing `T` complete randomizations and
//! keeping the one with the smallest Mahalanobis covariate imbalance, and
//! analyzes them with variance-reduced confidence intervals built from the
//! constrained-Gaussian limit of the difference-in-means estimator. A
//! simulation harness replays the full design + inference pipeline to check
//! bias, RMSE, coverage and interval length against theory.

pub mod design;
pub mod dist;
pub mod error;
pub mod inference;
pub mod io;
pub mod par;
pub mod population;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
