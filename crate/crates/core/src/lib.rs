//! Magnetometer-array aided inertial odometry.
//!
//! A strapdown INS is corrected by an error-state Kalman filter with a sliding
//! window of cloned poses. Each magnetic epoch fits a local curl- and
//! divergence-free field model over the array and uses it to predict what the
//! array read at the previous epoch; the mismatch observes velocity, attitude
//! and gyro bias. An optional constraint on the navigation-frame field vector
//! adds a second observation of the gyro bias.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod linalg;
pub mod magmodel;
pub mod measmodels;
pub mod msckf;
pub mod pipeline;
pub mod simworld;
pub mod strapdown;

use thiserror::Error;

/// Crate-level error, one variant per failing layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] magmodel::MagModelError),
    #[error(transparent)]
    Strapdown(#[from] strapdown::StrapdownError),
    #[error(transparent)]
    Filter(#[from] msckf::FilterError),
    #[error(transparent)]
    Measurement(#[from] measmodels::MeasError),
    #[error(transparent)]
    Sim(#[from] simworld::SimError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
