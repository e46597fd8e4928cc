//! Centered purely random forests and simultaneous confidence bands.
//!
//! The crate is organized bottom-up:
//!
//! * [`partition`]: dyadic cells, split rules and closeness vectors.
//! * [`forest`]: trees and the subsampled forest estimator.
//! * [`gpcov`]: covariance of the limiting Gaussian process and supremum quantiles.
//! * [`bands`]: variance and noise estimates, band construction and coverage.
//! * [`simlab`]: data generation and coverage experiments.

pub mod bands;
pub mod error;
pub mod forest;
pub mod gpcov;
pub mod io;
pub mod kernel;
pub mod partition;
pub mod points;
pub mod rng;
pub mod simlab;

pub use error::{Error, Result};
pub use forest::{fit_forest, FittedForest, ForestConfig, SubsampleMode, TrainingSample};
pub use gpcov::{approximate_covariance, CovTable, GpQuantiles};
pub use partition::{EhrenfestConfig, SplitRule};
pub use points::PointSet;
