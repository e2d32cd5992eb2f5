//! Survival model fitting and time-by-predictor contour surfaces.
//!
//! Fit a model to right-censored (optionally competing-risks) data, then hold
//! the adjusters fixed and sweep one continuous predictor to obtain a matrix of
//! predicted survival or cumulative incidence over time.

pub mod bootstrap;
pub mod competing;
pub mod contour;
pub mod cox;
pub mod curve;
pub mod data;
pub mod design;
pub mod error;
pub mod metrics;
pub mod newton;
pub mod nonparametric;
pub mod parametric;
pub mod registry;
pub mod rsf;

pub use error::{Error, Result};
