//! HTTP facade over the survival contour engine: dataset upload, asynchronous
//! model fitting with polling, and retrieval of surfaces, quantile curves,
//! 3D data, metrics and the median-split Kaplan-Meier view.
//!
//! Every payload is the engine's own JSON serialization.

pub mod api;
pub mod config;
pub mod store;

pub use api::router;
pub use config::Config;
pub use store::AppState;
