//! Training, evaluation and ensembling of multi-axis audio quality
//! predictors on precomputed embeddings.

pub mod axes;
pub mod data;
pub mod ensemble;
pub mod error;
mod fsio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod training;

pub use axes::{Axis, AxisScores};
pub use error::{Error, ErrorClass, Result};
pub use fsio::write_atomic;
pub use par::Exec;
