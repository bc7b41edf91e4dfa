//! Bilinear knowledge-graph scoring structures: algebra, symmetry features,
//! training, evaluation and structure search.

pub mod error;
pub mod experiment;
pub mod kg;
pub mod paths;
pub mod predictor;
pub mod scorer;
pub mod search;
pub mod srf;
pub mod structure;
pub mod train;

pub use error::{Error, Result};
