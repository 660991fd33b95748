//! Sampled-data Furuta pendulum simulation and data-driven spectral-submanifold
//! reduced-order models.

pub mod diagnostics;
pub mod dynamics;
pub mod embedding;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod parametric;
pub mod poly;
pub mod sim;

pub use error::{Error, Result};
