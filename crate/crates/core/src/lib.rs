//! Multi-category virtual try-on.

#[cfg(feature = "nn")]
pub mod adversarial;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod metrics;
#[cfg(feature = "nn")]
pub mod nn;
#[cfg(feature = "nn")]
pub mod parsing;
#[cfg(feature = "nn")]
pub mod pipeline;
#[cfg(feature = "nn")]
pub mod synthesis;

pub use error::{Error, Result};
