//! End-to-end learned low-latency video codec.
//!
//! The crate is organized around the coding pipeline: a small autodiff
//! tensor engine (`tensor`), inverse-flow warping and flow estimation
//! (`flow`), the P-frame coder network with its architecture variants
//! (`model`), bitplane + context-adaptive entropy coding (`coding`),
//! spatial rate control (`ratecontrol`), quality metrics (`metrics`),
//! the training loop (`training`), and R-D benchmarking (`bench`).

pub mod coding;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod tensor;

pub use error::{Error, Result};
