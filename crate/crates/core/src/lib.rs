//! Partition-aware CNN post-processing and adaptive model switching for
//! block-transform-coded frames.
//!
//! The crate bundles a toy quadtree/DCT codec, partition masks, a small CPU
//! neural-network engine, the model variants built on it, the adaptive-switching
//! bank with its training loop and flag signaling, and PSNR / BD-rate metrics.

pub mod codec;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod models;
pub mod nn;

pub use codec::{FramePlane, PartitionMap, QpConfig, RateEstimate};
pub use error::{Error, Result};
