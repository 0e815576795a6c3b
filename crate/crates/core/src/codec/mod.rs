//! Toy block-transform codec standing in for a real video encoder.
//!
//! Frames are split by a variance-driven quadtree into 8..64 blocks; every block is
//! transformed with an orthonormal DCT, uniformly quantized and reconstructed. Rate is a
//! zeroth-order entropy estimate. The output is not bitstream-compatible with any standard.

mod dct;
mod encode;
mod frame;
mod partition;
pub mod pgm;

pub use dct::{dct2d, idct2d};
pub use encode::{encode_decode, encode_with_partition, CodedFrame, QpConfig, RateEstimate};
pub use frame::FramePlane;
pub use partition::{partition_frame, Block, PartitionMap, CTU_SIZE, DEFAULT_SPLIT_THRESHOLD, MIN_BLOCK};
