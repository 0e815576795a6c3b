//! Minimal deterministic CPU neural-network engine.
//!
//! Rank-4 f32 tensors, same-padded convolutions, batch normalization, ReLU, add/concat
//! fusion, MSE loss, SGD/Adam, a binary model format and a finite-difference checker.

pub mod gradcheck;
mod graph;
pub mod io;
pub mod ops;
mod optim;
pub mod reference;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Architecture, Fusion, InputGrads, LayerSpec, ModelWeights, Tape, RESIDUAL_CHANNELS};
pub use io::{decode_model, encode_model, load_model, save_model};
pub use optim::{Optimizer, OptimizerKind, TrainConfig};
pub use tensor::{Shape, Tensor};
