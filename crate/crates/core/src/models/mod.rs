//! Network variants assembled from the nn primitives, with training and inference.
//!
//! Every variant predicts a residual that is added to the decoded frame; inference
//! clamps the result to the valid sample range.

mod build;
mod config;
mod infer;
mod train;

pub use build::{architecture, build_model, model_config, output_layer, zero_output_layer, OUTPUT_INIT_SCALE};
pub use config::{Depth, FusionStrategy, ModelConfig, DEFAULT_RESIDUAL_BLOCKS};
pub use infer::{
    enhance_frame, enhance_pairs, enhance_patches, frame_patch_masks, frames_to_tensor, masks_to_tensor, model_mask,
    postprocess_patch, tensor_to_frames,
};
pub use train::{fine_tune_from, train, train_new};

#[cfg(test)]
mod tests;
