use rayon::prelude::*;

use super::build::model_config;
use crate::codec::{FramePlane, PartitionMap};
use crate::dataset::{assemble_frame, patch_masks, split_frame, PatchPair, PATCH_SIZE};
use crate::error::{bail, Result};
use crate::mask::{Mask, MaskKind};
use crate::nn::{ModelWeights, Shape, Tensor};

/// Patches per inference batch; results do not depend on it.
const INFER_BATCH: usize = 8;

/// Stacks 8-bit rasters into an `(n, 1, h, w)` tensor scaled to `[0, 1]`.
pub fn frames_to_tensor(frames: &[&FramePlane]) -> Result<Tensor> {
    let Some(first) = frames.first() else {
        bail!(Precondition, "no frames to convert");
    };
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(frames.len() * w * h);
    for f in frames {
        if f.width() != w || f.height() != h {
            bail!(Shape, "frames in one tensor must share dimensions");
        }
        data.extend(f.samples().iter().map(|&v| v as f32 / 255.0));
    }
    Tensor::from_vec(Shape::new(frames.len(), 1, h, w), data)
}

pub fn masks_to_tensor(masks: &[&Mask]) -> Result<Tensor> {
    let Some(first) = masks.first() else {
        bail!(Precondition, "no masks to convert");
    };
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(masks.len() * w * h);
    for m in masks {
        if m.width() != w || m.height() != h {
            bail!(Shape, "masks in one tensor must share dimensions");
        }
        data.extend_from_slice(m.values());
    }
    Tensor::from_vec(Shape::new(masks.len(), 1, h, w), data)
}

/// Rounds each single-channel item of `t` (values in `[0, 1]`) back to 8 bits.
pub fn tensor_to_frames(t: &Tensor) -> Result<Vec<FramePlane>> {
    let s = t.shape();
    if s.c != 1 {
        bail!(Shape, "expected single-channel output, got {s}");
    }
    (0..s.n)
        .map(|i| {
            FramePlane::new(s.w, s.h, t.item(i).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect())
        })
        .collect()
}

/// Inference-mode forward pass with the output clamped to `[0, 1]`.
pub fn postprocess_patch(model: &ModelWeights, patch: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let s = patch.shape();
    if s.c != 1 || s.h != PATCH_SIZE || s.w != PATCH_SIZE {
        bail!(Shape, "patch tensor must be (n, 1, {PATCH_SIZE}, {PATCH_SIZE}), got {s}");
    }
    let mut out = model.forward(patch, mask)?;
    for v in out.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// The mask a model consumes, read from its recorded configuration.
pub fn model_mask(model: &ModelWeights) -> Result<Option<MaskKind>> {
    if !model.architecture().fusion.uses_mask() {
        return Ok(None);
    }
    Ok(model_config(model)?.mask())
}

/// Restores decoded patches with `model`, in input order.
pub fn enhance_patches(
    model: &ModelWeights,
    decoded: &[&FramePlane],
    masks: &[(&Mask, &Mask)],
) -> Result<Vec<FramePlane>> {
    let kind = model_mask(model)?;
    if kind.is_some() && masks.len() != decoded.len() {
        bail!(Precondition, "{} masks for {} patches", masks.len(), decoded.len());
    }
    let idx: Vec<usize> = (0..decoded.len()).collect();
    let chunks: Vec<Vec<FramePlane>> = idx
        .par_chunks(INFER_BATCH)
        .map(|chunk| {
            let frames: Vec<&FramePlane> = chunk.iter().map(|&i| decoded[i]).collect();
            let x = frames_to_tensor(&frames)?;
            let m = match kind {
                Some(k) => {
                    let ms: Vec<&Mask> = chunk
                        .iter()
                        .map(|&i| match k {
                            MaskKind::Mean => masks[i].0,
                            MaskKind::Boundary => masks[i].1,
                        })
                        .collect();
                    Some(masks_to_tensor(&ms)?)
                }
                None => None,
            };
            tensor_to_frames(&postprocess_patch(model, &x, m.as_ref())?)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Restores the decoded side of each patch pair.
pub fn enhance_pairs(model: &ModelWeights, pairs: &[PatchPair]) -> Result<Vec<FramePlane>> {
    let decoded: Vec<&FramePlane> = pairs.iter().map(|p| &p.decoded).collect();
    let masks: Vec<(&Mask, &Mask)> = pairs.iter().map(|p| (&p.mask_mm, &p.mask_bm)).collect();
    enhance_patches(model, &decoded, &masks)
}

/// Per-patch masks of a decoded frame, in raster order.
pub fn frame_patch_masks(decoded: &FramePlane, partition: &PartitionMap) -> Result<Vec<(Mask, Mask)>> {
    let patches = split_frame(decoded)?;
    crate::dataset::patch_grid(decoded.width(), decoded.height())?
        .into_iter()
        .zip(&patches)
        .map(|((x, y), p)| patch_masks(p, partition, x, y))
        .collect()
}

/// Post-processes a whole decoded frame patch by patch.
pub fn enhance_frame(model: &ModelWeights, decoded: &FramePlane, partition: &PartitionMap) -> Result<FramePlane> {
    let patches = split_frame(decoded)?;
    let masks = if model_mask(model)?.is_some() { frame_patch_masks(decoded, partition)? } else { Vec::new() };
    let refs: Vec<&FramePlane> = patches.iter().collect();
    let mrefs: Vec<(&Mask, &Mask)> = masks.iter().map(|(a, b)| (a, b)).collect();
    let out = enhance_patches(model, &refs, &mrefs)?;
    assemble_frame(decoded.width(), decoded.height(), &out)
}
