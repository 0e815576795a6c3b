use crate::codec::{FramePlane, PartitionMap};
use crate::error::{bail, Result};
use crate::mask::{gen_boundary_mask, gen_mean_mask, Mask, MaskKind};

/// Side of the square training and signaling unit.
pub const PATCH_SIZE: usize = 64;

/// Where a patch was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchSource {
    pub sequence: String,
    pub frame: usize,
    pub x: usize,
    pub y: usize,
}

/// A decoded/original patch pair with both partition masks.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub decoded: FramePlane,
    pub original: FramePlane,
    pub mask_mm: Mask,
    pub mask_bm: Mask,
    pub source: PatchSource,
    pub qp: u8,
    /// Bank member assigned during adaptive-switching training.
    pub label: Option<u8>,
}

impl PatchPair {
    pub fn mask(&self, kind: MaskKind) -> &Mask {
        match kind {
            MaskKind::Mean => &self.mask_mm,
            MaskKind::Boundary => &self.mask_bm,
        }
    }
}

/// Crops bottom and right edges to the largest multiples of [`PATCH_SIZE`].
pub fn crop_to_multiple(frame: &FramePlane) -> Result<FramePlane> {
    let w = frame.width() / PATCH_SIZE * PATCH_SIZE;
    let h = frame.height() / PATCH_SIZE * PATCH_SIZE;
    if w == 0 || h == 0 {
        bail!(Precondition, "frame {}x{} holds no full {PATCH_SIZE}x{PATCH_SIZE} patch", frame.width(), frame.height());
    }
    if w == frame.width() && h == frame.height() {
        return Ok(frame.clone());
    }
    FramePlane::new(w, h, frame.region(0, 0, w, h)?)
}

/// Top-left corners of the non-overlapping patch grid, in raster order.
pub fn patch_grid(width: usize, height: usize) -> Result<Vec<(usize, usize)>> {
    if !width.is_multiple_of(PATCH_SIZE) || !height.is_multiple_of(PATCH_SIZE) || width == 0 || height == 0 {
        bail!(Precondition, "frame {width}x{height} is not a multiple of {PATCH_SIZE}");
    }
    Ok((0..height / PATCH_SIZE)
        .flat_map(|py| (0..width / PATCH_SIZE).map(move |px| (px * PATCH_SIZE, py * PATCH_SIZE)))
        .collect())
}

/// Cuts a frame into raster-ordered patches.
pub fn split_frame(frame: &FramePlane) -> Result<Vec<FramePlane>> {
    patch_grid(frame.width(), frame.height())?
        .into_iter()
        .map(|(x, y)| FramePlane::new(PATCH_SIZE, PATCH_SIZE, frame.region(x, y, PATCH_SIZE, PATCH_SIZE)?))
        .collect()
}

/// Inverse of [`split_frame`].
pub fn assemble_frame(width: usize, height: usize, patches: &[FramePlane]) -> Result<FramePlane> {
    let grid = patch_grid(width, height)?;
    if grid.len() != patches.len() {
        bail!(Shape, "{width}x{height} frame needs {} patches, got {}", grid.len(), patches.len());
    }
    let mut out = FramePlane::filled(width, height, 0)?;
    for ((x, y), p) in grid.into_iter().zip(patches) {
        if p.width() != PATCH_SIZE || p.height() != PATCH_SIZE {
            bail!(Shape, "patch is {}x{}", p.width(), p.height());
        }
        out.put_region(x, y, PATCH_SIZE, PATCH_SIZE, p.samples())?;
    }
    Ok(out)
}

/// Masks of one patch, computed from the partition restricted to it.
pub fn patch_masks(decoded_patch: &FramePlane, partition: &PartitionMap, x: usize, y: usize) -> Result<(Mask, Mask)> {
    let local = partition.restrict(x, y, PATCH_SIZE, PATCH_SIZE)?;
    Ok((gen_mean_mask(decoded_patch, &local)?, gen_boundary_mask(&local)?))
}

/// Raster-ordered 64x64 patch pairs of one coded frame.
pub fn extract_patches(
    original: &FramePlane,
    decoded: &FramePlane,
    partition: &PartitionMap,
    qp: u8,
    sequence: &str,
    frame_index: usize,
) -> Result<Vec<PatchPair>> {
    if !original.same_dims(decoded) {
        bail!(Shape, "original and decoded frames differ in size");
    }
    if partition.frame_width() != decoded.width() || partition.frame_height() != decoded.height() {
        bail!(Shape, "partition does not describe the decoded frame");
    }
    let originals = split_frame(original)?;
    let decodeds = split_frame(decoded)?;
    let grid = patch_grid(decoded.width(), decoded.height())?;
    grid.into_iter()
        .zip(originals.into_iter().zip(decodeds))
        .map(|((x, y), (orig, dec))| {
            let (mask_mm, mask_bm) = patch_masks(&dec, partition, x, y)?;
            Ok(PatchPair {
                decoded: dec,
                original: orig,
                mask_mm,
                mask_bm,
                source: PatchSource { sequence: sequence.to_string(), frame: frame_index, x, y },
                qp,
                label: None,
            })
        })
        .collect()
}
