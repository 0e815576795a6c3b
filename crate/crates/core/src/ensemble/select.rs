use super::bank::AsnBank;
use super::flags::FlagStream;
use super::refine::best_member;
use super::BANK_SIZE;
use crate::codec::{FramePlane, PartitionMap};
use crate::dataset::{assemble_frame, split_frame};
use crate::error::{bail, Result};
use crate::mask::Mask;
use crate::metrics::psnr;
use crate::models::{enhance_patches, frame_patch_masks};

/// Encoder-side outcome for one frame.
#[derive(Clone, Debug)]
pub struct FrameSelection {
    pub flags: FlagStream,
    /// Per patch (raster order), the PSNR of each member's output.
    pub member_psnr: Vec<[f64; BANK_SIZE]>,
    /// The frame assembled from each patch's selected output.
    pub mosaic: FramePlane,
}

fn check_partition(decoded: &FramePlane, partition: &PartitionMap) -> Result<()> {
    if partition.frame_width() != decoded.width() || partition.frame_height() != decoded.height() {
        bail!(
            Shape,
            "partition covers {}x{} but the frame is {}x{}",
            partition.frame_width(),
            partition.frame_height(),
            decoded.width(),
            decoded.height()
        );
    }
    Ok(())
}

fn frame_masks(bank: &AsnBank, decoded: &FramePlane, partition: &PartitionMap) -> Result<Vec<(Mask, Mask)>> {
    if bank.mask_kind()?.is_some() {
        frame_patch_masks(decoded, partition)
    } else {
        Ok(Vec::new())
    }
}

/// Picks, per 64x64 patch, the member whose output is closest to the original.
pub fn encode_select_flags(
    bank: &AsnBank,
    decoded: &FramePlane,
    original: &FramePlane,
    partition: &PartitionMap,
) -> Result<FrameSelection> {
    if !decoded.same_dims(original) {
        bail!(Shape, "decoded and original frames differ in size");
    }
    check_partition(decoded, partition)?;
    let patches = split_frame(decoded)?;
    let targets = split_frame(original)?;
    let masks = frame_masks(bank, decoded, partition)?;
    let refs: Vec<&FramePlane> = patches.iter().collect();
    let mrefs: Vec<(&Mask, &Mask)> = masks.iter().map(|(a, b)| (a, b)).collect();
    let outputs: Vec<Vec<FramePlane>> =
        bank.members().into_iter().map(|m| enhance_patches(m, &refs, &mrefs)).collect::<Result<_>>()?;
    let mut member_psnr = Vec::with_capacity(patches.len());
    let mut flags = Vec::with_capacity(patches.len());
    let mut chosen = Vec::with_capacity(patches.len());
    for (i, target) in targets.iter().enumerate() {
        let mut s = [0.0; BANK_SIZE];
        for (j, out) in outputs.iter().enumerate() {
            s[j] = psnr(&out[i], target)?;
        }
        let best = best_member(&s);
        flags.push(best as u8);
        chosen.push(outputs[best][i].clone());
        member_psnr.push(s);
    }
    Ok(FrameSelection {
        flags: FlagStream::new(flags)?,
        member_psnr,
        mosaic: assemble_frame(decoded.width(), decoded.height(), &chosen)?,
    })
}

/// Decoder side: restores each patch with the member its flag names.
pub fn decode_dispatch(
    bank: &AsnBank,
    decoded: &FramePlane,
    partition: &PartitionMap,
    flags: &FlagStream,
) -> Result<FramePlane> {
    check_partition(decoded, partition)?;
    let patches = split_frame(decoded)?;
    if flags.patch_count() != patches.len() {
        bail!(Precondition, "{} flags for {} patches", flags.patch_count(), patches.len());
    }
    let masks = frame_masks(bank, decoded, partition)?;
    let mut restored: Vec<Option<FramePlane>> = vec![None; patches.len()];
    for (j, model) in bank.members().into_iter().enumerate() {
        let idx: Vec<usize> = (0..patches.len()).filter(|&i| flags.flags()[i] as usize == j).collect();
        if idx.is_empty() {
            continue;
        }
        let refs: Vec<&FramePlane> = idx.iter().map(|&i| &patches[i]).collect();
        let mrefs: Vec<(&Mask, &Mask)> =
            if masks.is_empty() { Vec::new() } else { idx.iter().map(|&i| (&masks[i].0, &masks[i].1)).collect() };
        for (i, out) in idx.into_iter().zip(enhance_patches(model, &refs, &mrefs)?) {
            restored[i] = Some(out);
        }
    }
    let restored: Vec<FramePlane> = restored.into_iter().map(|p| p.expect("every flag names a member")).collect();
    assemble_frame(decoded.width(), decoded.height(), &restored)
}
