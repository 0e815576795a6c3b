//! Patch datasets built from original/decoded frame pairs.

mod manifest;
mod patches;
mod toy;

use rayon::prelude::*;

pub use manifest::{
    split_dataset, Dataset, DatasetManifest, ManifestEntry, Split, MANIFEST_FILE, SHARD_FILE, SHARD_MAGIC,
};
pub use patches::{
    assemble_frame, crop_to_multiple, extract_patches, patch_grid, patch_masks, split_frame, PatchPair, PatchSource,
    PATCH_SIZE,
};
pub use toy::{read_corpus, toy_corpus, write_corpus, Sequence, ToyCorpusConfig};

use crate::codec::{encode_decode, QpConfig};
use crate::error::Result;

/// Frame indices used when at most `limit` frames are taken from `count`: evenly spaced,
/// starting with the first frame.
pub fn select_frames(count: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < count => (0..k).map(|i| i * count / k).collect(),
        _ => (0..count).collect(),
    }
}

/// Crops, codes and cuts every selected frame of every sequence into patches.
///
/// Frames are processed in parallel; the patch order is sequence, frame, then raster.
pub fn build_dataset(
    corpus: &[Sequence],
    qp: u8,
    split_threshold: f64,
    frames_per_sequence: Option<usize>,
) -> Result<Dataset> {
    let qpc = QpConfig::new(qp)?;
    let jobs: Vec<(&Sequence, usize)> = corpus
        .iter()
        .flat_map(|s| select_frames(s.frames.len(), frames_per_sequence).into_iter().map(move |i| (s, i)))
        .collect();
    let per_frame: Vec<Vec<PatchPair>> = jobs
        .par_iter()
        .map(|&(s, i)| {
            let original = crop_to_multiple(&s.frames[i])?;
            let coded = encode_decode(&original, qpc, split_threshold)?;
            extract_patches(&original, &coded.decoded, &coded.partition, qp, &s.name, i)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset::new(per_frame.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_selection() {
        assert_eq!(select_frames(10, Some(3)), vec![0, 3, 6]);
        assert_eq!(select_frames(2, Some(3)), vec![0, 1]);
        assert_eq!(select_frames(4, None), vec![0, 1, 2, 3]);
    }

    #[test]
    fn build_counts_and_order() {
        let corpus =
            toy_corpus(&ToyCorpusConfig { sequences: 2, frames_per_sequence: 3, width: 130, height: 70, seed: 9 })
                .unwrap();
        let d = build_dataset(&corpus, 37, 100.0, Some(2)).unwrap();
        assert_eq!(d.len(), 2 * 2 * 2);
        let src: Vec<_> = d.patches.iter().map(|p| (p.source.sequence.as_str(), p.source.frame, p.source.x)).collect();
        assert_eq!(src[0], ("toy000", 0, 0));
        assert_eq!(src[1], ("toy000", 0, 64));
        assert_eq!(src[2].1, 1);
        assert_eq!(src[4].0, "toy001");
        assert_eq!(d.manifest.qps, vec![37]);
        assert_eq!(build_dataset(&corpus, 37, 100.0, Some(2)).unwrap(), d);
    }
}
