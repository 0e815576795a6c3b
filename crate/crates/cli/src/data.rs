use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use asn_core::codec::DEFAULT_SPLIT_THRESHOLD;
use asn_core::dataset::{build_dataset, read_corpus, toy_corpus, write_corpus, Dataset, Split, ToyCorpusConfig};
use clap::Args;

use crate::settings::{prepare_out_dir, require_dir, Settings};

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// Directory of PGM frames, or of one sub-directory per sequence.
    #[arg(long, conflicts_with = "toy")]
    pub input: Option<PathBuf>,
    /// Generate this many procedural toy sequences instead of reading frames.
    #[arg(long)]
    pub toy: Option<usize>,
    /// Width and height of generated toy frames.
    #[arg(long)]
    pub toy_size: Option<usize>,
    /// Frames per generated toy sequence.
    #[arg(long)]
    pub toy_frames: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub qp: Option<u8>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Evenly spaced frames taken per sequence (default: all).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Fraction of sequences held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

pub fn run_dataset(a: DatasetArgs, seed: u64, mut s: Settings) -> Result<()> {
    let input = s.optional_path("input", a.input)?;
    let toy = s.optional("toy", a.toy)?;
    let out = s.path("out", a.out)?;
    let qp = s.value("qp", a.qp, 37u8)?;
    let threshold = s.value("threshold", a.threshold, DEFAULT_SPLIT_THRESHOLD)?;
    let frames = s.optional("frames", a.frames)?;
    let val_fraction = s.value("val_fraction", a.val_fraction, 0.2f64)?;
    let corpus = match (&input, toy) {
        (Some(dir), None) => {
            require_dir(dir)?;
            prepare_out_dir(&out)?;
            read_corpus(dir).with_context(|| format!("reading frames from {}", dir.display()))?
        }
        (None, Some(sequences)) => {
            let size = s.value("toy_size", a.toy_size, 256usize)?;
            let frames_per_sequence = s.value("toy_frames", a.toy_frames, 1usize)?;
            prepare_out_dir(&out)?;
            let corpus =
                toy_corpus(&ToyCorpusConfig { sequences, frames_per_sequence, width: size, height: size, seed })?;
            write_corpus(out.join("corpus"), &corpus)?;
            corpus
        }
        (Some(_), Some(_)) => bail!("pass either --input or --toy, not both"),
        (None, None) => bail!("pass --input DIR or --toy SEQUENCES"),
    };
    let mut dataset: Dataset = build_dataset(&corpus, qp, threshold, frames)?;
    dataset.split(val_fraction, seed)?;
    dataset.save(&out)?;
    let train = dataset.subset(Split::Train).len();
    let val = dataset.subset(Split::Validation).len();
    fs::write(
        out.join("summary.txt"),
        format!("sequences {}\npatches {}\ntrain {train}\nval {val}\n", corpus.len(), dataset.len()),
    )?;
    s.write(&out)
}
