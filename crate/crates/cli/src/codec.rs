use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use asn_core::codec::pgm::write_pgm;
use asn_core::codec::{encode_decode, CodedFrame, DEFAULT_SPLIT_THRESHOLD};
use asn_core::dataset::{crop_to_multiple, read_corpus, select_frames, Sequence};
use asn_core::mask::{gen_boundary_mask, gen_mean_mask};
use asn_core::metrics::psnr;
use asn_core::{FramePlane, QpConfig};
use clap::Args;
use rayon::prelude::*;

use crate::ratelog::{format_rate_log, RateRow};
use crate::settings::{prepare_out_dir, require_dir, QpList, Settings};

#[derive(Args, Debug)]
pub struct CodecArgs {
    /// Directory of PGM frames, or of one sub-directory per sequence.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated quantization parameters.
    #[arg(long)]
    pub qp: Option<QpList>,
    /// Block-variance threshold above which the quadtree splits.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Evenly spaced frames taken per sequence (default: all).
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MaskDumpArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub qp: Option<u8>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub frames: Option<usize>,
}

pub fn frame_stem(index: usize) -> String {
    format!("{index:04}")
}

/// One selected frame of the input corpus, cropped to whole 64x64 patches.
pub struct SourceFrame {
    pub sequence: String,
    pub index: usize,
    pub original: FramePlane,
}

pub fn load_frames(input: &Path, frames: Option<usize>) -> Result<Vec<SourceFrame>> {
    let corpus: Vec<Sequence> =
        read_corpus(input).with_context(|| format!("reading frames from {}", input.display()))?;
    let mut out = Vec::new();
    for seq in corpus {
        for i in select_frames(seq.frames.len(), frames) {
            out.push(SourceFrame {
                sequence: seq.name.clone(),
                index: i,
                original: crop_to_multiple(&seq.frames[i])
                    .with_context(|| format!("frame {i} of sequence {}", seq.name))?,
            });
        }
    }
    Ok(out)
}

pub fn code_frames(frames: &[SourceFrame], qps: &[u8], threshold: f64) -> Result<Vec<(usize, u8, CodedFrame)>> {
    let jobs: Vec<(usize, u8)> = qps.iter().flat_map(|&qp| (0..frames.len()).map(move |i| (i, qp))).collect();
    jobs.par_iter()
        .map(|&(i, qp)| Ok((i, qp, encode_decode(&frames[i].original, QpConfig::new(qp)?, threshold)?)))
        .collect()
}

pub fn run_codec(a: CodecArgs, mut s: Settings) -> Result<()> {
    let input = s.path("input", a.input)?;
    let out = s.path("out", a.out)?;
    let qps = s.value("qp", a.qp, QpList::default())?;
    let threshold = s.value("threshold", a.threshold, DEFAULT_SPLIT_THRESHOLD)?;
    let frames = s.optional("frames", a.frames)?;
    require_dir(&input)?;
    prepare_out_dir(&out)?;

    let sources = load_frames(&input, frames)?;
    let coded = code_frames(&sources, &qps.0, threshold)?;
    let mut rows = Vec::with_capacity(coded.len());
    for (i, qp, c) in &coded {
        let src = &sources[*i];
        let dir = out.join(format!("qp{qp}")).join(&src.sequence);
        fs::create_dir_all(&dir)?;
        let stem = frame_stem(src.index);
        write_pgm(dir.join(format!("{stem}.pgm")), &c.decoded)?;
        fs::write(dir.join(format!("{stem}.part")), c.partition.to_text())?;
        rows.push(RateRow {
            sequence: src.sequence.clone(),
            frame: src.index,
            qp: *qp,
            rate: c.rate,
            psnr_db: psnr(&c.decoded, &src.original)?,
        });
    }
    fs::write(out.join("rate.tsv"), format_rate_log(&rows))?;
    s.write(&out)
}

pub fn run_mask_dump(a: MaskDumpArgs, mut s: Settings) -> Result<()> {
    let input = s.path("input", a.input)?;
    let out = s.path("out", a.out)?;
    let qp = s.value("qp", a.qp, 37u8)?;
    let threshold = s.value("threshold", a.threshold, DEFAULT_SPLIT_THRESHOLD)?;
    let frames = s.optional("frames", a.frames)?;
    require_dir(&input)?;
    prepare_out_dir(&out)?;

    let sources = load_frames(&input, frames)?;
    for (i, _, c) in code_frames(&sources, &[qp], threshold)? {
        let src = &sources[i];
        let dir = out.join(&src.sequence);
        fs::create_dir_all(&dir)?;
        let stem = frame_stem(src.index);
        write_pgm(dir.join(format!("{stem}_decoded.pgm")), &c.decoded)?;
        write_pgm(dir.join(format!("{stem}_mm.pgm")), &gen_mean_mask(&c.decoded, &c.partition)?.to_frame()?)?;
        write_pgm(dir.join(format!("{stem}_bm.pgm")), &gen_boundary_mask(&c.partition)?.to_frame()?)?;
        fs::write(dir.join(format!("{stem}.part")), c.partition.to_text())?;
    }
    s.write(&out)
}
