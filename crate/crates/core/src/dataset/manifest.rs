//! Dataset bookkeeping and on-disk layout.
//!
//! A dataset directory holds `manifest.txt` (one record per patch) and `patches.asnd`,
//! a binary shard of fixed-size records:
//!
//! ```text
//! b"ASND" | version: u32 | count: u32
//! per record: decoded u8 x 4096 | original u8 x 4096 | mm f32 x 4096 | bm f32 x 4096
//! ```
//!
//! All integers and floats are little-endian; record `i` belongs to manifest line `i`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::patches::{PatchPair, PatchSource, PATCH_SIZE};
use crate::codec::FramePlane;
use crate::error::{bail, Error, Result};
use crate::mask::Mask;
use crate::nn::io::Reader;

pub const SHARD_MAGIC: &[u8; 4] = b"ASND";
pub const SHARD_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SHARD_FILE: &str = "patches.asnd";

const PIXELS: usize = PATCH_SIZE * PATCH_SIZE;
const RECORD_BYTES: usize = 2 * PIXELS + 2 * 4 * PIXELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Validation),
            _ => bail!(Parse, "unknown split {s:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub source: PatchSource,
    pub qp: u8,
    pub split: Split,
    pub label: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Seed of the most recent split.
    pub seed: u64,
    pub qps: Vec<u8>,
}

impl DatasetManifest {
    /// All patches in the training split.
    pub fn describe(patches: &[PatchPair]) -> Self {
        let qps: BTreeSet<u8> = patches.iter().map(|p| p.qp).collect();
        Self {
            entries: patches
                .iter()
                .map(|p| ManifestEntry { source: p.source.clone(), qp: p.qp, split: Split::Train, label: p.label })
                .collect(),
            seed: 0,
            qps: qps.into_iter().collect(),
        }
    }

    /// Distinct sequence names, sorted.
    pub fn sequences(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.source.sequence.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = String::from("# asn dataset manifest\n");
        let _ = writeln!(s, "version 1");
        let _ = writeln!(s, "seed {}", self.seed);
        let qps: Vec<String> = self.qps.iter().map(u8::to_string).collect();
        let _ = writeln!(s, "qps {}", qps.join(","));
        let _ = writeln!(s, "shard {SHARD_FILE}");
        let _ = writeln!(s, "count {}", self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            if e.source.sequence.is_empty() || e.source.sequence.contains(char::is_whitespace) {
                bail!(Precondition, "sequence name {:?} must be non-empty without whitespace", e.source.sequence);
            }
            let label = e.label.map_or_else(|| "-".to_string(), |l| l.to_string());
            let _ = writeln!(
                s,
                "{i} {} {} {} {} {} {} {label}",
                e.source.sequence,
                e.source.frame,
                e.source.x,
                e.source.y,
                e.qp,
                e.split.name()
            );
        }
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Parse(format!("bad manifest line {line:?}"));
        let mut m = DatasetManifest { entries: Vec::new(), seed: 0, qps: Vec::new() };
        let mut count = None;
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok[0] {
                "version" => {
                    if tok.get(1) != Some(&"1") {
                        bail!(Parse, "unsupported manifest version in {line:?}");
                    }
                }
                "seed" => m.seed = tok.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad(line))?,
                "qps" => {
                    m.qps = match tok.get(1) {
                        Some(v) => v.split(',').map(|q| q.parse().map_err(|_| bad(line))).collect::<Result<_>>()?,
                        None => Vec::new(),
                    }
                }
                "shard" => {}
                "count" => count = Some(tok.get(1).and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| bad(line))?),
                _ => {
                    if tok.len() != 8 {
                        return Err(bad(line));
                    }
                    let num = |i: usize| tok[i].parse::<usize>().map_err(|_| bad(line));
                    if num(0)? != m.entries.len() {
                        bail!(Parse, "manifest records out of order at {line:?}");
                    }
                    m.entries.push(ManifestEntry {
                        source: PatchSource { sequence: tok[1].to_string(), frame: num(2)?, x: num(3)?, y: num(4)? },
                        qp: tok[5].parse().map_err(|_| bad(line))?,
                        split: Split::parse(tok[6])?,
                        label: match tok[7] {
                            "-" => None,
                            l => Some(l.parse().map_err(|_| bad(line))?),
                        },
                    });
                }
            }
        }
        if count != Some(m.entries.len()) {
            bail!(Parse, "manifest count {:?} does not match {} records", count, m.entries.len());
        }
        Ok(m)
    }
}

/// Assigns whole sequences to the validation split.
///
/// At least one sequence lands on each side; the chosen set depends only on `seed` and
/// the sorted sequence names.
pub fn split_dataset(manifest: &DatasetManifest, val_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(0.0..1.0).contains(&val_fraction) {
        bail!(Config, "validation fraction must lie in [0, 1), got {val_fraction}");
    }
    let mut seqs = manifest.sequences();
    if seqs.len() < 2 {
        bail!(
            Precondition,
            "splitting by sequence needs at least two sequences, found {}; add more source sequences",
            seqs.len()
        );
    }
    let n_val = ((seqs.len() as f64 * val_fraction).round() as usize).clamp(1, seqs.len() - 1);
    seqs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val: BTreeSet<&str> = seqs[..n_val].iter().map(String::as_str).collect();
    let mut out = manifest.clone();
    out.seed = seed;
    for e in &mut out.entries {
        e.split = if val.contains(e.source.sequence.as_str()) { Split::Validation } else { Split::Train };
    }
    Ok(out)
}

/// Patches plus their manifest; `manifest.entries[i]` describes `patches[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub patches: Vec<PatchPair>,
}

impl Dataset {
    pub fn new(patches: Vec<PatchPair>) -> Self {
        Self { manifest: DatasetManifest::describe(&patches), patches }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn split(&mut self, val_fraction: f64, seed: u64) -> Result<()> {
        self.manifest = split_dataset(&self.manifest, val_fraction, seed)?;
        Ok(())
    }

    pub fn subset(&self, split: Split) -> Vec<PatchPair> {
        self.patches
            .iter()
            .zip(&self.manifest.entries)
            .filter(|(_, e)| e.split == split)
            .map(|(p, _)| p.clone())
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        if self.manifest.entries.len() != self.patches.len() {
            bail!(Precondition, "manifest and patch counts differ");
        }
        fs::create_dir_all(dir)?;
        let mut manifest = self.manifest.clone();
        for (e, p) in manifest.entries.iter_mut().zip(&self.patches) {
            e.label = p.label;
        }
        fs::write(dir.join(MANIFEST_FILE), manifest.to_text()?)?;
        fs::write(dir.join(SHARD_FILE), encode_shard(&self.patches)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = DatasetManifest::from_text(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let records = decode_shard(&fs::read(dir.join(SHARD_FILE))?)?;
        if records.len() != manifest.entries.len() {
            bail!(Parse, "shard holds {} records, manifest lists {}", records.len(), manifest.entries.len());
        }
        let patches = records
            .into_iter()
            .zip(&manifest.entries)
            .map(|((decoded, original, mask_mm, mask_bm), e)| PatchPair {
                decoded,
                original,
                mask_mm,
                mask_bm,
                source: e.source.clone(),
                qp: e.qp,
                label: e.label,
            })
            .collect();
        Ok(Self { manifest, patches })
    }
}

fn encode_shard(patches: &[PatchPair]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + patches.len() * RECORD_BYTES);
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    out.extend_from_slice(&(patches.len() as u32).to_le_bytes());
    for p in patches {
        if p.decoded.samples().len() != PIXELS || p.original.samples().len() != PIXELS {
            bail!(Shape, "shard records must be {PATCH_SIZE}x{PATCH_SIZE}");
        }
        out.extend_from_slice(p.decoded.samples());
        out.extend_from_slice(p.original.samples());
        for m in [&p.mask_mm, &p.mask_bm] {
            for v in m.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

type Record = (FramePlane, FramePlane, Mask, Mask);

fn decode_shard(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != SHARD_MAGIC {
        bail!(Parse, "not an ASND shard");
    }
    let version = r.u32()?;
    if version != SHARD_VERSION {
        bail!(Parse, "unsupported shard version {version}");
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let dec = FramePlane::new(PATCH_SIZE, PATCH_SIZE, r.take(PIXELS)?.to_vec())?;
        let orig = FramePlane::new(PATCH_SIZE, PATCH_SIZE, r.take(PIXELS)?.to_vec())?;
        let mut mask = || -> Result<Mask> {
            let raw = r.take(4 * PIXELS)?;
            let v = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Mask::new(PATCH_SIZE, PATCH_SIZE, v)
        };
        let mm = mask()?;
        let bm = mask()?;
        out.push((dec, orig, mm, bm));
    }
    if !r.finished() {
        bail!(Parse, "trailing bytes after shard records");
    }
    Ok(out)
}
