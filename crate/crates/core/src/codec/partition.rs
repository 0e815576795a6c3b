//! Quadtree coding-block partitions.

use std::collections::HashSet;
use std::fmt::Write as _;

use super::frame::FramePlane;
use crate::error::{bail, Result};

/// Largest coding block (one quadtree root).
pub const CTU_SIZE: usize = 64;
/// Smallest coding block.
pub const MIN_BLOCK: usize = 8;

/// Default variance threshold for [`partition_frame`].
pub const DEFAULT_SPLIT_THRESHOLD: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Block {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl Block {
    pub fn new(x: usize, y: usize, size: usize) -> Self {
        Self { x, y, size }
    }

    #[inline]
    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.size && py >= self.y && py < self.y + self.size
    }
}

/// A set of square coding blocks tiling a frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionMap {
    frame_width: usize,
    frame_height: usize,
    blocks: Vec<Block>,
    split_decisions: usize,
}

impl PartitionMap {
    /// Builds a map and checks every tiling invariant.
    pub fn new(frame_width: usize, frame_height: usize, blocks: Vec<Block>) -> Result<Self> {
        let split_decisions = count_split_decisions(&blocks);
        let map = Self { frame_width, frame_height, blocks, split_decisions };
        map.validate()?;
        Ok(map)
    }

    /// One root block per 64x64 region.
    pub fn unsplit(frame_width: usize, frame_height: usize) -> Result<Self> {
        check_ctu_multiple(frame_width, frame_height)?;
        let mut blocks = Vec::new();
        for y in (0..frame_height).step_by(CTU_SIZE) {
            for x in (0..frame_width).step_by(CTU_SIZE) {
                blocks.push(Block::new(x, y, CTU_SIZE));
            }
        }
        Self::new(frame_width, frame_height, blocks)
    }

    pub fn frame_width(&self) -> usize {
        self.frame_width
    }

    pub fn frame_height(&self) -> usize {
        self.frame_height
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Number of binary split flags a quadtree coder would transmit.
    pub fn split_decisions(&self) -> usize {
        self.split_decisions
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.frame_width, self.frame_height);
        if w == 0 || h == 0 {
            bail!(Partition, "empty frame {w}x{h}");
        }
        let mut area = 0usize;
        for b in &self.blocks {
            if !matches!(b.size, 8 | 16 | 32 | 64) {
                bail!(Partition, "block size {} not in {{8,16,32,64}}", b.size);
            }
            if b.x % b.size != 0 || b.y % b.size != 0 {
                bail!(Partition, "block {:?} is not aligned to its size", b);
            }
            if b.x + b.size > w || b.y + b.size > h {
                bail!(Partition, "block {:?} leaves the {w}x{h} frame", b);
            }
            area += b.size * b.size;
        }
        if area != w * h {
            bail!(Partition, "blocks cover {area} pixels, frame has {}", w * h);
        }
        // Area matches, so any overlap implies a hole; the owner scan catches both.
        let owners = self.owner_map_unchecked();
        if owners.contains(&u32::MAX) {
            bail!(Partition, "blocks overlap or leave gaps");
        }
        Ok(())
    }

    fn owner_map_unchecked(&self) -> Vec<u32> {
        let w = self.frame_width;
        let mut owners = vec![u32::MAX; w * self.frame_height];
        for (i, b) in self.blocks.iter().enumerate() {
            for y in b.y..b.y + b.size {
                for o in &mut owners[y * w + b.x..y * w + b.x + b.size] {
                    // A second claim marks the pixel invalid.
                    *o = if *o == u32::MAX { i as u32 } else { u32::MAX - 1 };
                }
            }
        }
        for o in &mut owners {
            if *o == u32::MAX - 1 {
                *o = u32::MAX;
            }
        }
        owners
    }

    /// Index of the owning block for every pixel, row-major.
    pub fn owner_map(&self) -> Vec<u32> {
        self.owner_map_unchecked()
    }

    /// The sub-partition covering the 64x64-aligned window at `(x, y)`, re-based to the window origin.
    pub fn restrict(&self, x: usize, y: usize, w: usize, h: usize) -> Result<PartitionMap> {
        let mut blocks = Vec::new();
        for b in &self.blocks {
            let inside = b.x >= x && b.y >= y && b.x + b.size <= x + w && b.y + b.size <= y + h;
            let disjoint = b.x >= x + w || b.y >= y + h || b.x + b.size <= x || b.y + b.size <= y;
            if inside {
                blocks.push(Block::new(b.x - x, b.y - y, b.size));
            } else if !disjoint {
                bail!(Partition, "block {:?} straddles window {w}x{h}@({x},{y})", b);
            }
        }
        PartitionMap::new(w, h, blocks)
    }

    /// Text form: `width height` header, then one `x y size` line per block.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.frame_width, self.frame_height);
        for b in &self.blocks {
            let _ = writeln!(s, "{} {} {}", b.x, b.y, b.size);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| crate::Error::Parse("empty partition file".into()))?;
        let dims = parse_fields::<2>(header)?;
        let mut blocks = Vec::new();
        for line in lines {
            let [x, y, size] = parse_fields::<3>(line)?;
            blocks.push(Block::new(x, y, size));
        }
        Self::new(dims[0], dims[1], blocks)
    }
}

fn parse_fields<const N: usize>(line: &str) -> Result<[usize; N]> {
    let mut out = [0usize; N];
    let mut it = line.split_whitespace();
    for slot in out.iter_mut() {
        let tok = it.next().ok_or_else(|| crate::Error::Parse(format!("expected {N} fields in {line:?}")))?;
        *slot = tok.parse().map_err(|_| crate::Error::Parse(format!("bad integer {tok:?} in {line:?}")))?;
    }
    if it.next().is_some() {
        bail!(Parse, "trailing fields in {line:?}");
    }
    Ok(out)
}

/// Number of quadtree flags: every node larger than the minimum size carries one,
/// whether it is a leaf ("keep") or an internal node ("split").
fn count_split_decisions(blocks: &[Block]) -> usize {
    let mut internal = HashSet::new();
    let mut leaves = 0;
    for b in blocks {
        if b.size > MIN_BLOCK {
            leaves += 1;
        }
        let mut a = b.size * 2;
        while a <= CTU_SIZE {
            internal.insert((b.x / a * a, b.y / a * a, a));
            a *= 2;
        }
    }
    leaves + internal.len()
}

fn check_ctu_multiple(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || !width.is_multiple_of(CTU_SIZE) || !height.is_multiple_of(CTU_SIZE) {
        bail!(Precondition, "frame {width}x{height} is not a multiple of {CTU_SIZE} in both dimensions");
    }
    Ok(())
}

fn block_variance(frame: &FramePlane, b: Block) -> f64 {
    let w = frame.width();
    let s = frame.samples();
    let (mut sum, mut sum_sq) = (0u64, 0u64);
    for y in b.y..b.y + b.size {
        for &v in &s[y * w + b.x..y * w + b.x + b.size] {
            sum += v as u64;
            sum_sq += (v as u64) * (v as u64);
        }
    }
    let n = (b.size * b.size) as f64;
    let mean = sum as f64 / n;
    (sum_sq as f64 / n - mean * mean).max(0.0)
}

/// Top-down variance-driven quadtree split of every 64x64 region.
///
/// A block is split into quadrants while its sample variance exceeds `split_threshold`
/// and it is larger than 8x8. Blocks are emitted per root in raster order, and within a
/// root in z-order.
pub fn partition_frame(frame: &FramePlane, split_threshold: f64) -> Result<PartitionMap> {
    check_ctu_multiple(frame.width(), frame.height())?;
    if split_threshold.is_nan() || split_threshold < 0.0 {
        bail!(Precondition, "split threshold must be nonnegative, got {split_threshold}");
    }
    let mut blocks = Vec::new();
    for y in (0..frame.height()).step_by(CTU_SIZE) {
        for x in (0..frame.width()).step_by(CTU_SIZE) {
            split_recursive(frame, Block::new(x, y, CTU_SIZE), split_threshold, &mut blocks);
        }
    }
    PartitionMap::new(frame.width(), frame.height(), blocks)
}

fn split_recursive(frame: &FramePlane, b: Block, threshold: f64, out: &mut Vec<Block>) {
    if b.size > MIN_BLOCK && block_variance(frame, b) > threshold {
        let h = b.size / 2;
        for (dx, dy) in [(0, 0), (h, 0), (0, h), (h, h)] {
            split_recursive(frame, Block::new(b.x + dx, b.y + dy, h), threshold, out);
        }
    } else {
        out.push(b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadrant_frame() -> FramePlane {
        FramePlane::from_fn(64, 64, |x, y| match (x < 32, y < 32) {
            (true, true) => 0,
            (false, true) => 85,
            (true, false) => 170,
            (false, false) => 255,
        })
        .unwrap()
    }

    #[test]
    fn constant_frame_single_block() {
        let f = FramePlane::filled(64, 64, 77).unwrap();
        let p = partition_frame(&f, 10.0).unwrap();
        assert_eq!(p.blocks(), &[Block::new(0, 0, 64)]);
        assert_eq!(p.split_decisions(), 1);
    }

    #[test]
    fn quadrants_split_once() {
        // Population variance of {0,85,170,255} in equal shares is 9031.25 > 10;
        // each constant quadrant has variance 0.
        let p = partition_frame(&quadrant_frame(), 10.0).unwrap();
        assert_eq!(
            p.blocks(),
            &[Block::new(0, 0, 32), Block::new(32, 0, 32), Block::new(0, 32, 32), Block::new(32, 32, 32)]
        );
        // root split flag + four "keep" flags
        assert_eq!(p.split_decisions(), 5);
    }

    #[test]
    fn infinite_threshold_never_splits() {
        let f = FramePlane::from_fn(128, 64, |x, y| ((x * 37 + y * 91) % 256) as u8).unwrap();
        let p = partition_frame(&f, f64::INFINITY).unwrap();
        assert_eq!(p.blocks().len(), 2);
        assert!(p.blocks().iter().all(|b| b.size == 64));
    }

    #[test]
    fn zero_threshold_splits_noise_to_minimum() {
        let f = FramePlane::from_fn(64, 64, |x, y| ((x * 37 + y * 91) % 256) as u8).unwrap();
        let p = partition_frame(&f, 0.0).unwrap();
        assert_eq!(p.blocks().len(), 64);
        // 1 root + 4 at 32 + 16 at 16 split flags; size-8 leaves carry none
        assert_eq!(p.split_decisions(), 21);
    }

    #[test]
    fn rejects_non_ctu_multiple() {
        let f = FramePlane::filled(72, 64, 0).unwrap();
        assert!(matches!(partition_frame(&f, 10.0), Err(crate::Error::Precondition(_))));
    }

    #[test]
    fn validation_catches_overlap_and_gaps() {
        let overlap = vec![Block::new(0, 0, 32), Block::new(0, 0, 32), Block::new(0, 32, 32), Block::new(32, 32, 32)];
        assert!(PartitionMap::new(64, 64, overlap).is_err());
        assert!(PartitionMap::new(64, 64, vec![Block::new(0, 0, 32)]).is_err());
        assert!(PartitionMap::new(64, 64, vec![Block::new(4, 0, 8)]).is_err());
        assert!(PartitionMap::new(64, 64, vec![Block::new(0, 0, 24)]).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let p = partition_frame(&quadrant_frame(), 10.0).unwrap();
        let q = PartitionMap::from_text(&p.to_text()).unwrap();
        assert_eq!(p, q);
        assert!(PartitionMap::from_text("64 64\n0 0\n").is_err());
    }

    #[test]
    fn restrict_rebases() {
        let f = FramePlane::from_fn(128, 64, |x, _| if x < 64 { 0 } else { (x * 40 % 256) as u8 }).unwrap();
        let p = partition_frame(&f, 10.0).unwrap();
        let right = p.restrict(64, 0, 64, 64).unwrap();
        assert!(right.blocks().iter().all(|b| b.x < 64 && b.y < 64));
        let left = p.restrict(0, 0, 64, 64).unwrap();
        assert_eq!(left.blocks(), &[Block::new(0, 0, 64)]);
    }
}
