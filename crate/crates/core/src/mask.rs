//! Masks derived from the coding-block partition.
//!
//! Two flavours are produced: a block-mean mask (each block filled with the mean of its
//! decoded samples) and a boundary mask (a two-pixel band straddling every internal
//! block edge). Values are normalized to `[0, 1]` like the network inputs.

use crate::codec::{FramePlane, PartitionMap};
use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskKind {
    /// Block-mean mask.
    Mean,
    /// Block-boundary mask.
    Boundary,
}

impl MaskKind {
    pub fn short_name(self) -> &'static str {
        match self {
            MaskKind::Mean => "MM",
            MaskKind::Boundary => "BM",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MM" | "MEAN" => Ok(MaskKind::Mean),
            "BM" | "BOUNDARY" => Ok(MaskKind::Boundary),
            _ => bail!(Parse, "unknown mask kind {s:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl Mask {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            bail!(Shape, "mask {width}x{height} needs {} values, got {}", width * height, values.len());
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            bail!(Precondition, "mask values must lie in [0, 1]");
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// 8-bit rendering (`round(v * 255)`) for inspection.
    pub fn to_frame(&self) -> Result<FramePlane> {
        FramePlane::new(self.width, self.height, self.values.iter().map(|v| (v * 255.0).round() as u8).collect())
    }
}

fn check_dims(frame: &FramePlane, partition: &PartitionMap) -> Result<()> {
    if frame.width() != partition.frame_width() || frame.height() != partition.frame_height() {
        bail!(
            Shape,
            "partition {}x{} does not describe frame {}x{}",
            partition.frame_width(),
            partition.frame_height(),
            frame.width(),
            frame.height()
        );
    }
    Ok(())
}

/// Fills every block with the mean of its decoded samples, divided by 255.
pub fn gen_mean_mask(decoded: &FramePlane, partition: &PartitionMap) -> Result<Mask> {
    check_dims(decoded, partition)?;
    let w = decoded.width();
    let s = decoded.samples();
    let mut values = vec![0.0f32; w * decoded.height()];
    for b in partition.blocks() {
        let mut sum = 0u64;
        for y in b.y..b.y + b.size {
            sum += s[y * w + b.x..y * w + b.x + b.size].iter().map(|&v| v as u64).sum::<u64>();
        }
        let mean = (sum as f64 / (b.size * b.size) as f64 / 255.0) as f32;
        for y in b.y..b.y + b.size {
            values[y * w + b.x..y * w + b.x + b.size].fill(mean);
        }
    }
    Mask::new(w, decoded.height(), values)
}

/// Marks every pixel whose 4-neighbour lies in a different block.
///
/// This yields a band one pixel deep on each side of every internal edge (two pixels
/// total). The outer frame border separates nothing and stays unmarked.
pub fn gen_boundary_mask(partition: &PartitionMap) -> Result<Mask> {
    partition.validate()?;
    let (w, h) = (partition.frame_width(), partition.frame_height());
    let owner = partition.owner_map();
    let mut values = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let o = owner[y * w + x];
            let differs = (x > 0 && owner[y * w + x - 1] != o)
                || (x + 1 < w && owner[y * w + x + 1] != o)
                || (y > 0 && owner[(y - 1) * w + x] != o)
                || (y + 1 < h && owner[(y + 1) * w + x] != o);
            if differs {
                values[y * w + x] = 1.0;
            }
        }
    }
    Mask::new(w, h, values)
}

pub fn gen_mask(kind: MaskKind, decoded: &FramePlane, partition: &PartitionMap) -> Result<Mask> {
    match kind {
        MaskKind::Mean => gen_mean_mask(decoded, partition),
        MaskKind::Boundary => {
            check_dims(decoded, partition)?;
            gen_boundary_mask(partition)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{partition_frame, Block};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadrants() -> PartitionMap {
        PartitionMap::new(
            64,
            64,
            vec![Block::new(0, 0, 32), Block::new(32, 0, 32), Block::new(0, 32, 32), Block::new(32, 32, 32)],
        )
        .unwrap()
    }

    #[test]
    fn constant_frame_mean_mask() {
        let f = FramePlane::filled(64, 64, 128).unwrap();
        let m = gen_mean_mask(&f, &quadrants()).unwrap();
        assert!(m.values().iter().all(|&v| v == (128.0f64 / 255.0) as f32));
    }

    #[test]
    fn block_mean_of_repeating_pattern() {
        // Top-left 8x8 block holds {10,20,30,40} repeated evenly.
        let f = FramePlane::from_fn(64, 64, |x, y| if x < 8 && y < 8 { [10, 20, 30, 40][x % 4] } else { 0 }).unwrap();
        let mut blocks = vec![];
        for y in (0..64).step_by(8) {
            for x in (0..64).step_by(8) {
                blocks.push(Block::new(x, y, 8));
            }
        }
        let p = PartitionMap::new(64, 64, blocks).unwrap();
        let m = gen_mean_mask(&f, &p).unwrap();
        assert!((m.get(3, 5) - 25.0 / 255.0).abs() < 1e-7);
        assert_eq!(m.get(8, 0), 0.0);
    }

    #[test]
    fn random_frame_mean_mask_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f =
            FramePlane::from_fn(128, 128, |x, y| if (x / 32 + y / 32) % 2 == 0 { rng.gen() } else { (x + y) as u8 })
                .unwrap();
        let p = partition_frame(&f, 100.0).unwrap();
        let m = gen_mean_mask(&f, &p).unwrap();
        for b in p.blocks() {
            let mut vals = vec![];
            let mut sum = 0.0;
            for y in b.y..b.y + b.size {
                for x in b.x..b.x + b.size {
                    sum += f.get(x, y) as f64;
                    vals.push(m.get(x, y));
                }
            }
            let mean = sum / (b.size * b.size) as f64;
            assert!(vals.iter().all(|&v| v == vals[0]));
            assert!((vals[0] as f64 * 255.0 - mean).abs() < 1e-4);
        }
    }

    #[test]
    fn boundary_mask_single_block_is_empty() {
        let p = PartitionMap::unsplit(64, 64).unwrap();
        assert!(gen_boundary_mask(&p).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_mask_quadrant_cross() {
        let m = gen_boundary_mask(&quadrants()).unwrap();
        let mut count = 0;
        for y in 0..64 {
            for x in 0..64 {
                let v = m.get(x, y);
                assert!(v == 0.0 || v == 1.0);
                let expected = matches!(x, 31 | 32) || matches!(y, 31 | 32);
                assert_eq!(v == 1.0, expected, "pixel ({x},{y})");
                count += (v == 1.0) as usize;
            }
        }
        assert_eq!(count, 2 * 64 + 2 * 64 - 4);
    }

    #[test]
    fn boundary_mask_ignores_pixels() {
        let a = FramePlane::filled(64, 64, 3).unwrap();
        let b = FramePlane::filled(64, 64, 250).unwrap();
        let p = quadrants();
        assert_eq!(gen_mask(MaskKind::Boundary, &a, &p).unwrap(), gen_mask(MaskKind::Boundary, &b, &p).unwrap());
    }

    #[test]
    fn mean_mask_idempotent_on_block_constant_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = FramePlane::from_fn(64, 64, |_, _| rng.gen()).unwrap();
        let p = partition_frame(&f, 500.0).unwrap();
        let m = gen_mean_mask(&f, &p).unwrap();
        let again = gen_mean_mask(&m.to_frame().unwrap(), &p).unwrap();
        let rescaled = gen_mean_mask(&again.to_frame().unwrap(), &p).unwrap();
        assert_eq!(again, rescaled);
        assert_eq!(m.width(), 64);
    }

    #[test]
    fn dimension_mismatch() {
        let f = FramePlane::filled(128, 64, 0).unwrap();
        assert!(gen_mean_mask(&f, &quadrants()).is_err());
    }
}
