use crate::error::{bail, Result};

/// Smallest accepted frame dimension.
pub const MIN_DIM: usize = 8;

/// A single 8-bit luma plane stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FramePlane {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl FramePlane {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width < MIN_DIM || height < MIN_DIM {
            bail!(Precondition, "frame {width}x{height} is smaller than {MIN_DIM}x{MIN_DIM}");
        }
        if samples.len() != width * height {
            bail!(Shape, "frame {width}x{height} needs {} samples, got {}", width * height, samples.len());
        }
        Ok(Self { width, height, samples })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self::new(width, height, samples)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    #[inline]
    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.samples[y * self.width + x] = v;
    }

    /// Copies out the `w`x`h` window whose top-left corner is `(x, y)`.
    pub fn region(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Vec<u8>> {
        if x + w > self.width || y + h > self.height {
            bail!(Shape, "region {w}x{h}@({x},{y}) exceeds frame {}x{}", self.width, self.height);
        }
        let mut out = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            out.extend_from_slice(&self.samples[start..start + w]);
        }
        Ok(out)
    }

    /// Writes a `w`x`h` window back at `(x, y)`.
    pub fn put_region(&mut self, x: usize, y: usize, w: usize, h: usize, data: &[u8]) -> Result<()> {
        if x + w > self.width || y + h > self.height || data.len() != w * h {
            bail!(Shape, "cannot place {w}x{h} window at ({x},{y})");
        }
        for (r, row) in data.chunks_exact(w).enumerate() {
            let start = (y + r) * self.width + x;
            self.samples[start..start + w].copy_from_slice(row);
        }
        Ok(())
    }

    pub fn same_dims(&self, other: &FramePlane) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dims() {
        assert!(FramePlane::new(4, 8, vec![0; 32]).is_err());
        assert!(FramePlane::new(8, 8, vec![0; 63]).is_err());
        assert!(FramePlane::new(8, 8, vec![0; 64]).is_ok());
    }

    #[test]
    fn region_roundtrip() {
        let f = FramePlane::from_fn(16, 16, |x, y| (x + 16 * y) as u8).unwrap();
        let r = f.region(4, 8, 8, 8).unwrap();
        assert_eq!(r[0], f.get(4, 8));
        let mut g = FramePlane::filled(16, 16, 0).unwrap();
        g.put_region(4, 8, 8, 8, &r).unwrap();
        assert_eq!(g.get(11, 15), f.get(11, 15));
        assert!(f.region(10, 10, 8, 8).is_err());
    }
}
