//! Seeded procedural frames so experiments need no external footage.
//!
//! Each sequence is a fixed scene (a gradient backdrop overlaid with checkerboards,
//! low-pass noise, flat regions and rows of glyph-like strokes) viewed through a window
//! that pans a couple of pixels per frame.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::pgm::{list_sequence, read_pgm, write_pgm};
use crate::codec::FramePlane;
use crate::error::{bail, Result};

/// A named run of frames from one source.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<FramePlane>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyCorpusConfig {
    pub sequences: usize,
    pub frames_per_sequence: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

/// Per-frame pan in pixels.
const PAN: usize = 2;

pub fn toy_corpus(cfg: &ToyCorpusConfig) -> Result<Vec<Sequence>> {
    if cfg.sequences == 0 || cfg.frames_per_sequence == 0 {
        bail!(Config, "toy corpus needs at least one sequence and one frame");
    }
    if cfg.width < 8 || cfg.height < 8 {
        bail!(Config, "toy frames must be at least 8x8");
    }
    (0..cfg.sequences)
        .map(|s| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(s as u64));
            let margin = PAN * cfg.frames_per_sequence;
            let scene = Scene::random(cfg.width + margin, cfg.height + margin, &mut rng);
            let frames = (0..cfg.frames_per_sequence)
                .map(|f| {
                    let off = f * PAN;
                    FramePlane::from_fn(cfg.width, cfg.height, |x, y| scene.sample(x + off, y + off / 2))
                })
                .collect::<Result<_>>()?;
            Ok(Sequence { name: format!("toy{s:03}"), frames })
        })
        .collect()
}

struct Scene {
    width: usize,
    pixels: Vec<f32>,
}

impl Scene {
    fn random(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut pixels = vec![0.0f32; width * height];
        let (gx, gy) = (rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0));
        let (base, span) = (rng.gen_range(40.0f32..140.0), rng.gen_range(30.0f32..100.0));
        let norm = (width + height) as f32;
        for y in 0..height {
            for x in 0..width {
                pixels[y * width + x] = base + span * (gx * x as f32 + gy * y as f32) / norm;
            }
        }
        let mut scene = Scene { width, pixels };
        let regions = rng.gen_range(5..10);
        for _ in 0..regions {
            let rw = rng.gen_range(width / 8..=width / 2).max(4);
            let rh = rng.gen_range(height / 8..=height / 2).max(4);
            let x0 = rng.gen_range(0..width - rw);
            let y0 = rng.gen_range(0..height - rh);
            match rng.gen_range(0..4) {
                0 => scene.checkerboard(x0, y0, rw, rh, rng),
                1 => scene.smooth_noise(x0, y0, rw, rh, rng),
                2 => scene.flat(x0, y0, rw, rh, rng),
                _ => scene.glyphs(x0, y0, rw, rh, rng),
            }
        }
        scene
    }

    fn sample(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x].round().clamp(0.0, 255.0) as u8
    }

    fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    fn checkerboard(&mut self, x0: usize, y0: usize, w: usize, h: usize, rng: &mut ChaCha8Rng) {
        let cell = rng.gen_range(2..14);
        let (a, b) = (rng.gen_range(0.0f32..255.0), rng.gen_range(0.0f32..255.0));
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let v = if ((x - x0) / cell + (y - y0) / cell).is_multiple_of(2) { a } else { b };
                self.set(x, y, v);
            }
        }
    }

    /// Bilinearly interpolated lattice noise.
    fn smooth_noise(&mut self, x0: usize, y0: usize, w: usize, h: usize, rng: &mut ChaCha8Rng) {
        let cell = rng.gen_range(4..24);
        let (gw, gh) = (w / cell + 2, h / cell + 2);
        let centre = rng.gen_range(60.0f32..200.0);
        let amp = rng.gen_range(20.0f32..80.0);
        let lattice: Vec<f32> = (0..gw * gh).map(|_| centre + amp * rng.gen_range(-1.0f32..1.0)).collect();
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f32 / cell as f32, y as f32 / cell as f32);
                let (ix, iy) = (fx as usize, fy as usize);
                let (tx, ty) = (fx - ix as f32, fy - iy as f32);
                let at = |i: usize, j: usize| lattice[j * gw + i];
                let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
                let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
                self.set(x0 + x, y0 + y, top * (1.0 - ty) + bot * ty);
            }
        }
    }

    fn flat(&mut self, x0: usize, y0: usize, w: usize, h: usize, rng: &mut ChaCha8Rng) {
        let v = rng.gen_range(0.0f32..255.0);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.set(x, y, v);
            }
        }
    }

    /// Rows of random 3x5 stroke patterns, scaled up, on a contrasting band.
    fn glyphs(&mut self, x0: usize, y0: usize, w: usize, h: usize, rng: &mut ChaCha8Rng) {
        let scale = rng.gen_range(1..4);
        let (ink, paper) = if rng.gen_bool(0.5) {
            (rng.gen_range(0.0f32..60.0), rng.gen_range(180.0f32..255.0))
        } else {
            (rng.gen_range(190.0f32..255.0), rng.gen_range(0.0f32..70.0))
        };
        self.flat_value(x0, y0, w, h, paper);
        let (gw, gh) = (4 * scale, 7 * scale);
        let mut gy = y0 + scale;
        while gy + gh <= y0 + h {
            let mut gx = x0 + scale;
            while gx + gw <= x0 + w {
                let bits: u16 = rng.gen();
                for cy in 0..5 {
                    for cx in 0..3 {
                        if bits >> (cy * 3 + cx) & 1 == 1 {
                            for y in 0..scale {
                                for x in 0..scale {
                                    self.set(gx + cx * scale + x, gy + cy * scale + y, ink);
                                }
                            }
                        }
                    }
                }
                gx += gw;
            }
            gy += gh;
        }
    }

    fn flat_value(&mut self, x0: usize, y0: usize, w: usize, h: usize, v: f32) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.set(x, y, v);
            }
        }
    }
}

/// Writes each sequence as `<dir>/<name>/<frame:04>.pgm`.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &[Sequence]) -> Result<()> {
    for s in corpus {
        let sub = dir.as_ref().join(&s.name);
        fs::create_dir_all(&sub)?;
        for (i, f) in s.frames.iter().enumerate() {
            write_pgm(sub.join(format!("{i:04}.pgm")), f)?;
        }
    }
    Ok(())
}

/// Reads a corpus: each subdirectory holding PGM files is one sequence. A directory
/// with PGM files directly inside is read as a single sequence named after it.
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Vec<Sequence>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        bail!(Precondition, "corpus directory {} does not exist", dir.display());
    }
    let read = |path: &Path, name: String| -> Result<Option<Sequence>> {
        let files = list_sequence(path)?;
        if files.is_empty() {
            return Ok(None);
        }
        let frames = files.iter().map(read_pgm).collect::<Result<_>>()?;
        Ok(Some(Sequence { name, frames }))
    };
    let own_name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "sequence".into());
    if let Some(s) = read(dir, own_name)? {
        return Ok(vec![s]);
    }
    let mut subdirs: Vec<_> =
        fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    subdirs.sort();
    let mut out = Vec::new();
    for sub in subdirs {
        let name = sub.file_name().unwrap().to_string_lossy().into_owned();
        if let Some(s) = read(&sub, name)? {
            out.push(s);
        }
    }
    if out.is_empty() {
        bail!(Precondition, "no PGM frames found under {}", dir.display());
    }
    Ok(out)
}
