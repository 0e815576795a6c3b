use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{dct2d, FramePlane};
use crate::dataset::PATCH_SIZE;
use crate::error::{bail, Result};

/// Dimensionality of the projected feature space.
pub const REDUCED_DIM: usize = 2;

const POWER_ITERS: usize = 500;
const POWER_TOL: f64 = 1e-12;

/// Zigzag-scanned DCT magnitude of a patch's coding error.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub coefficients: Vec<f64>,
}

/// Row-major indices of an `n`x`n` block in JPEG zigzag order.
pub fn zigzag_order(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n * n);
    for s in 0..(2 * n).saturating_sub(1) {
        let lo = s.saturating_sub(n - 1);
        let hi = s.min(n - 1);
        if s % 2 == 0 {
            order.extend((lo..=hi).rev().map(|r| r * n + (s - r)));
        } else {
            order.extend((lo..=hi).map(|r| r * n + (s - r)));
        }
    }
    order
}

/// Reorders a row-major `n`x`n` block into zigzag order.
pub fn zigzag(block: &[f64], n: usize) -> Result<Vec<f64>> {
    if block.len() != n * n {
        bail!(Shape, "zigzag expects {} values, got {}", n * n, block.len());
    }
    Ok(zigzag_order(n).into_iter().map(|i| block[i]).collect())
}

pub fn compute_feature_vector(decoded: &FramePlane, original: &FramePlane) -> Result<FeatureVector> {
    for p in [decoded, original] {
        if p.width() != PATCH_SIZE || p.height() != PATCH_SIZE {
            bail!(Shape, "feature patches must be {PATCH_SIZE}x{PATCH_SIZE}, got {}x{}", p.width(), p.height());
        }
    }
    let diff: Vec<f64> =
        decoded.samples().iter().zip(original.samples()).map(|(&a, &b)| (a as f64 - b as f64).abs()).collect();
    let coeffs = dct2d(&diff, PATCH_SIZE)?;
    Ok(FeatureVector { coefficients: zigzag(&coeffs, PATCH_SIZE)? })
}

/// Linear projection onto the leading principal axes of a feature set.
#[derive(Clone, Debug)]
pub struct Projection {
    mean: Vec<f64>,
    axes: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

impl Projection {
    /// Fits `dims` principal axes by power iteration with deflation.
    ///
    /// Axes are sign-normalised so that their largest-magnitude entry is positive.
    pub fn fit(features: &[FeatureVector], dims: usize, seed: u64) -> Result<Self> {
        let Some(first) = features.first() else {
            bail!(Precondition, "cannot fit a projection to no features");
        };
        let len = first.coefficients.len();
        if features.iter().any(|f| f.coefficients.len() != len) {
            bail!(Shape, "feature vectors differ in length");
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; len];
        for f in features {
            for (m, v) in mean.iter_mut().zip(&f.coefficients) {
                *m += v / n;
            }
        }
        let centered: Vec<Vec<f64>> =
            features.iter().map(|f| f.coefficients.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
        let total_var: f64 = centered.iter().map(|c| dot(c, c)).sum();
        if total_var <= f64::EPSILON * n {
            bail!(Degenerate, "all feature vectors are identical; use PSNR-based initialization instead");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut axes: Vec<Vec<f64>> = Vec::with_capacity(dims);
        for _ in 0..dims {
            let mut v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let deflate = |v: &mut Vec<f64>, axes: &[Vec<f64>]| {
                for a in axes {
                    let p = dot(v, a);
                    v.iter_mut().zip(a).for_each(|(x, y)| *x -= p * y);
                }
            };
            deflate(&mut v, &axes);
            normalize(&mut v);
            for _ in 0..POWER_ITERS {
                let mut next = vec![0.0; len];
                for c in &centered {
                    let p = dot(c, &v);
                    next.iter_mut().zip(c).for_each(|(x, y)| *x += p * y);
                }
                deflate(&mut next, &axes);
                if normalize(&mut next) <= f64::EPSILON * total_var {
                    v = vec![0.0; len];
                    break;
                }
                let change = next.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                v = next;
                if change < POWER_TOL {
                    break;
                }
            }
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            axes.push(v);
        }
        Ok(Self { mean, axes })
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn apply(&self, feature: &FeatureVector) -> Result<Vec<f64>> {
        if feature.coefficients.len() != self.mean.len() {
            bail!(
                Shape,
                "feature has {} coefficients, projection expects {}",
                feature.coefficients.len(),
                self.mean.len()
            );
        }
        let centered: Vec<f64> = feature.coefficients.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self.axes.iter().map(|a| dot(&centered, a)).collect())
    }
}
