//! Orthonormal type-II 2-D DCT via separable basis multiplication.

use std::sync::OnceLock;

use crate::error::{bail, Result};

const SIZES: [usize; 6] = [2, 4, 8, 16, 32, 64];

/// Row `k` holds the k-th orthonormal DCT-II basis vector.
fn basis(n: usize) -> Result<&'static [f64]> {
    static TABLES: [OnceLock<Vec<f64>>; 6] = [const { OnceLock::new() }; 6];
    let Some(slot) = SIZES.iter().position(|&s| s == n) else {
        bail!(Precondition, "unsupported DCT size {n}; expected one of {SIZES:?}");
    };
    Ok(TABLES[slot].get_or_init(|| {
        let mut c = vec![0.0; n * n];
        let nf = n as f64;
        for k in 0..n {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            for i in 0..n {
                c[k * n + i] = scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos();
            }
        }
        c
    }))
}

fn check_len(block: &[f64], n: usize) -> Result<()> {
    if block.len() != n * n {
        bail!(Shape, "expected a {n}x{n} block ({} values), got {}", n * n, block.len());
    }
    Ok(())
}

/// `C * X * C^T` when `forward`, `C^T * X * C` otherwise.
fn separable(block: &[f64], n: usize, c: &[f64], forward: bool) -> Vec<f64> {
    let at = |k: usize, i: usize| if forward { c[k * n + i] } else { c[i * n + k] };
    let mut tmp = vec![0.0; n * n];
    // rows: tmp[r][k] = sum_i X[r][i] * M[k][i]
    for r in 0..n {
        let row = &block[r * n..(r + 1) * n];
        for k in 0..n {
            let mut acc = 0.0;
            for (i, &v) in row.iter().enumerate() {
                acc += v * at(k, i);
            }
            tmp[r * n + k] = acc;
        }
    }
    // columns: out[k][col] = sum_r M[k][r] * tmp[r][col]
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        let dst = &mut out[k * n..(k + 1) * n];
        for r in 0..n {
            let m = at(k, r);
            if m == 0.0 {
                continue;
            }
            for (d, &t) in dst.iter_mut().zip(&tmp[r * n..(r + 1) * n]) {
                *d += m * t;
            }
        }
    }
    out
}

/// Forward orthonormal DCT-II of an `n`x`n` row-major block.
pub fn dct2d(block: &[f64], n: usize) -> Result<Vec<f64>> {
    let c = basis(n)?;
    check_len(block, n)?;
    Ok(separable(block, n, c, true))
}

/// Inverse of [`dct2d`].
pub fn idct2d(coeffs: &[f64], n: usize) -> Result<Vec<f64>> {
    let c = basis(n)?;
    check_len(coeffs, n)?;
    Ok(separable(coeffs, n, c, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(n^4) definition of the orthonormal DCT-II.
    fn dct_oracle(x: &[f64], n: usize) -> Vec<f64> {
        let nf = n as f64;
        let alpha = |k: usize| if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        let mut out = vec![0.0; n * n];
        for u in 0..n {
            for v in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += x[i * n + j]
                            * (std::f64::consts::PI * (2 * i + 1) as f64 * u as f64 / (2.0 * nf)).cos()
                            * (std::f64::consts::PI * (2 * j + 1) as f64 * v as f64 / (2.0 * nf)).cos();
                    }
                }
                out[u * n + v] = alpha(u) * alpha(v) * s;
            }
        }
        out
    }

    fn random_block(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n).map(|_| rng.gen_range(-128.0..128.0)).collect()
    }

    #[test]
    fn zeros_map_to_zeros() {
        assert!(dct2d(&[0.0; 64], 8).unwrap().iter().all(|&v| v == 0.0));
        assert!(idct2d(&[0.0; 64], 8).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_block_is_pure_dc() {
        let c = 13.5;
        let oracle = dct_oracle(&[c; 64], 8);
        let got = dct2d(&[c; 64], 8).unwrap();
        assert!((oracle[0] - 8.0 * c).abs() < 1e-9);
        assert!((got[0] - 8.0 * c).abs() < 1e-9);
        assert!(got[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn dc_only_inverts_to_constant() {
        let c = -3.25;
        let mut coeffs = [0.0; 64];
        coeffs[0] = 8.0 * c;
        assert!(idct2d(&coeffs, 8).unwrap().iter().all(|v| (v - c).abs() < 1e-9));
    }

    #[test]
    fn matches_direct_definition() {
        for &n in &[2, 4, 8, 16] {
            let b = random_block(n, n as u64);
            let got = dct2d(&b, n).unwrap();
            let want = dct_oracle(&b, n);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "n={n}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn roundtrip_and_parseval() {
        for &n in &SIZES {
            let b = random_block(n, 100 + n as u64);
            let c = dct2d(&b, n).unwrap();
            let back = idct2d(&c, n).unwrap();
            let max_err = b.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(max_err < 1e-4, "n={n} roundtrip err {max_err}");
            let e1: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let e2: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((e1 - e2).abs() < 1e-4, "n={n} parseval {e1} vs {e2}");
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(dct2d(&[0.0; 9], 3).is_err());
        assert!(dct2d(&[0.0; 63], 8).is_err());
        assert!(idct2d(&[0.0; 128 * 128], 128).is_err());
    }
}
