use crate::codec::FramePlane;
use crate::error::{bail, Result};

/// Reported for identical inputs so differences of PSNRs stay finite.
pub const PSNR_CAP_DB: f64 = 100.0;

const PEAK: f64 = 255.0;

/// Mean squared error between two 8-bit sample slices.
pub fn mse_samples(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        bail!(Shape, "mse of {} against {} samples", a.len(), b.len());
    }
    if a.is_empty() {
        bail!(Shape, "mse of empty rasters");
    }
    let sse: u64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sse as f64 / a.len() as f64)
}

/// PSNR for a given MSE, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr_samples(a: &[u8], b: &[u8]) -> Result<f64> {
    Ok(psnr_from_mse(mse_samples(a, b)?))
}

pub fn psnr(a: &FramePlane, b: &FramePlane) -> Result<f64> {
    if !a.same_dims(b) {
        bail!(Shape, "psnr of {}x{} against {}x{}", a.width(), a.height(), b.width(), b.height());
    }
    psnr_samples(a.samples(), b.samples())
}

/// Per-frame PSNR gains of a processed sequence over its baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaPsnrReport {
    pub baseline_db: Vec<f64>,
    pub processed_db: Vec<f64>,
    pub delta_db: Vec<f64>,
    pub mean_delta_db: f64,
}

pub fn delta_psnr_report(
    baseline: &[FramePlane],
    processed: &[FramePlane],
    originals: &[FramePlane],
) -> Result<DeltaPsnrReport> {
    if baseline.len() != originals.len() || processed.len() != originals.len() {
        bail!(
            Shape,
            "frame counts differ: {} baseline, {} processed, {} originals",
            baseline.len(),
            processed.len(),
            originals.len()
        );
    }
    if originals.is_empty() {
        bail!(Precondition, "no frames to report on");
    }
    let mut report = DeltaPsnrReport {
        baseline_db: Vec::with_capacity(originals.len()),
        processed_db: Vec::with_capacity(originals.len()),
        delta_db: Vec::with_capacity(originals.len()),
        mean_delta_db: 0.0,
    };
    for ((b, p), o) in baseline.iter().zip(processed).zip(originals) {
        let pb = psnr(b, o)?;
        let pp = psnr(p, o)?;
        report.baseline_db.push(pb);
        report.processed_db.push(pp);
        report.delta_db.push(pp - pb);
    }
    report.mean_delta_db = report.delta_db.iter().sum::<f64>() / originals.len() as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64) -> FramePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FramePlane::from_fn(16, 16, |_, _| rng.gen()).unwrap()
    }

    #[test]
    fn identical_frames_hit_the_cap() {
        let f = noise(1);
        assert_eq!(psnr(&f, &f).unwrap(), 100.0);
    }

    #[test]
    fn off_by_one_everywhere() {
        let a = FramePlane::filled(16, 8, 100).unwrap();
        let b = FramePlane::filled(16, 8, 101).unwrap();
        let expected = 10.0 * (255.0f64 * 255.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 48.1308).abs() < 1e-4);
    }

    #[test]
    fn symmetric_and_dimension_checked() {
        let (a, b) = (noise(2), noise(3));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let c = FramePlane::filled(8, 8, 0).unwrap();
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn delta_report_cases() {
        let originals: Vec<_> = (0..3).map(noise).collect();
        let baseline: Vec<_> = (10..13).map(noise).collect();
        let same = delta_psnr_report(&baseline, &baseline, &originals).unwrap();
        assert!(same.delta_db.iter().all(|&d| d == 0.0));
        assert_eq!(same.mean_delta_db, 0.0);
        let perfect = delta_psnr_report(&baseline, &originals, &originals).unwrap();
        for (d, b) in perfect.delta_db.iter().zip(&perfect.baseline_db) {
            assert!(*d > 0.0);
            assert_eq!(*d, 100.0 - b);
        }
        assert!(delta_psnr_report(&baseline[..2], &baseline, &originals).is_err());
    }

    #[test]
    fn delta_report_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let originals: Vec<_> = (0..4).map(|s| noise(s + 20)).collect();
        let perturb = |f: &FramePlane, amp: i32, rng: &mut ChaCha8Rng| {
            let mut g = f.clone();
            for v in g.samples_mut() {
                *v = (*v as i32 + rng.gen_range(-amp..=amp)).clamp(0, 255) as u8;
            }
            g
        };
        let baseline: Vec<_> = originals.iter().map(|f| perturb(f, 12, &mut rng)).collect();
        let processed: Vec<_> = originals.iter().map(|f| perturb(f, 5, &mut rng)).collect();
        let r = delta_psnr_report(&baseline, &processed, &originals).unwrap();
        let mut sum = 0.0;
        for i in 0..4 {
            let mse = |x: &FramePlane| {
                x.samples()
                    .iter()
                    .zip(originals[i].samples())
                    .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
                    .sum::<f64>()
                    / 256.0
            };
            let d = 10.0 * (65025.0 / mse(&processed[i])).log10() - 10.0 * (65025.0 / mse(&baseline[i])).log10();
            assert!((r.delta_db[i] - d).abs() < 1e-9);
            sum += d;
        }
        assert!((r.mean_delta_db - sum / 4.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn psnr_strictly_decreasing_in_mse(a in 1e-6f64..1e4, b in 1e-6f64..1e4) {
            prop_assume!(a < b);
            prop_assume!(psnr_from_mse(a) < PSNR_CAP_DB);
            prop_assert!(psnr_from_mse(a) > psnr_from_mse(b));
        }
    }
}
