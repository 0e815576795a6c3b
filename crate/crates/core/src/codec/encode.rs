use std::collections::BTreeMap;

use rayon::prelude::*;

use super::dct::{dct2d, idct2d};
use super::frame::FramePlane;
use super::partition::{partition_frame, Block, PartitionMap};
use crate::error::{bail, Result};

/// Quantization parameter with its derived uniform step `2^((qp - 4) / 6)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpConfig {
    qp: u8,
    quant_step: f64,
}

impl QpConfig {
    pub const MAX_QP: u8 = 51;

    pub fn new(qp: u8) -> Result<Self> {
        if qp > Self::MAX_QP {
            bail!(Precondition, "qp {qp} outside [0, {}]", Self::MAX_QP);
        }
        Ok(Self { qp, quant_step: 2f64.powf((qp as f64 - 4.0) / 6.0) })
    }

    pub fn qp(&self) -> u8 {
        self.qp
    }

    pub fn quant_step(&self) -> f64 {
        self.quant_step
    }
}

/// Estimated bits for one coded frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RateEstimate {
    pub payload_bits: f64,
    pub signaling_bits: u64,
    pub total_bits: f64,
}

impl RateEstimate {
    pub fn new(payload_bits: f64, signaling_bits: u64) -> Self {
        Self { payload_bits, signaling_bits, total_bits: payload_bits + signaling_bits as f64 }
    }

    /// Adds side-information bits (e.g. per-patch model flags).
    pub fn with_extra_signaling(self, bits: u64) -> Self {
        Self::new(self.payload_bits, self.signaling_bits + bits)
    }
}

impl std::ops::Add for RateEstimate {
    type Output = RateEstimate;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.payload_bits + rhs.payload_bits, self.signaling_bits + rhs.signaling_bits)
    }
}

/// Output of [`encode_decode`].
#[derive(Clone, Debug, PartialEq)]
pub struct CodedFrame {
    pub decoded: FramePlane,
    pub partition: PartitionMap,
    pub rate: RateEstimate,
}

/// Zeroth-order entropy of the symbols, multiplied by their count.
fn entropy_bits(symbols: &[i64]) -> f64 {
    let mut hist: BTreeMap<i64, usize> = BTreeMap::new();
    for &s in symbols {
        *hist.entry(s).or_default() += 1;
    }
    let n = symbols.len() as f64;
    let mut bits = 0.0;
    for &count in hist.values() {
        let p = count as f64 / n;
        bits -= count as f64 * p.log2();
    }
    bits
}

fn code_block(frame: &FramePlane, b: Block, step: f64) -> Result<(Vec<u8>, f64)> {
    let samples: Vec<f64> = frame.region(b.x, b.y, b.size, b.size)?.into_iter().map(f64::from).collect();
    let coeffs = dct2d(&samples, b.size)?;
    let levels: Vec<i64> = coeffs.iter().map(|c| (c / step).round() as i64).collect();
    let dequant: Vec<f64> = levels.iter().map(|&q| q as f64 * step).collect();
    let recon = idct2d(&dequant, b.size)?.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Ok((recon, entropy_bits(&levels)))
}

/// Codes every block of an existing partition.
pub fn encode_with_partition(
    frame: &FramePlane,
    partition: &PartitionMap,
    qp: QpConfig,
) -> Result<(FramePlane, RateEstimate)> {
    if partition.frame_width() != frame.width() || partition.frame_height() != frame.height() {
        bail!(Shape, "partition does not match frame dimensions");
    }
    let coded: Vec<(Vec<u8>, f64)> =
        partition.blocks().par_iter().map(|&b| code_block(frame, b, qp.quant_step())).collect::<Result<_>>()?;
    let mut decoded = FramePlane::filled(frame.width(), frame.height(), 0)?;
    let mut payload = 0.0;
    for (b, (recon, bits)) in partition.blocks().iter().zip(coded) {
        decoded.put_region(b.x, b.y, b.size, b.size, &recon)?;
        payload += bits;
    }
    Ok((decoded, RateEstimate::new(payload, partition.split_decisions() as u64)))
}

/// Partition, transform, quantize and reconstruct one frame.
pub fn encode_decode(frame: &FramePlane, qp: QpConfig, split_threshold: f64) -> Result<CodedFrame> {
    let partition = partition_frame(frame, split_threshold)?;
    let (decoded, rate) = encode_with_partition(frame, &partition, qp)?;
    Ok(CodedFrame { decoded, partition, rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::partition::DEFAULT_SPLIT_THRESHOLD;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn psnr_oracle(a: &FramePlane, b: &FramePlane) -> f64 {
        let mse = a.samples().iter().zip(b.samples()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>()
            / a.samples().len() as f64;
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }

    fn random_frame(seed: u64) -> FramePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FramePlane::from_fn(64, 64, |_, _| rng.gen()).unwrap()
    }

    fn smooth_frame(seed: u64) -> FramePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c): (f64, f64, f64) = (rng.gen_range(0.02..0.2), rng.gen_range(0.02..0.2), rng.gen_range(0.0..6.0));
        FramePlane::from_fn(128, 128, |x, y| {
            let v = 128.0 + 60.0 * (a * x as f64 + c).sin() + 50.0 * (b * y as f64).cos() + ((x * y) % 7) as f64;
            v.clamp(0.0, 255.0) as u8
        })
        .unwrap()
    }

    #[test]
    fn qp_step_mapping() {
        assert_eq!(QpConfig::new(4).unwrap().quant_step(), 1.0);
        assert!((QpConfig::new(10).unwrap().quant_step() - 2.0).abs() < 1e-12);
        assert!((QpConfig::new(37).unwrap().quant_step() - 2f64.powf(5.5)).abs() < 1e-12);
        assert!(QpConfig::new(52).is_err());
    }

    #[test]
    fn fine_quantizer_is_near_lossless() {
        let qp = QpConfig::new(4).unwrap();
        for seed in 0..5 {
            let f = random_frame(seed);
            let coded = encode_decode(&f, qp, DEFAULT_SPLIT_THRESHOLD).unwrap();
            let p = psnr_oracle(&f, &coded.decoded);
            assert!(p >= 48.0, "seed {seed}: {p} dB");
        }
    }

    #[test]
    fn constant_frames_survive_exactly() {
        for qp in [22, 27, 32, 37] {
            for v in [0u8, 17, 128, 200, 255] {
                let f = FramePlane::filled(128, 64, v).unwrap();
                let coded = encode_decode(&f, QpConfig::new(qp).unwrap(), DEFAULT_SPLIT_THRESHOLD).unwrap();
                assert_eq!(coded.decoded, f, "qp {qp} value {v}");
            }
        }
    }

    #[test]
    fn rate_falls_as_qp_rises() {
        for seed in 0..4 {
            let f = smooth_frame(seed);
            let r22 = encode_decode(&f, QpConfig::new(22).unwrap(), DEFAULT_SPLIT_THRESHOLD).unwrap();
            let r37 = encode_decode(&f, QpConfig::new(37).unwrap(), DEFAULT_SPLIT_THRESHOLD).unwrap();
            assert!(r22.rate.total_bits > r37.rate.total_bits);
            assert!(psnr_oracle(&f, &r22.decoded) > psnr_oracle(&f, &r37.decoded));
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let f = smooth_frame(9);
        let qp = QpConfig::new(32).unwrap();
        let a = encode_decode(&f, qp, DEFAULT_SPLIT_THRESHOLD).unwrap();
        let b = encode_decode(&f, qp, DEFAULT_SPLIT_THRESHOLD).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rate.total_bits, a.rate.payload_bits + a.rate.signaling_bits as f64);
    }

    #[test]
    fn entropy_of_uniform_symbols() {
        assert_eq!(entropy_bits(&[5; 16]), 0.0);
        assert!((entropy_bits(&[0, 1, 2, 3]) - 8.0).abs() < 1e-12);
    }
}
