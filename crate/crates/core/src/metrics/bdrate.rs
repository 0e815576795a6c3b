//! Bjontegaard delta rate with the classic cubic fit of `log10(rate)` against PSNR.

use nalgebra::{Matrix4, Vector4};

use crate::error::{bail, Result};

/// Number of operating points per curve (one per QP).
pub const BD_POINTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub rate_bits: f64,
    pub psnr_db: f64,
}

impl RdPoint {
    pub fn new(rate_bits: f64, psnr_db: f64) -> Result<Self> {
        if !(rate_bits > 0.0 && rate_bits.is_finite()) {
            bail!(Precondition, "rate must be positive and finite, got {rate_bits}");
        }
        if !psnr_db.is_finite() {
            bail!(Precondition, "psnr must be finite, got {psnr_db}");
        }
        Ok(Self { rate_bits, psnr_db })
    }
}

/// Operating points sorted by strictly increasing rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    /// Sorts by rate; rejects fewer than four points and repeated rates.
    pub fn new(mut points: Vec<RdPoint>) -> Result<Self> {
        if points.len() < BD_POINTS {
            bail!(Precondition, "an RD curve needs at least {BD_POINTS} points, got {}", points.len());
        }
        for p in &points {
            RdPoint::new(p.rate_bits, p.psnr_db)?;
        }
        points.sort_by(|a, b| a.rate_bits.total_cmp(&b.rate_bits));
        if points.windows(2).any(|w| w[0].rate_bits >= w[1].rate_bits) {
            bail!(Precondition, "RD curve rates must be distinct");
        }
        Ok(Self { points })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(r, p)| RdPoint::new(r, p)).collect::<Result<_>>()?)
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    fn psnr_range(&self) -> (f64, f64) {
        let lo = self.points.iter().map(|p| p.psnr_db).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| p.psnr_db).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Cubic `c0 + c1 t + c2 t^2 + c3 t^3` in the centred variable `t = psnr - origin`.
#[derive(Clone, Copy, Debug)]
pub struct LogRateCubic {
    pub origin: f64,
    pub coeffs: [f64; 4],
}

impl LogRateCubic {
    pub fn eval(&self, psnr: f64) -> f64 {
        let t = psnr - self.origin;
        self.coeffs[0] + t * (self.coeffs[1] + t * (self.coeffs[2] + t * self.coeffs[3]))
    }

    fn antiderivative(&self, psnr: f64) -> f64 {
        let t = psnr - self.origin;
        let c = &self.coeffs;
        t * (c[0] + t * (c[1] / 2.0 + t * (c[2] / 3.0 + t * c[3] / 4.0)))
    }

    pub fn integrate(&self, lo: f64, hi: f64) -> f64 {
        self.antiderivative(hi) - self.antiderivative(lo)
    }
}

/// Fits `log10(rate)` as a cubic in PSNR through the curve's four points.
pub fn fit_log_rate(curve: &RdCurve, origin: f64) -> Result<LogRateCubic> {
    if curve.points.len() != BD_POINTS {
        bail!(Precondition, "BD-rate needs exactly {BD_POINTS} points per curve, got {}", curve.points.len());
    }
    let mut a = Matrix4::zeros();
    let mut b = Vector4::zeros();
    for (i, p) in curve.points.iter().enumerate() {
        let t = p.psnr_db - origin;
        for j in 0..4 {
            a[(i, j)] = t.powi(j as i32);
        }
        b[i] = p.rate_bits.log10();
    }
    let c = a.lu().solve(&b).ok_or_else(|| crate::Error::Numeric("RD points have repeated PSNR values".into()))?;
    if c.iter().any(|v| !v.is_finite()) {
        bail!(Numeric, "cubic fit is not finite");
    }
    Ok(LogRateCubic { origin, coeffs: [c[0], c[1], c[2], c[3]] })
}

/// Common PSNR interval of two curves.
pub fn overlap(anchor: &RdCurve, test: &RdCurve) -> Result<(f64, f64)> {
    let (alo, ahi) = anchor.psnr_range();
    let (tlo, thi) = test.psnr_range();
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if hi <= lo {
        bail!(Precondition, "RD curves share no PSNR range ([{alo}, {ahi}] vs [{tlo}, {thi}])");
    }
    Ok((lo, hi))
}

/// Average rate difference of `test` against `anchor` at equal quality, in percent.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    let (lo, hi) = overlap(anchor, test)?;
    let origin = 0.5 * (lo + hi);
    let fa = fit_log_rate(anchor, origin)?;
    let ft = fit_log_rate(test, origin)?;
    let avg = (ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn anchor() -> RdCurve {
        RdCurve::from_pairs(&[(1000.0, 30.1), (1800.0, 33.0), (3300.0, 36.2), (6100.0, 39.4)]).unwrap()
    }

    fn scaled(c: &RdCurve, s: f64) -> RdCurve {
        RdCurve::new(c.points().iter().map(|p| RdPoint::new(p.rate_bits * s, p.psnr_db).unwrap()).collect()).unwrap()
    }

    /// Lagrange form of the cubic through the four points, integrated by fine trapezoids.
    fn oracle(a: &RdCurve, t: &RdCurve) -> f64 {
        let lagrange = |c: &RdCurve, x: f64| {
            let p = c.points();
            (0..4)
                .map(|i| {
                    let mut w = p[i].rate_bits.log10();
                    for j in (0..4).filter(|&j| j != i) {
                        w *= (x - p[j].psnr_db) / (p[i].psnr_db - p[j].psnr_db);
                    }
                    w
                })
                .sum::<f64>()
        };
        let lo = a.psnr_range().0.max(t.psnr_range().0);
        let hi = a.psnr_range().1.min(t.psnr_range().1);
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let x = lo + k as f64 * h;
            let d = lagrange(t, x) - lagrange(a, x);
            acc += if k == 0 || k == n { 0.5 * d } else { d };
        }
        (10f64.powf(acc * h / (hi - lo)) - 1.0) * 100.0
    }

    #[test]
    fn identical_curves_give_zero() {
        assert!(bd_rate(&anchor(), &anchor()).unwrap().abs() < 1e-9);
    }

    #[test]
    fn uniform_rate_scaling() {
        let r = bd_rate(&anchor(), &scaled(&anchor(), 0.9)).unwrap();
        assert!((r + 10.0).abs() < 0.01, "{r}");
        assert!((r + 10.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_quality_ranges_fail() {
        let high = RdCurve::from_pairs(&[(1.0, 50.0), (2.0, 51.0), (3.0, 52.0), (4.0, 53.0)]).unwrap();
        assert!(bd_rate(&anchor(), &high).is_err());
    }

    #[test]
    fn curve_validation() {
        assert!(RdCurve::from_pairs(&[(1.0, 30.0), (2.0, 31.0), (3.0, 32.0)]).is_err());
        assert!(RdCurve::from_pairs(&[(1.0, 30.0), (1.0, 31.0), (3.0, 32.0), (4.0, 33.0)]).is_err());
        assert!(RdPoint::new(0.0, 30.0).is_err());
        let five = RdCurve::from_pairs(&[(1.0, 30.0), (2.0, 31.0), (3.0, 32.0), (4.0, 33.0), (5.0, 34.0)]).unwrap();
        assert!(bd_rate(&five, &five).is_err());
        let unsorted = RdCurve::from_pairs(&[(4.0, 33.0), (1.0, 30.0), (3.0, 32.0), (2.0, 31.0)]).unwrap();
        assert_eq!(unsorted.points()[0].rate_bits, 1.0);
    }

    #[test]
    fn hand_built_curves_match_trapezoid_oracle() {
        let test = RdCurve::from_pairs(&[(900.0, 30.5), (1500.0, 33.4), (2900.0, 36.0), (5600.0, 39.9)]).unwrap();
        let got = bd_rate(&anchor(), &test).unwrap();
        let want = oracle(&anchor(), &test);
        assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
    }

    fn curve_strategy() -> impl Strategy<Value = RdCurve> {
        (500.0f64..2000.0, prop::array::uniform3(1.3f64..2.2), 28.0f64..32.0, prop::array::uniform3(1.5f64..4.0))
            .prop_map(|(r0, rs, p0, ps)| {
                let mut pairs = vec![(r0, p0)];
                for i in 0..3 {
                    let (r, p) = pairs[i];
                    pairs.push((r * rs[i], p + ps[i]));
                }
                RdCurve::from_pairs(&pairs).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn random_curves_match_oracle(a in curve_strategy(), t in curve_strategy()) {
            let got = bd_rate(&a, &t).unwrap();
            let want = oracle(&a, &t);
            prop_assume!(want.abs() > 1e-3);
            prop_assert!(((got - want) / want).abs() < 1e-6, "{} vs {}", got, want);
        }

        #[test]
        fn exchange_antisymmetry(a in curve_strategy(), t in curve_strategy()) {
            let ab = bd_rate(&a, &t).unwrap();
            let ba = bd_rate(&t, &a).unwrap();
            prop_assert!((ab + ba / (1.0 + ba / 100.0)).abs() < 1e-9, "{} {}", ab, ba);
        }

        #[test]
        fn common_rate_scale_invariance(a in curve_strategy(), t in curve_strategy(), s in 0.01f64..100.0) {
            let base = bd_rate(&a, &t).unwrap();
            let both = bd_rate(&scaled(&a, s), &scaled(&t, s)).unwrap();
            prop_assert!((base - both).abs() < 1e-9 * (1.0 + base.abs()));
        }
    }
}
