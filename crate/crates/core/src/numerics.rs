//! Special functions, binomial kernels, bracketed root finding and log-log
//! slope fitting.
//!
//! The binomial pmf uses Loader's saddle-point form (Stirling-error table plus
//! a deviance term), which stays accurate to a few ulps in relative terms for
//! `n` in the tens of millions where log-gamma differences lose digits.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Convergence controls for the bisection solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl Tolerance {
    pub fn new(abs_tol: f64, rel_tol: f64, max_iter: usize) -> Result<Self> {
        if abs_tol.is_nan() || abs_tol <= 0.0 || rel_tol.is_nan() || rel_tol <= 0.0 || max_iter == 0 {
            return Err(Error::domain(format!(
                "tolerance requires abs_tol > 0, rel_tol > 0, max_iter >= 1 \
                 (got {abs_tol}, {rel_tol}, {max_iter})"
            )));
        }
        Ok(Self {
            abs_tol,
            rel_tol,
            max_iter,
        })
    }
}

/// Upper tail of the standard normal, `Q(x) = 1 - Phi(x) = erfc(x / sqrt 2) / 2`.
pub fn q_func(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("q_func argument must be finite, got {x}")));
    }
    Ok(q_unchecked(x))
}

#[inline]
pub(crate) fn q_unchecked(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal CDF.
#[inline]
pub(crate) fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse of [`q_func`]: the `x` with `Q(x) = p`.
///
/// Starts from Acklam's rational approximation of the normal quantile and
/// polishes with Halley steps on `Q` itself.
pub fn q_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("q_inv requires 0 < p < 1, got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Q(x) = p  <=>  Phi(-x) = p, so x = -Phi^{-1}(p).
    let mut x = -acklam_quantile(p);
    for _ in 0..4 {
        let err = q_unchecked(x) - p;
        let dens = normal_pdf(x);
        if dens == 0.0 {
            break;
        }
        // dQ/dx = -pdf; Halley correction keeps the deep tail quadratic.
        let step = err / dens;
        let step = step / (1.0 - 0.5 * x * step);
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

fn acklam_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

// lgamma(n + 1) - (n + 1/2) ln n + n - ln sqrt(2 pi), for n = 0..=15.
const STIRLING_ERR: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_26,
    0.041_340_695_955_409_3,
    0.027_677_925_684_998_34,
    0.020_790_672_103_765_093,
    0.016_644_691_189_821_192,
    0.013_876_128_823_070_748,
    0.011_896_709_945_891_77,
    0.010_411_265_261_972_096,
    0.009_255_462_182_712_733,
    0.008_330_563_433_362_87,
    0.007_573_675_487_951_841,
    0.006_942_840_107_209_53,
    0.006_408_994_188_004_207,
    0.005_951_370_112_758_848,
    0.005_554_733_551_962_801,
];

fn stirling_err(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        return STIRLING_ERR[n as usize];
    }
    let n = n as f64;
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, evaluated by series near `x = np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        if s.abs() < f64::MIN_POSITIVE {
            return s;
        }
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
    }
    x * (x / np).ln() + np - x
}

/// Log of the binomial pmf `C(n, k) p^k (1 - p)^(n - k)`.
pub fn log_binom_pmf(n: u64, k: u64, p: f64) -> Result<f64> {
    if k > n {
        return Err(Error::domain(format!(
            "log_binom_pmf requires k <= n, got k = {k}, n = {n}"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("log_binom_pmf requires 0 < p < 1, got {p}")));
    }
    Ok(log_binom_pmf_unchecked(n, k, p))
}

pub(crate) fn log_binom_pmf_unchecked(n: u64, k: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    let nf = n as f64;
    if k == 0 {
        if n == 0 {
            return 0.0;
        }
        return if p < 0.1 {
            -bd0(nf, nf * q) - nf * p
        } else {
            nf * (-p).ln_1p()
        };
    }
    if k == n {
        return if q < 0.1 {
            -bd0(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        };
    }
    let kf = k as f64;
    let rest = (n - k) as f64;
    let lc = stirling_err(n) - stirling_err(k) - stirling_err(n - k) - bd0(kf, nf * p) - bd0(rest, nf * q);
    // ln(2 pi k (n - k) / n) / 2
    let lf = LN_SQRT_2PI + 0.5 * (kf.ln() + (-kf / nf).ln_1p());
    lc - lf
}

/// Below this length the pmf is formed directly from an exact binomial
/// coefficient, which keeps small dyadic cases exact.
const DIRECT_PMF_MAX_N: u64 = 60;

pub(crate) fn binom_pmf(n: u64, k: u64, p: f64) -> f64 {
    if n <= DIRECT_PMF_MAX_N {
        let direct = binom_coeff(n, k) as f64 * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
        if direct >= f64::MIN_POSITIVE {
            return direct;
        }
    }
    log_binom_pmf_unchecked(n, k, p).exp()
}

fn binom_coeff(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |c, i| c * u128::from(n - i) / u128::from(i + 1)) as u64
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// `P(K <= k)` for `K ~ Bin(n, p)`. Negative `k` gives 0, `k >= n` gives 1.
pub fn binom_cdf(n: u64, k: i64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("binom_cdf requires 0 < p < 1, got {p}")));
    }
    Ok(binom_cdf_unchecked(n, k, p))
}

pub(crate) fn binom_cdf_unchecked(n: u64, k: i64, p: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    if k as u64 >= n {
        return 1.0;
    }
    let total: CompensatedSum = (0..=k as u64).map(|j| binom_pmf(n, j, p)).collect();
    total.value().clamp(0.0, 1.0)
}

/// Bisection on a sign-changing bracket. The bracket may be given in either
/// order; the iterate sequence is identical.
pub fn bisect_root<F>(f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(Error::NoSignChange {
            lo: a,
            hi: b,
            f_lo: fa,
            f_hi: fb,
        });
    }
    let a_negative = fa < 0.0;
    let mut mid = a + 0.5 * (b - a);
    for _ in 0..tol.max_iter {
        mid = a + 0.5 * (b - a);
        let fm = f(mid);
        if fm == 0.0 || fm.abs() <= tol.abs_tol {
            return Ok(mid);
        }
        if (fm < 0.0) == a_negative {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= tol.abs_tol + tol.rel_tol * mid.abs() {
            return Ok(a + 0.5 * (b - a));
        }
    }
    Err(Error::NoConvergence {
        best: mid,
        iterations: tol.max_iter,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::domain(format!(
            "slope fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::domain(format!(
            "slope fit needs positive coordinates, got ({x}, {y})"
        )));
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x.ln(), sy + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), (x, y)| {
        let dx = x.ln() - mx;
        (sxy + dx * (y.ln() - my), sxx + dx * dx)
    });
    if sxx == 0.0 {
        return Err(Error::domain("slope fit needs at least two distinct x values"));
    }
    Ok(sxy / sxx)
}

// Products like Te * (delta - b) land a few ulps off an integer; snap those
// before taking ceil/floor so lattice boundaries are classified consistently.
const SNAP: f64 = 1e-9;

#[inline]
pub(crate) fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= SNAP * x.abs().max(1.0) {
        r
    } else {
        x
    }
}

#[inline]
pub(crate) fn ceil_snapped(x: f64) -> f64 {
    snap(x).ceil()
}

#[inline]
pub(crate) fn floor_snapped(x: f64) -> f64 {
    snap(x).floor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn q_func_known_values() {
        assert_eq!(q_func(0.0).unwrap(), 0.5);
        assert!(q_func(8.0).unwrap() < 1e-14);
        // mpmath erfc at 40 digits
        assert_relative_eq!(q_func(1.2816).unwrap(), 0.099_991_500_097_675_17, max_relative = 1e-13);
        assert_relative_eq!(q_func(2.0).unwrap(), 0.022_750_131_948_179_21, max_relative = 1e-13);
        assert_relative_eq!(q_func(10.0).unwrap(), 7.619_853_024_160_526e-24, max_relative = 1e-12);
        assert_relative_eq!(q_func(-3.0).unwrap(), 0.998_650_101_968_369_9, max_relative = 1e-14);
        assert!(q_func(f64::NAN).is_err());
        assert!(q_func(f64::INFINITY).is_err());
    }

    #[test]
    fn q_inv_known_values() {
        assert_eq!(q_inv(0.5).unwrap(), 0.0);
        assert_relative_eq!(q_inv(0.1).unwrap(), 1.281_551_565_544_600_5, max_relative = 1e-13);
        assert_relative_eq!(q_inv(1e-10).unwrap(), 6.361_340_902_404_056, max_relative = 1e-12);
        assert_relative_eq!(q_inv(0.975).unwrap(), -1.959_963_984_540_054, max_relative = 1e-12);
        assert!((q_inv(q_func(2.0).unwrap()).unwrap() - 2.0).abs() < 1e-9);
        assert!((q_inv(5.725_571_222_524_577e-300).unwrap() - 37.0).abs() < 1e-9);
    }

    #[test]
    fn q_inv_rejects_out_of_range() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(q_inv(p), Err(Error::Domain(_))), "p = {p}");
        }
    }

    #[test]
    fn log_binom_pmf_examples() {
        assert_relative_eq!(log_binom_pmf(4, 2, 0.5).unwrap(), 0.375f64.ln(), max_relative = 1e-14);
        assert_eq!(log_binom_pmf(0, 0, 0.3).unwrap(), 0.0);
        assert_relative_eq!(log_binom_pmf(1, 1, 0.3).unwrap(), 0.3f64.ln(), max_relative = 1e-14);
        assert!(log_binom_pmf(3, 4, 0.5).is_err());
    }

    #[test]
    fn log_binom_pmf_matches_high_precision() {
        // mpmath log(binomial(n, k)) + k log p + (n - k) log(1 - p), 40 digits
        let cases = [
            (1000, 10, 0.3, -311.219_925_504_716_1),
            (10_000_000, 3_000_000, 0.3, -8.197_662_515_900_705),
            (10_000_000, 2_999_000, 0.3, -8.435_677_603_510_705),
            (100, 50, 0.5, -2.530_876_403_977_105),
            (60, 1, 0.999, -403.464_217_398_057_57),
        ];
        for (n, k, p, want) in cases {
            let got = log_binom_pmf(n, k, p).unwrap();
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "({n},{k},{p}): {got} vs {want}"
            );
        }
    }

    /// Exact small-n oracle: products of f64 factors, no log-gamma.
    fn pmf_by_product(n: u64, k: u64, p: f64) -> f64 {
        let mut c = 1.0;
        for j in 0..k {
            c *= (n - j) as f64 / (j + 1) as f64;
        }
        c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
    }

    #[test]
    fn pmf_matches_product_oracle() {
        for n in [1u64, 2, 5, 17, 40, 90] {
            for k in 0..=n {
                for p in [0.05, 0.3, 0.5, 0.93] {
                    let want = pmf_by_product(n, k, p);
                    let got = binom_pmf(n, k, p);
                    assert!((got - want).abs() <= 1e-13 * want + 1e-300, "({n},{k},{p})");
                }
            }
        }
    }

    #[test]
    fn pmf_sums_to_one() {
        for n in [1u64, 10, 333, 10_000] {
            for p in [0.01, 0.3, 0.5, 0.8] {
                let total: CompensatedSum = (0..=n).map(|k| binom_pmf(n, k, p)).collect();
                assert!((total.value() - 1.0).abs() < 1e-9, "n = {n}, p = {p}");
            }
        }
    }

    #[test]
    fn binom_cdf_examples() {
        assert_relative_eq!(binom_cdf(4, 1, 0.5).unwrap(), 0.3125, max_relative = 1e-15);
        assert_eq!(binom_cdf(10, -1, 0.5).unwrap(), 0.0);
        assert_eq!(binom_cdf(10, 10, 0.5).unwrap(), 1.0);
        assert_eq!(binom_cdf(10, 99, 0.5).unwrap(), 1.0);
        assert!(binom_cdf(10, 3, 0.0).is_err());
    }

    #[test]
    fn binom_cdf_monotone_and_consistent() {
        let (n, p) = (250u64, 0.37);
        let mut running = CompensatedSum::default();
        let mut prev = 0.0;
        for k in 0..n as i64 {
            running.add(binom_pmf(n, k as u64, p));
            let c = binom_cdf(n, k, p).unwrap();
            assert!(c >= prev);
            assert!((c - running.value()).abs() < 1e-12);
            prev = c;
        }
    }

    #[test]
    fn bisect_examples() {
        let tol = Tolerance::default();
        assert!((bisect_root(|x| x - 1.0, 0.0, 2.0, tol).unwrap() - 1.0).abs() < 1e-12);
        let r = bisect_root(|x| x * x - 2.0, 0.0, 2.0, tol).unwrap();
        assert!((r - std::f64::consts::SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn bisect_errors() {
        let tol = Tolerance::default();
        assert!(matches!(
            bisect_root(|x| x * x + 1.0, -1.0, 1.0, tol),
            Err(Error::NoSignChange { .. })
        ));
        let tight = Tolerance::new(1e-300, 1e-300, 3).unwrap();
        match bisect_root(|x| x - 0.3, 0.0, 1.0, tight) {
            Err(Error::NoConvergence { best, iterations }) => {
                assert_eq!(iterations, 3);
                assert!((best - 0.375).abs() < 1e-15);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn tolerance_validation() {
        assert!(Tolerance::new(0.0, 1e-10, 10).is_err());
        assert!(Tolerance::new(1e-12, -1.0, 10).is_err());
        assert!(Tolerance::new(1e-12, 1e-10, 0).is_err());
    }

    #[test]
    fn slope_examples() {
        assert_relative_eq!(
            fit_loglog_slope(&[(1.0, 1.0), (10.0, 10.0)]).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            fit_loglog_slope(&[(1.0, 2.0), (100.0, 2.0)]).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            fit_loglog_slope(&[(1.0, 1.0), (8.0, 4.0)]).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-14
        );
        assert!(fit_loglog_slope(&[(1.0, 1.0)]).is_err());
        assert!(fit_loglog_slope(&[(1.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, -2.0)]).is_err());
    }

    #[test]
    fn snapping_absorbs_rounding() {
        assert_eq!(ceil_snapped(100.0 * (0.3 - 0.05)), 25.0);
        assert_eq!(floor_snapped(100.0 * (1.0 - 0.29)), 71.0);
        assert_eq!(ceil_snapped(11.25), 12.0);
    }

    proptest! {
        #[test]
        fn q_symmetry(x in -30.0f64..30.0) {
            let s = q_func(x).unwrap() + q_func(-x).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn q_strictly_decreasing(x in -8.0f64..8.0, dx in 1e-3f64..1.0) {
            prop_assert!(q_func(x + dx).unwrap() < q_func(x).unwrap());
        }

        #[test]
        fn q_inv_round_trip(p in 1e-12f64..0.999_999) {
            let x = q_inv(p).unwrap();
            prop_assert!((q_func(x).unwrap() - p).abs() < 1e-10);
            prop_assert!((q_func(x).unwrap() - p).abs() <= 1e-12 * p.max(1e-3));
        }

        #[test]
        fn bisect_swap_invariant(root in -5.0f64..5.0) {
            let f = |x: f64| (x - root) * (1.0 + x * x);
            let tol = Tolerance::default();
            let a = bisect_root(f, -10.0, 10.0, tol).unwrap();
            let b = bisect_root(f, 10.0, -10.0, tol).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!((a - root).abs() < 1e-9);
        }
    }
}
