//! Normal distribution helpers, Monte Carlo estimates and seeded streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent child stream; `stream` distinguishes siblings of one seed.
pub fn child_rng(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail, accurate far into the tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Standard normal quantile (Wichura's AS241, about 1e-16 relative error).
/// Returns ±∞ at the endpoints and NaN outside [0,1].
#[allow(clippy::excessive_precision)] // published coefficients, kept verbatim
pub fn norm_ppf(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r + 6.726_577_092_700_87e4) * r + 4.592_195_393_154_987e4) * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r + 3.930_789_580_009_271e4) * r + 2.121_379_430_158_659_7e4) * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r + 2.417_807_251_774_506e-1) * r + 1.270_458_252_452_368_4) * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r + 1.519_866_656_361_645_7e-2) * r + 1.481_039_764_274_800_8e-1) * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        let r = r - 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r + 1.242_660_947_388_078_4e-3) * r + 2.653_218_952_657_612_4e-2) * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r + 1.846_318_317_510_054_8e-5) * r + 7.868_691_311_456_133e-4) * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Upper percentile z_a = Φ⁻¹(1 − a).
pub fn z_upper(a: f64) -> f64 {
    -norm_ppf(a)
}

/// Numerically stable log Σ exp.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY || mx.is_nan() {
        return mx;
    }
    mx + xs.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln()
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, se: 0.0, n: 0 }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let mut w = Welford::default();
        xs.iter().for_each(|&x| w.push(x));
        w.estimate()
    }

    /// True when `self` ≥ `other` up to `k` combined standard errors.
    pub fn ge_within(&self, other: &Estimate, k: f64) -> bool {
        self.mean - other.mean >= -k * self.se.hypot(other.se)
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.5} ± {:.5}", self.mean, self.se)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        let se = if self.n < 2 { 0.0 } else { (self.variance() / self.n as f64).sqrt() };
        Estimate { mean: self.mean, se, n: self.n }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let mut w = Welford::default();
    xs.iter().for_each(|&x| w.push(x));
    (w.mean(), w.variance().sqrt())
}

/// Lower empirical quantile: the smallest value v with at least
/// ⌈p·n⌉ samples ≤ v. `p = 1` gives the maximum.
pub fn lower_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Weighted analogue of [`lower_quantile`]; weights need not be normalized.
pub fn weighted_lower_quantile(pairs: &mut [(f64, f64)], p: f64) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|x| x.1).sum();
    let target = p * total;
    let mut acc = 0.0;
    for &(v, w) in pairs.iter() {
        acc += w;
        if acc >= target * (1.0 - 1e-12) {
            return v;
        }
    }
    pairs.last().map(|x| x.0).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ppf_reference_points() {
        assert_abs_diff_eq!(norm_ppf(0.975), 1.959963984540054, epsilon = 1e-14);
        assert_abs_diff_eq!(norm_ppf(0.95), 1.6448536269514722, epsilon = 1e-14);
        assert_abs_diff_eq!(norm_ppf(0.5), 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(norm_ppf(1e-10), -6.361340902404056, epsilon = 1e-9);
    }

    #[test]
    fn ppf_inverts_cdf() {
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            // statrs erfc carries about 1e-11 relative error.
            assert_abs_diff_eq!(norm_cdf(norm_ppf(p)), p, epsilon = 1e-10);
        }
        for &p in &[1e-300, 1e-50, 1e-12, 0.02, 0.98] {
            let x = norm_ppf(p);
            assert!(((norm_cdf(x) - p) / p).abs() < 1e-9, "p={p}");
        }
    }

    #[test]
    fn ppf_agrees_with_statrs() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::standard();
        for i in 1..200 {
            let p = i as f64 / 200.0;
            assert_abs_diff_eq!(norm_ppf(p), n.inverse_cdf(p), epsilon = 1e-9);
        }
    }

    #[test]
    fn welford_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..101).map(|i| ((i * 37) % 17) as f64 * 0.3).collect();
        let mut a = Welford::default();
        let mut b = Welford::default();
        xs[..40].iter().for_each(|&x| a.push(x));
        xs[40..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        let all = Estimate::from_samples(&xs);
        assert_abs_diff_eq!(a.mean(), all.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(a.estimate().se, all.se, epsilon = 1e-12);
    }

    #[test]
    fn quantile_endpoints() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(lower_quantile(&v, 1.0), 4.0);
        assert_eq!(lower_quantile(&v, 0.25), 1.0);
        assert_eq!(lower_quantile(&v, 0.26), 2.0);
        let mut w = vec![(3.0, 1.0), (1.0, 3.0), (2.0, 1.0)];
        assert_eq!(weighted_lower_quantile(&mut w, 0.6), 1.0);
        assert_eq!(weighted_lower_quantile(&mut w, 0.61), 2.0);
    }

    #[test]
    fn log_sum_exp_handles_neg_inf() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_abs_diff_eq!(log_sum_exp(&[0.0, f64::NEG_INFINITY]), 0.0);
        assert_abs_diff_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln(), epsilon = 1e-12);
    }
}
