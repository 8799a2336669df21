//! Marchenko-Pastur law: density, distribution function, bulk edges, median,
//! and Kolmogorov-Smirnov comparison against an empirical spectrum.
//!
//! The distribution function is computed by adaptive Gauss-Kronrod quadrature
//! after the change of variables `τ = β₋ + (β₊ − β₋) sin²θ`, which removes the
//! square-root singularities of the density at both edges of the bulk.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Absolute tolerance of the distribution-function quadrature.
pub const CDF_TOLERANCE: f64 = 1e-12;

/// Marchenko-Pastur law with aspect ratio `gamma ∈ (0, 1]` and noise level `sigma > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpLaw {
    gamma: f64,
    sigma: f64,
}

impl MpLaw {
    pub fn new(gamma: f64, sigma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "aspect ratio must lie in (0, 1], got {gamma}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise level must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { gamma, sigma })
    }

    /// Standard law (`sigma = 1`) for an `m × n` matrix with `m ≤ n`.
    pub fn standard(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter("empty matrix dimensions".into()));
        }
        Self::new(m as f64 / n as f64, 1.0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Lower and upper edges `σ²(1 ∓ √γ)²` of the support.
    pub fn edges(&self) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        let r = self.gamma.sqrt();
        (s2 * (1.0 - r) * (1.0 - r), s2 * (1.0 + r) * (1.0 + r))
    }

    pub fn upper_edge(&self) -> f64 {
        self.edges().1
    }

    pub fn pdf(&self, tau: f64) -> f64 {
        let (lo, hi) = self.edges();
        if !(tau > lo && tau < hi) || tau <= 0.0 {
            return 0.0;
        }
        let s2 = self.sigma * self.sigma;
        ((hi - tau) * (tau - lo)).sqrt() / (2.0 * PI * s2 * self.gamma * tau)
    }

    pub fn cdf(&self, tau: f64) -> f64 {
        let (lo, hi) = self.edges();
        if tau <= lo {
            return 0.0;
        }
        if tau >= hi {
            return 1.0;
        }
        let width = hi - lo;
        let theta = ((tau - lo) / width).sqrt().min(1.0).asin();
        let s2 = self.sigma * self.sigma;
        let scale = width * width / (PI * s2 * self.gamma);
        let integrand = |t: f64| {
            let (s, c) = t.sin_cos();
            let sc = s * c;
            scale * sc * sc / (lo + width * s * s)
        };
        adaptive_gauss_kronrod(&integrand, 0.0, theta, CDF_TOLERANCE).clamp(0.0, 1.0)
    }

    /// Median of the law, by bisection on the distribution function.
    pub fn median(&self) -> f64 {
        let (lo, hi) = self.edges();
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if self.cdf(mid) < 0.5 {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (a + b)
    }
}

/// Free-function form of [`MpLaw::edges`].
pub fn mp_edges(law: &MpLaw) -> (f64, f64) {
    law.edges()
}

pub fn mp_pdf(law: &MpLaw, tau: f64) -> f64 {
    law.pdf(tau)
}

pub fn mp_cdf(law: &MpLaw, tau: f64) -> f64 {
    law.cdf(tau)
}

pub fn mp_median(law: &MpLaw) -> f64 {
    law.median()
}

// 15-point Kronrod nodes/weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gauss_kronrod_15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = half * XGK[k];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive Gauss-Kronrod integration to an absolute tolerance.
pub(crate) fn adaptive_gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (v, e) = gauss_kronrod_15(f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut error = e;
    let mut splits = 0;
    while error > tol && splits < 2000 {
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one interval");
        let (lo, hi, _, e) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gauss_kronrod_15(f, lo, mid);
        let (v2, e2) = gauss_kronrod_15(f, mid, hi);
        error += e1 + e2 - e;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
        splits += 1;
    }
    intervals.iter().map(|iv| iv.2).sum()
}

/// Empirical spectral distribution: eigenvalues of `n⁻¹ Ŷ Ŷᵀ` for an `m × n`
/// matrix with `m ≤ n`, stored in nonincreasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Esd {
    eigenvalues: Vec<f64>,
    m: usize,
    n: usize,
}

impl Esd {
    /// Sorts the eigenvalues into nonincreasing order. Round-off negatives
    /// (down to `-1e-12` relative to the largest magnitude) are set to zero.
    pub fn new(mut eigenvalues: Vec<f64>, m: usize, n: usize) -> Result<Self> {
        if eigenvalues.len() != m {
            return Err(Error::InvalidParameter(format!(
                "spectrum has {} eigenvalues, expected {m}",
                eigenvalues.len()
            )));
        }
        if m > n {
            return Err(Error::InvalidParameter(format!(
                "spectrum orientation requires m <= n, got {m} x {n}"
            )));
        }
        let scale = eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for v in eigenvalues.iter_mut() {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("non-finite eigenvalue".into()));
            }
            if *v < 0.0 {
                if *v < -1e-12 * scale.max(1.0) {
                    return Err(Error::InvalidParameter(format!("negative eigenvalue {v}")));
                }
                *v = 0.0;
            }
        }
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { eigenvalues, m, n })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// The law this spectrum is compared against after biwhitening.
    pub fn standard_law(&self) -> Result<MpLaw> {
        MpLaw::standard(self.m, self.n)
    }

    /// Right-continuous step function `#{λ ≤ x} / m`.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.eigenvalues.is_empty() {
            return 0.0;
        }
        let below = self.eigenvalues.partition_point(|&v| v > x);
        (self.eigenvalues.len() - below) as f64 / self.eigenvalues.len() as f64
    }

    /// Lower median: the `⌈m/2⌉`-th smallest eigenvalue.
    pub fn lower_median(&self) -> Option<f64> {
        let m = self.eigenvalues.len();
        if m == 0 {
            return None;
        }
        // ascending index (m - 1) / 2  ==  descending index m - 1 - (m - 1) / 2
        Some(self.eigenvalues[m - 1 - (m - 1) / 2])
    }

    /// Every eigenvalue multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            eigenvalues: self.eigenvalues.iter().map(|v| v * factor).collect(),
            m: self.m,
            n: self.n,
        }
    }
}

/// Range over which the KS supremum is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KsRange {
    /// Supremum over the whole real line.
    #[default]
    FullLine,
    /// Supremum restricted to `[β₋, β₊]`; eigenvalues outside the bulk still
    /// count towards the empirical distribution but are not evaluation points.
    Bulk,
}

/// Kolmogorov-Smirnov distance between an empirical spectrum and the law.
pub fn ks_distance(esd: &Esd, law: &MpLaw) -> Result<f64> {
    ks_distance_with(esd, law, KsRange::FullLine)
}

pub fn ks_distance_with(esd: &Esd, law: &MpLaw, range: KsRange) -> Result<f64> {
    if esd.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let (lo, hi) = law.edges();
    let ascending: Vec<f64> = esd.eigenvalues.iter().rev().copied().collect();
    let m = ascending.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < ascending.len() {
        let x = ascending[i];
        let mut j = i;
        while j + 1 < ascending.len() && ascending[j + 1] == x {
            j += 1;
        }
        let left = i as f64 / m;
        let right = (j + 1) as f64 / m;
        let inside = match range {
            KsRange::FullLine => true,
            KsRange::Bulk => x >= lo && x <= hi,
        };
        if inside {
            let f = law.cdf(x);
            d = d.max((f - left).abs()).max((right - f).abs());
        }
        i = j + 1;
    }
    if range == KsRange::Bulk {
        // Edges of the bulk are evaluation points even without an eigenvalue there.
        for x in [lo, hi] {
            let f = law.cdf(x);
            let right = esd.cdf(x);
            let below = ascending.partition_point(|&v| v < x) as f64 / m;
            d = d.max((f - right).abs()).max((f - below).abs());
        }
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Asymptotic Kolmogorov tail probability `Q(√m · d)`.
///
/// This treats the eigenvalues as an i.i.d. sample from the law, which is a
/// surrogate null only: eigenvalues of a random matrix are dependent.
pub fn ks_pvalue(d: f64, m: usize) -> f64 {
    if m == 0 || d <= 0.0 {
        return 1.0;
    }
    kolmogorov_tail((m as f64).sqrt() * d.min(1.0))
}

/// `Q(t) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²t²)`; for small `t` the equivalent
/// Jacobi-theta form `1 − √(2π)/t Σ_{k≥1} exp(−(2k−1)²π²/(8t²))` is summed instead.
pub(crate) fn kolmogorov_tail(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let p = if t < 1.0 {
        let mut sum = 0.0;
        for k in 1..200 {
            let odd = (2 * k - 1) as f64;
            let term = (-(odd * odd) * PI * PI / (8.0 * t * t)).exp();
            sum += term;
            if term < 1e-16 {
                break;
            }
        }
        1.0 - (2.0 * PI).sqrt() / t * sum
    } else {
        let mut sum = 0.0;
        for k in 1..200 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * t * t).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-12 {
                break;
            }
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn law(g: f64, s: f64) -> MpLaw {
        MpLaw::new(g, s).unwrap()
    }

    #[test]
    fn edges_closed_forms() {
        assert_eq!(law(1.0, 1.0).edges(), (0.0, 4.0));
        let (lo, hi) = law(0.25, 1.0).edges();
        assert_abs_diff_eq!(lo, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 2.25, epsilon = 1e-15);
        let r = 0.5f64.sqrt();
        let (lo, hi) = law(0.5, 2.0).edges();
        assert_abs_diff_eq!(lo, 4.0 * (1.0 - r) * (1.0 - r), epsilon = 1e-14);
        assert_abs_diff_eq!(hi, 4.0 * (1.0 + r) * (1.0 + r), epsilon = 1e-14);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(MpLaw::new(0.0, 1.0).is_err());
        assert!(MpLaw::new(1.5, 1.0).is_err());
        assert!(MpLaw::new(0.5, 0.0).is_err());
        assert!(MpLaw::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn pdf_values() {
        assert_eq!(law(1.0, 1.0).pdf(5.0), 0.0);
        assert_abs_diff_eq!(law(1.0, 1.0).pdf(2.0), 1.0 / (2.0 * PI), epsilon = 1e-15);
        let l = law(0.5, 1.0);
        assert_eq!(l.pdf(l.edges().0), 0.0);
    }

    #[test]
    fn cdf_edges() {
        let l = law(0.5, 1.0);
        let (lo, hi) = l.edges();
        assert_eq!(l.cdf(lo), 0.0);
        assert_eq!(l.cdf(hi), 1.0);
        assert_eq!(l.cdf(-3.0), 0.0);
    }

    #[test]
    fn cdf_matches_high_precision_quadrature() {
        // Values from an independent 40-digit adaptive quadrature of the density.
        assert_abs_diff_eq!(law(0.3, 1.0).cdf(1.0), 0.558_561_920_333_103_04, epsilon = 1e-11);
        assert_abs_diff_eq!(law(0.5, 1.0).cdf(1.0), 0.576_004_215_103_868_56, epsilon = 1e-11);
    }

    #[test]
    fn cdf_matches_riemann_sum() {
        let l = law(0.3, 1.0);
        let (lo, _) = l.edges();
        let upper = 1.0;
        let steps = 1_000_000;
        let h = (upper - lo) / steps as f64;
        let riemann: f64 = (0..steps).map(|k| l.pdf(lo + (k as f64 + 0.5) * h)).sum::<f64>() * h;
        assert_abs_diff_eq!(l.cdf(upper), riemann, epsilon = 1e-8);
    }

    #[test]
    fn median_values() {
        assert_abs_diff_eq!(law(1.0, 1.0).median(), 0.652_775_941_633_570_37, epsilon = 1e-10);
        assert_abs_diff_eq!(law(0.5, 1.0).median(), 0.830_465_881_581_363_55, epsilon = 1e-10);
        let small = law(1e-4, 1.0).median();
        assert!((small - 1.0).abs() < 0.05);
        assert_abs_diff_eq!(law(0.5, 2.0).median(), 4.0 * law(0.5, 1.0).median(), epsilon = 1e-9);
        for g in [0.05, 0.25, 0.5, 0.9, 1.0] {
            let l = law(g, 1.3);
            let mu = l.median();
            assert!((l.cdf(mu) - 0.5).abs() <= 1e-9);
            let (lo, hi) = l.edges();
            assert!(lo < mu && mu < hi);
        }
    }

    #[test]
    fn esd_step_function_and_median() {
        let esd = Esd::new(vec![1.0, 3.0, 2.0, 2.0], 4, 8).unwrap();
        assert_eq!(esd.eigenvalues(), &[3.0, 2.0, 2.0, 1.0]);
        assert_eq!(esd.cdf(0.5), 0.0);
        assert_eq!(esd.cdf(1.0), 0.25);
        assert_eq!(esd.cdf(2.0), 0.75);
        assert_eq!(esd.cdf(10.0), 1.0);
        assert_eq!(esd.lower_median(), Some(2.0));
        let odd = Esd::new(vec![5.0, 1.0, 3.0], 3, 3).unwrap();
        assert_eq!(odd.lower_median(), Some(3.0));
        let even = Esd::new(vec![4.0, 1.0, 2.0, 3.0], 4, 4).unwrap();
        assert_eq!(even.lower_median(), Some(2.0));
    }

    #[test]
    fn esd_rejects_bad_input() {
        assert!(Esd::new(vec![1.0], 2, 3).is_err());
        assert!(Esd::new(vec![1.0, -1.0], 2, 3).is_err());
        assert!(Esd::new(vec![1.0, 2.0], 2, 1).is_err());
        let tiny = Esd::new(vec![1.0, -1e-18], 2, 3).unwrap();
        assert_eq!(tiny.eigenvalues()[1], 0.0);
    }

    #[test]
    fn ks_single_eigenvalue_at_upper_edge() {
        let l = law(0.5, 1.0);
        let esd = Esd::new(vec![l.upper_edge()], 1, 2).unwrap();
        assert_eq!(ks_distance(&esd, &l).unwrap(), 1.0);
    }

    #[test]
    fn ks_quantile_aligned_spectrum() {
        let l = law(0.5, 1.0);
        let m = 200;
        let eig: Vec<f64> = (1..=m)
            .map(|k| quantile(&l, (k as f64 - 0.5) / m as f64))
            .collect();
        let esd = Esd::new(eig, m, 2 * m).unwrap();
        let d = ks_distance(&esd, &l).unwrap();
        assert!(d <= 0.5 / m as f64 + 1e-8, "d = {d}");
    }

    #[test]
    fn ks_bulk_range_ignores_outliers() {
        let l = law(0.5, 1.0);
        let m = 100;
        let mut eig: Vec<f64> = (1..=m)
            .map(|k| quantile(&l, (k as f64 - 0.5) / m as f64))
            .collect();
        eig[m - 1] = 50.0;
        let esd = Esd::new(eig, m, 2 * m).unwrap();
        let full = ks_distance_with(&esd, &l, KsRange::FullLine).unwrap();
        let bulk = ks_distance_with(&esd, &l, KsRange::Bulk).unwrap();
        assert!(bulk <= full);
        assert!(bulk <= 0.011 + 1e-8);
    }

    #[test]
    fn ks_empty_spectrum_is_error() {
        let esd = Esd::new(vec![], 0, 1).unwrap();
        assert!(matches!(ks_distance(&esd, &law(0.5, 1.0)), Err(Error::EmptySpectrum)));
    }

    #[test]
    fn pvalue_values() {
        assert_eq!(ks_pvalue(0.0, 100), 1.0);
        assert!(ks_pvalue(1.0, 10_000) < 1e-300);
        // Reference values from summing the alternating series to convergence
        // in 40-digit arithmetic.
        assert_abs_diff_eq!(ks_pvalue(0.05, 500), 0.164_079_197_726_652_20, epsilon = 1e-12);
        assert_abs_diff_eq!(kolmogorov_tail(0.5), 0.963_945_243_664_875_09, epsilon = 1e-12);
        assert_abs_diff_eq!(kolmogorov_tail(2.0), 0.000_670_925_255_779_695_35, epsilon = 1e-14);
    }

    #[test]
    fn pvalue_series_forms_agree_at_switch() {
        let below = kolmogorov_tail(1.0 - 1e-12);
        let above = kolmogorov_tail(1.0);
        assert_abs_diff_eq!(below, above, epsilon = 1e-10);
    }

    fn quantile(l: &MpLaw, p: f64) -> f64 {
        let (mut a, mut b) = l.edges();
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if l.cdf(mid) < p {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}
