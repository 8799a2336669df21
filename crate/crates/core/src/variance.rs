//! Quadratic variance functions `Var = a + b·mean + c·mean²` and their
//! single-observation unbiased estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients `(a, b, c)` of a quadratic variance function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QvfParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QvfParams {
    pub const POISSON: Self = Self {
        a: 0.0,
        b: 1.0,
        c: 0.0,
    };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn binomial(trials: u64) -> Self {
        Self::new(0.0, 1.0, -1.0 / trials as f64)
    }

    pub fn negative_binomial(failures: f64) -> Self {
        Self::new(0.0, 1.0, 1.0 / failures)
    }

    pub fn generalized_poisson(eta: f64) -> Self {
        Self::new(0.0, 1.0 / ((1.0 - eta) * (1.0 - eta)), 0.0)
    }

    /// Homoskedastic noise with unit variance.
    pub fn constant() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    /// Variance at mean `x`.
    pub fn variance(&self, x: f64) -> f64 {
        self.a + self.b * x + self.c * x * x
    }

    /// `(a + b·y + c·y²) / (1 + c)`, unbiased for the variance of `y`.
    pub fn unbiased_estimate(&self, y: f64) -> Result<f64> {
        if self.c == -1.0 {
            return Err(Error::NoUnbiasedEstimator);
        }
        Ok((self.a + self.b * y + self.c * y * y) / (1.0 + self.c))
    }

    /// QVF of the observation after entries are zeroed with probability `1 − p`,
    /// in terms of the observed mean `p·x`.
    pub fn zero_inflated(&self, zi: ZeroInflation) -> Self {
        let p = zi.p();
        Self::new(self.a * p, self.b, (self.c + 1.0 - p) / p)
    }

    /// `(a p² + b p ȳ + (1 + c − p) ȳ²) / (1 + c)`.
    pub fn zero_inflated_estimate(&self, zi: ZeroInflation, y_bar: f64) -> Result<f64> {
        if self.c == -1.0 {
            return Err(Error::NoUnbiasedEstimator);
        }
        let p = zi.p();
        Ok(
            (self.a * p * p + self.b * p * y_bar + (1.0 + self.c - p) * y_bar * y_bar)
                / (1.0 + self.c),
        )
    }

    /// Inverse of [`AlphaBeta::to_qvf`]; requires `a = 0`, `b, c ≥ 0`, `(b, c) ≠ 0`.
    pub fn to_alphabeta(&self) -> Result<AlphaBeta> {
        if self.a != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "the (alpha, beta) form needs a = 0, got a = {}",
                self.a
            )));
        }
        if !(self.b >= 0.0 && self.c >= 0.0) || self.b + self.c == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "the (alpha, beta) form needs b, c >= 0 not both zero, got b = {}, c = {}",
                self.b, self.c
            )));
        }
        let s = self.b + self.c;
        AlphaBeta::new(s / (1.0 + self.c), self.c / s)
    }
}

/// Two-parameter estimator `α[(1 − β) y + β y²]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBeta {
    pub alpha: f64,
    pub beta: f64,
}

impl AlphaBeta {
    pub const POISSON: Self = Self {
        alpha: 1.0,
        beta: 0.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta must lie in [0, 1], got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn estimate(&self, y: f64) -> f64 {
        self.alpha * ((1.0 - self.beta) * y + self.beta * y * y)
    }

    /// `a = 0`, `b = α(1 − β)/(1 − αβ)`, `c = αβ/(1 − αβ)`.
    pub fn to_qvf(&self) -> Result<QvfParams> {
        let denom = 1.0 - self.alpha * self.beta;
        if denom == 0.0 {
            return Err(Error::InvalidParameter(
                "alpha * beta = 1 has no QVF counterpart".into(),
            ));
        }
        Ok(QvfParams::new(
            0.0,
            self.alpha * (1.0 - self.beta) / denom,
            self.alpha * self.beta / denom,
        ))
    }
}

/// Entries observed with probability `p` and replaced by zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroInflation {
    p: f64,
}

impl ZeroInflation {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "observation probability must lie in (0, 1], got {p}"
            )));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

pub fn qvf_variance(params: &QvfParams, x: f64) -> f64 {
    params.variance(x)
}

pub fn qvf_unbiased_estimate(params: &QvfParams, y: f64) -> Result<f64> {
    params.unbiased_estimate(y)
}

pub fn alphabeta_estimate(ab: &AlphaBeta, y: f64) -> f64 {
    ab.estimate(y)
}

pub fn alphabeta_to_qvf(ab: &AlphaBeta) -> Result<QvfParams> {
    ab.to_qvf()
}

pub fn qvf_to_alphabeta(params: &QvfParams) -> Result<AlphaBeta> {
    params.to_alphabeta()
}

pub fn zero_inflated_qvf(params: &QvfParams, zi: ZeroInflation) -> QvfParams {
    params.zero_inflated(zi)
}

pub fn zero_inflated_estimate(params: &QvfParams, zi: ZeroInflation, y_bar: f64) -> Result<f64> {
    params.zero_inflated_estimate(zi, y_bar)
}

/// Either parametrization of the variance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VarianceModel {
    Qvf(QvfParams),
    AlphaBeta(AlphaBeta),
}

/// Variance model plus optional zero inflation, as applied to a data matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub variance: VarianceModel,
    pub zero_inflation: Option<ZeroInflation>,
}

impl NoiseModel {
    pub fn poisson() -> Self {
        Self::qvf(QvfParams::POISSON)
    }

    pub fn qvf(params: QvfParams) -> Self {
        Self {
            variance: VarianceModel::Qvf(params),
            zero_inflation: None,
        }
    }

    pub fn alphabeta(ab: AlphaBeta) -> Self {
        Self {
            variance: VarianceModel::AlphaBeta(ab),
            zero_inflation: None,
        }
    }

    pub fn with_zero_inflation(mut self, zi: ZeroInflation) -> Self {
        self.zero_inflation = Some(zi);
        self
    }

    /// Fails early on `c = −1`, which has no unbiased estimator.
    pub fn validate(&self) -> Result<()> {
        if let VarianceModel::Qvf(q) = self.variance {
            if q.c == -1.0 {
                return Err(Error::NoUnbiasedEstimator);
            }
        }
        Ok(())
    }

    /// Variance estimate for a single observation.
    pub fn estimate(&self, y: f64) -> Result<f64> {
        match (self.variance, self.zero_inflation) {
            (VarianceModel::Qvf(q), None) => q.unbiased_estimate(y),
            (VarianceModel::Qvf(q), Some(zi)) => q.zero_inflated_estimate(zi, y),
            (VarianceModel::AlphaBeta(ab), None) => Ok(ab.estimate(y)),
            (VarianceModel::AlphaBeta(ab), Some(zi)) => ab.to_qvf()?.zero_inflated_estimate(zi, y),
        }
    }

    /// True when the estimate is exactly the observation itself.
    pub fn is_identity(&self) -> bool {
        let identity = match self.variance {
            VarianceModel::Qvf(q) => q == QvfParams::POISSON,
            VarianceModel::AlphaBeta(ab) => ab == AlphaBeta::POISSON,
        };
        identity && self.zero_inflation.map_or(true, |zi| zi.p() == 1.0)
    }
}
