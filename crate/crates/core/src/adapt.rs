//! Data-driven choice of the variance estimator `α[(1 − β) y + β y²]`.
//!
//! For each `β` on a grid the data are biwhitened with `α = 1`. Changing `α`
//! only divides the scaled matrix by `√α`, so `α` is read off afterwards by
//! matching the median eigenvalue to the Marchenko-Pastur median, and `β` is
//! chosen by the smallest KS distance between the rescaled spectrum and the
//! standard law.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biwhiten::{biwhiten, estimate_rank, spectrum, BiwhitenOptions, PrunePolicy};
use crate::error::{Error, Result};
use crate::mp_law::{ks_distance_with, ks_pvalue, Esd, KsRange, MpLaw};
use crate::scaling::SinkhornOptions;
use crate::simulate::stream_rng;
use crate::variance::{AlphaBeta, NoiseModel};
use crate::DenseMatrix;

const PURPOSE_SPLIT: u64 = 101;

/// `{0, 0.05, …, 1}`.
pub fn default_beta_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

/// `λ_med / μ_γ`, using the lower median for even-length spectra.
pub fn select_alpha(esd: &Esd) -> Result<f64> {
    let med = esd.lower_median().ok_or(Error::EmptySpectrum)?;
    if esd.eigenvalues().iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroSpectrum);
    }
    if med <= 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    Ok(med / esd.standard_law()?.median())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptOptions {
    pub sinkhorn: SinkhornOptions,
    pub ks_range: KsRange,
    /// Margin used for the rank reported at the selected `β`.
    pub epsilon: f64,
    /// Grid points whose KS is within this of the minimum form the plateau.
    pub plateau_tol: f64,
    pub prune: PrunePolicy,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornOptions::default(),
            ks_range: KsRange::FullLine,
            epsilon: 0.0,
            plateau_tol: 1e-9,
            prune: PrunePolicy::default(),
        }
    }
}

impl AdaptOptions {
    fn biwhiten_options(&self) -> BiwhitenOptions {
        BiwhitenOptions {
            sinkhorn: self.sinkhorn,
            epsilon: self.epsilon,
            prune: self.prune,
            ..BiwhitenOptions::default()
        }
    }
}

/// Outcome at one grid point. `alpha`/`ks` are absent when the point failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEvaluation {
    pub beta: f64,
    pub alpha: Option<f64>,
    pub ks: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub beta_grid: Vec<f64>,
    pub per_beta: Vec<BetaEvaluation>,
    pub selected: AlphaBeta,
    pub min_ks: f64,
    /// Grid values whose KS lies within `plateau_tol` of the minimum.
    pub plateau: Vec<f64>,
    /// Rank of the largest block under the selected estimator.
    pub rank: usize,
    /// Spectrum at the selected `β`, already divided by `α`.
    pub esd: Esd,
}

/// Spectrum of the largest block after biwhitening under `model`.
fn block_spectrum(y: &DenseMatrix, model: &NoiseModel, opts: &BiwhitenOptions) -> Result<Esd> {
    let bw = biwhiten(y, model, opts)?;
    let block = bw.largest_block().ok_or(Error::Unscalable)?;
    spectrum(&block.y_hat)
}

fn evaluate_beta(y: &DenseMatrix, beta: f64, opts: &AdaptOptions) -> Result<(f64, f64, Esd)> {
    let model = NoiseModel::alphabeta(AlphaBeta::new(1.0, beta)?);
    let esd = block_spectrum(y, &model, &opts.biwhiten_options())?;
    let alpha = select_alpha(&esd)?;
    let esd = esd.scaled(1.0 / alpha);
    let ks = ks_distance_with(&esd, &MpLaw::standard(esd.m(), esd.n())?, opts.ks_range)?;
    Ok((alpha, ks, esd))
}

/// Pick `β` from `grid` by minimum KS distance; ties go to the smaller `β`.
pub fn select_beta(y: &DenseMatrix, grid: &[f64], opts: &AdaptOptions) -> Result<AdaptReport> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("beta grid is empty".into()));
    }
    if let Some(b) = grid.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::InvalidParameter(format!("beta {b} outside [0, 1]")));
    }
    let results: Vec<Result<(f64, f64, Esd)>> =
        grid.par_iter().map(|&b| evaluate_beta(y, b, opts)).collect();

    let mut best: Option<(usize, f64)> = None;
    for (k, r) in results.iter().enumerate() {
        if let Ok((_, ks, _)) = r {
            let better = match best {
                None => true,
                Some((bk, bks)) => *ks < bks || (*ks == bks && grid[k] < grid[bk]),
            };
            if better {
                best = Some((k, *ks));
            }
        }
    }
    let per_beta: Vec<BetaEvaluation> = grid
        .iter()
        .zip(&results)
        .map(|(&beta, r)| match r {
            Ok((alpha, ks, _)) => BetaEvaluation {
                beta,
                alpha: Some(*alpha),
                ks: Some(*ks),
                error: None,
            },
            Err(e) => BetaEvaluation {
                beta,
                alpha: None,
                ks: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let Some((k, min_ks)) = best else {
        let msgs: Vec<String> = per_beta.iter().filter_map(|e| e.error.clone()).collect();
        return Err(Error::AllGridPointsFailed(msgs.join("; ")));
    };
    let (alpha, _, esd) = results.into_iter().nth(k).expect("index in range")?;
    let mut plateau: Vec<f64> = per_beta
        .iter()
        .filter(|e| e.ks.is_some_and(|ks| ks <= min_ks + opts.plateau_tol))
        .map(|e| e.beta)
        .collect();
    plateau.sort_by(f64::total_cmp);
    Ok(AdaptReport {
        beta_grid: grid.to_vec(),
        per_beta,
        selected: AlphaBeta::new(alpha, grid[k])?,
        min_ks,
        plateau,
        rank: estimate_rank(&esd, opts.epsilon),
        esd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitAxis {
    Rows,
    #[default]
    Columns,
}

/// How the estimator is fixed on the first half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitModel {
    /// Select `(α, β)` on the first half with [`select_beta`].
    Adaptive { grid: Vec<f64> },
    /// Use `model` as given; with `match_alpha` its overall level is
    /// calibrated on the first half by median matching.
    Fixed { model: NoiseModel, match_alpha: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTrial {
    pub ks: f64,
    pub pvalue: f64,
    pub alpha: f64,
    /// Selected `β`; absent for fixed models.
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitValidation {
    pub trials: usize,
    pub mean_ks: f64,
    pub mean_pvalue: f64,
    pub per_trial: Vec<SplitTrial>,
    /// Messages of trials that failed and were left out of the means.
    pub failures: Vec<String>,
}

fn split_halves(y: &DenseMatrix, axis: SplitAxis, seed: u64, trial: usize) -> Result<(DenseMatrix, DenseMatrix)> {
    let len = match axis {
        SplitAxis::Rows => y.nrows(),
        SplitAxis::Columns => y.ncols(),
    };
    if len < 4 {
        return Err(Error::InvalidParameter(format!("cannot split an axis of length {len}")));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut stream_rng(seed, PURPOSE_SPLIT, trial as u64));
    let (a, b) = idx.split_at(len / 2);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok(match axis {
        SplitAxis::Rows => (y.select_rows(a.iter()), y.select_rows(b.iter())),
        SplitAxis::Columns => (y.select_columns(a.iter()), y.select_columns(b.iter())),
    })
}

fn run_trial(
    y: &DenseMatrix,
    model: &SplitModel,
    axis: SplitAxis,
    seed: u64,
    trial: usize,
    opts: &AdaptOptions,
) -> Result<SplitTrial> {
    let (half_a, half_b) = split_halves(y, axis, seed, trial)?;
    let bopts = opts.biwhiten_options();
    let (esd, alpha, beta) = match model {
        SplitModel::Adaptive { grid } => {
            let report = select_beta(&half_a, grid, opts)?;
            let fixed = NoiseModel::alphabeta(report.selected);
            let esd = block_spectrum(&half_b, &fixed, &bopts)?;
            (esd, report.selected.alpha, Some(report.selected.beta))
        }
        SplitModel::Fixed { model, match_alpha } => {
            let alpha = if *match_alpha {
                select_alpha(&block_spectrum(&half_a, model, &bopts)?)?
            } else {
                1.0
            };
            let esd = block_spectrum(&half_b, model, &bopts)?.scaled(1.0 / alpha);
            (esd, alpha, None)
        }
    };
    let ks = ks_distance_with(&esd, &MpLaw::standard(esd.m(), esd.n())?, opts.ks_range)?;
    Ok(SplitTrial {
        ks,
        pvalue: ks_pvalue(ks, esd.m()),
        alpha,
        beta,
    })
}

/// Fit the estimator on a random half and measure the MP fit on the other
/// half, `trials` times. Trial `t` uses its own stream derived from `seed`.
pub fn split_validate(
    y: &DenseMatrix,
    model: &SplitModel,
    trials: usize,
    axis: SplitAxis,
    seed: u64,
    opts: &AdaptOptions,
) -> Result<SplitValidation> {
    if trials == 0 {
        return Err(Error::InvalidParameter("at least one trial is required".into()));
    }
    let mut per_trial = Vec::with_capacity(trials);
    let mut failures = Vec::new();
    for t in 0..trials {
        match run_trial(y, model, axis, seed, t, opts) {
            Ok(r) => per_trial.push(r),
            Err(e) => failures.push(format!("trial {t}: {e}")),
        }
    }
    if per_trial.is_empty() {
        return Err(Error::AllTrialsFailed(failures.join("; ")));
    }
    let k = per_trial.len() as f64;
    Ok(SplitValidation {
        trials: per_trial.len(),
        mean_ks: per_trial.iter().map(|t| t.ks).sum::<f64>() / k,
        mean_pvalue: per_trial.iter().map(|t| t.pvalue).sum::<f64>() / k,
        per_trial,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{gen_signal, sample_counts, NoiseFamily, SignalSpec};
    use crate::variance::QvfParams;

    fn quantile_esd(m: usize, n: usize, scale: f64) -> Esd {
        let law = MpLaw::standard(m, n).unwrap();
        let (lo, hi) = law.edges();
        let eig: Vec<f64> = (0..m)
            .map(|k| {
                let p = (k as f64 + 0.5) / m as f64;
                let (mut a, mut b) = (lo, hi);
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if law.cdf(mid) < p {
                        a = mid
                    } else {
                        b = mid
                    }
                }
                scale * 0.5 * (a + b)
            })
            .collect();
        Esd::new(eig, m, n).unwrap()
    }

    #[test]
    fn grid_has_21_points() {
        let g = default_beta_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[5], 0.25);
        assert_eq!(g[20], 1.0);
    }

    #[test]
    fn alpha_is_one_at_the_mp_median() {
        let law = MpLaw::standard(5, 10).unwrap();
        let mu = law.median();
        let esd = Esd::new(vec![2.0, 1.5, mu, 0.3, 0.1], 5, 10).unwrap();
        assert!((select_alpha(&esd).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_is_homogeneous() {
        let esd = quantile_esd(40, 100, 1.0);
        let a = select_alpha(&esd).unwrap();
        let b = select_alpha(&esd.scaled(3.0)).unwrap();
        assert!((b / a - 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_spectrum_rejected() {
        let esd = Esd::new(vec![0.0; 4], 4, 8).unwrap();
        assert!(matches!(select_alpha(&esd), Err(Error::ZeroSpectrum)));
    }

    fn poisson_sim(m: usize, n: usize, seed: u64) -> DenseMatrix {
        let x = gen_signal(&SignalSpec::full_rank(m, n), seed).unwrap();
        sample_counts(&x, NoiseFamily::Poisson, seed + 1000).unwrap()
    }

    #[test]
    fn singleton_grid_selects_its_point() {
        let y = poisson_sim(60, 120, 1);
        let r = select_beta(&y, &[0.3], &AdaptOptions::default()).unwrap();
        assert_eq!(r.selected.beta, 0.3);
        assert_eq!(r.plateau, vec![0.3]);
        assert!(select_beta(&y, &[], &AdaptOptions::default()).is_err());
        assert!(select_beta(&y, &[1.5], &AdaptOptions::default()).is_err());
    }

    #[test]
    fn selection_is_deterministic_and_minimal() {
        let y = poisson_sim(80, 160, 2);
        let grid = [0.0, 0.5, 1.0];
        let a = select_beta(&y, &grid, &AdaptOptions::default()).unwrap();
        let b = select_beta(&y, &grid, &AdaptOptions::default()).unwrap();
        assert_eq!(a, b);
        for e in &a.per_beta {
            assert!(a.min_ks <= e.ks.unwrap());
        }
    }

    #[test]
    fn split_validation_counts_trials() {
        let y = poisson_sim(60, 200, 3);
        let model = SplitModel::Fixed {
            model: NoiseModel::poisson(),
            match_alpha: false,
        };
        let v = split_validate(&y, &model, 3, SplitAxis::Columns, 7, &AdaptOptions::default()).unwrap();
        assert_eq!(v.trials, 3);
        assert!(v.per_trial.iter().all(|t| (0.0..=1.0).contains(&t.ks)));
        let again = split_validate(&y, &model, 3, SplitAxis::Columns, 7, &AdaptOptions::default()).unwrap();
        assert_eq!(v, again);
        assert!(split_validate(&y, &model, 0, SplitAxis::Rows, 7, &AdaptOptions::default()).is_err());
    }

    #[test]
    fn constant_model_is_calibrated_by_alpha() {
        let y = poisson_sim(40, 120, 4);
        let model = SplitModel::Fixed {
            model: NoiseModel::qvf(QvfParams::constant()),
            match_alpha: true,
        };
        let v = split_validate(&y, &model, 1, SplitAxis::Rows, 1, &AdaptOptions::default()).unwrap();
        assert!(v.per_trial[0].alpha > 0.0);
    }
}
