//! Rank estimation for count matrices under heteroskedastic noise.
//!
//! The observation matrix is rescaled by positive row and column factors so
//! that the average noise variance in every row and column equals one
//! ("biwhitening"). The noise spectrum of the rescaled matrix then follows the
//! standard Marchenko-Pastur law, and the rank is the number of eigenvalues of
//! `n⁻¹ Ŷ Ŷᵀ` above the upper edge `(1 + √(m/n))²`.
//!
//! Modules:
//! - [`mp_law`]: Marchenko-Pastur density, distribution function, median, KS fit.
//! - [`scaling`]: Sinkhorn-Knopp matrix scaling plus scalability diagnosis and pruning.
//! - [`variance`]: quadratic variance functions and their unbiased estimators.
//! - [`biwhiten`]: the end-to-end rank estimation pipeline.
//! - [`adapt`]: data-driven selection of the variance model and split validation.
//! - [`simulate`]: seeded generators for signal and count matrices.
//! - [`io`]: MatrixMarket / CSV ingestion and JSON reports.

pub mod adapt;
pub mod biwhiten;
pub mod error;
pub mod io;
pub mod mp_law;
pub mod scaling;
pub mod simulate;
pub mod variance;

/// Dense real matrix used throughout the numerical core.
pub type DenseMatrix = nalgebra::DMatrix<f64>;

pub use adapt::{
    default_beta_grid, select_alpha, select_beta, split_validate, AdaptOptions, AdaptReport,
    BetaEvaluation, SplitAxis, SplitModel, SplitTrial, SplitValidation,
};
pub use biwhiten::{
    biwhiten, estimate_rank, rank, spectrum, variance_matrix, BiwhitenOptions, BiwhitenReport,
    Biwhitened, BlockReport, ScaledBlock,
};
pub use error::{Error, Result};
pub use mp_law::{ks_distance, ks_distance_with, ks_pvalue, Esd, KsRange, MpLaw};
pub use scaling::{
    decompose_blocks, diagnose, prune_to_scalable, scaling_factors_from_variances, sinkhorn_scale,
    Block, ScalingDiagnosis, ScalingError, ScalingFactors, SinkhornOptions,
};
pub use simulate::{FactorDist, NoiseFamily, SignalRecipe, SignalSpec, StrongFactor};
pub use variance::{AlphaBeta, NoiseModel, QvfParams, VarianceModel, ZeroInflation};
