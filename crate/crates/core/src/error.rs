use thiserror::Error;

use crate::scaling::ScalingError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty spectrum")]
    EmptySpectrum,

    #[error("all eigenvalues are zero; the noise level cannot be matched")]
    ZeroSpectrum,

    #[error(
        "c = -1 (Bernoulli-type family): there is no unbiased variance estimator that is only a function of the observation"
    )]
    NoUnbiasedEstimator,

    #[error("scaling failed: {0}")]
    Scaling(#[from] ScalingError),

    #[error("scaling of a block failed: {source}")]
    BlockScaling {
        source: ScalingError,
        diagnosis: Box<crate::scaling::ScalingDiagnosis>,
    },

    #[error("singular value decomposition did not converge")]
    Factorization,

    #[error("no scalable block remains after pruning")]
    Unscalable,

    #[error("every grid point failed: {0}")]
    AllGridPointsFailed(String),

    #[error("every split-validation trial failed: {0}")]
    AllTrialsFailed(String),

    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}
