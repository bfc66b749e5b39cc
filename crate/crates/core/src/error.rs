use thiserror::Error;

/// Errors raised by the inference pipeline.
///
/// Variant names double as the error taxonomy reported by the CLI.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("truncation region carries no probability mass (log-mass {log_mass:.3})")]
    ZeroMassRegion { log_mass: f64 },

    #[error("z = {z} lies outside the path window [{lo}, {hi}]")]
    OutOfWindow { z: f64, lo: f64, hi: f64 },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("path exceeded the breakpoint cap of {cap}")]
    CycleDetected { cap: usize },

    #[error("observed statistic {z_obs} is outside the window [{lo}, {hi}]")]
    WindowTooSmall { z_obs: f64, lo: f64, hi: f64 },

    #[error("tie at the top-K boundary: |r_(K)| = |r_(K+1)| = {magnitude}")]
    TieAtBoundary { magnitude: f64 },

    #[error("truncation region does not contain the observed statistic {z_obs}")]
    EmptyRegion { z_obs: f64 },

    #[error("detection-function callback is inconsistent: {0}")]
    CallbackInconsistent(String),

    #[error("degenerate test direction (eta' Sigma eta = {sigma_eta2:e})")]
    DegenerateDirection { sigma_eta2: f64 },

    #[error("selective pivot is not monotone in the mean parameter near m = {m}")]
    NonMonotonePivot { m: f64 },

    #[error("solver did not converge within {0} iterations")]
    MaxIterations(usize),

    #[error("active block of the Lasso design is rank deficient")]
    NonUniqueActiveBlock,

    #[error("detection acceptance rate {rate:.2e} after {attempts} attempts")]
    DetectionStarvation { attempts: usize, rate: f64 },

    #[error("no outliers detected; lower the threshold xi or raise K")]
    NoOutliersDetected,
}

impl Error {
    /// Name of the variant, used as the error taxonomy label.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::ZeroMassRegion { .. } => "ZeroMassRegion",
            Error::OutOfWindow { .. } => "OutOfWindow",
            Error::Unbounded => "Unbounded",
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::CycleDetected { .. } => "CycleDetected",
            Error::WindowTooSmall { .. } => "WindowTooSmall",
            Error::TieAtBoundary { .. } => "TieAtBoundary",
            Error::EmptyRegion { .. } => "EmptyRegion",
            Error::CallbackInconsistent(_) => "CallbackInconsistent",
            Error::DegenerateDirection { .. } => "DegenerateDirection",
            Error::NonMonotonePivot { .. } => "NonMonotonePivot",
            Error::MaxIterations(_) => "MaxIterations",
            Error::NonUniqueActiveBlock => "NonUniqueActiveBlock",
            Error::DetectionStarvation { .. } => "DetectionStarvation",
            Error::NoOutliersDetected => "NoOutliersDetected",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
