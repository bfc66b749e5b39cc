//! Command-line front end: CSV ingestion, per-instance analysis, experiment
//! commands and report emission.

use std::fmt;

use robust_si::detection::OutlierSet;
use robust_si::inference::{analyze_instance, observed_outliers, SelectiveReport};
use robust_si::model::{Dataset, DetectionRule, EstimatorSpec};

pub mod ingest;
pub mod report;

pub use ingest::{emit_dataset_csv, ingest_csv, ingest_csv_path, parse_sigma, read_sigma_file};
pub use report::{emit_report, emit_table, Format};

/// Errors surfaced by the command-line tool, each mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    MissingColumn(String),
    Io(String),
    Core(robust_si::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "ParseError",
            CliError::MissingColumn(_) => "MissingColumn",
            CliError::Io(_) => "IoError",
            CliError::Core(e) => e.kind(),
        }
    }

    /// 2 for no detection, 3 for bad input, 4 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        use robust_si::Error as E;
        match self {
            CliError::Parse { .. } | CliError::MissingColumn(_) | CliError::Io(_) => 3,
            CliError::Core(E::NoOutliersDetected) => 2,
            CliError::Core(
                E::DimensionMismatch(_) | E::InvalidInput(_) | E::TieAtBoundary { .. },
            ) => 3,
            CliError::Core(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse {
                row,
                column,
                message,
            } => {
                write!(f, "row {row}, column \"{column}\": {message}")
            }
            CliError::MissingColumn(c) => write!(f, "column \"{c}\" not found in header"),
            CliError::Io(m) => f.write_str(m),
            CliError::Core(robust_si::Error::NoOutliersDetected) => {
                f.write_str("no outliers detected; lower the threshold (--xi) or raise K (--k)")
            }
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<robust_si::Error> for CliError {
    fn from(e: robust_si::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub estimator: EstimatorSpec,
    pub rule: DetectionRule,
    pub alpha: f64,
    pub window_mult: f64,
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(robust_si::Error::InvalidInput(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            ))
            .into());
        }
        if self.window_mult.is_nan() || self.window_mult < 5.0 {
            return Err(robust_si::Error::InvalidInput(format!(
                "window multiplier must be at least 5, got {}",
                self.window_mult
            ))
            .into());
        }
        Ok(())
    }
}

/// One report per detected instance, ordered by instance index.
pub fn cmd_analyze(
    config: &AnalysisConfig,
    dataset: &Dataset,
) -> Result<Vec<SelectiveReport>, CliError> {
    config.validate()?;
    config.rule.validate(dataset.n())?;
    if !dataset.is_full_column_rank() {
        log::warn!("design matrix is rank deficient; estimator optima may not be unique");
    }
    let outliers: OutlierSet = observed_outliers(dataset, &config.estimator, &config.rule)?;
    if outliers.is_empty() {
        return Err(robust_si::Error::NoOutliersDetected.into());
    }
    outliers
        .indices()
        .iter()
        .map(|&i| {
            analyze_instance(
                dataset,
                &config.estimator,
                &config.rule,
                &outliers,
                i,
                config.alpha,
                config.window_mult,
            )
            .map_err(CliError::from)
        })
        .collect()
}
