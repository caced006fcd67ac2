//! Hypothesis tests, rank correlation and confidence bands used to analyse
//! batches of stimulation trials.

pub mod correlation;
pub mod inference;
pub mod report;
pub mod special;

pub use correlation::{pearson, ranks, spearman, CorrelationResult};
pub use inference::{
    binomial_test, mean_ci95, one_sample_t, paired_t, spike_rate, ConfidenceBand, TestResult,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("zero variance: the test statistic is undefined")]
    ZeroVariance,
    #[error("all values tied: correlation undefined")]
    AllTied,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("non-finite sample value")]
    NonFinite,
}

/// Significance threshold used throughout the reports.
pub const ALPHA: f64 = 0.05;

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub(crate) fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub(crate) fn check_finite(x: &[f64]) -> Result<(), StatsError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}
