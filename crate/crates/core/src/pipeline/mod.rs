//! Trial analysis: path smoothing, filtering, acceleration decomposition and
//! induced-response extraction.

mod extract;
mod filter;
mod poly;

pub use extract::{
    decompose_accel, decompose_vector, extract_batch, extract_induced, induced_amount,
    saccade_excluded, write_induced_csv, AccelDecomposition, Extraction, InducedRow,
    PipelineConfig, Source,
};
pub use filter::{butterworth_lowpass, Butterworth, FilterInit, Section, DEFAULT_CUTOFF_HZ, DEFAULT_ORDER};
pub use poly::{fit_poly_path, PolyPath, DEGREE, MIN_SAMPLES};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("design matrix is rank deficient (duplicate timestamps?)")]
    RankDeficient,
    #[error("non-finite sample")]
    NonFinite,
    #[error("cutoff {cutoff_hz} Hz invalid for sampling rate {fs_hz} Hz")]
    Cutoff { cutoff_hz: f64, fs_hz: f64 },
    #[error("horizontal speed too low to define a direction at t = {t_ms} ms")]
    Direction { t_ms: f64 },
    #[error("series does not cover [{from_ms}, {to_ms}] ms")]
    WindowNotCovered { from_ms: f64, to_ms: f64 },
    #[error("trial has no {0} stream")]
    MissingStream(&'static str),
    #[error("samples are not uniformly spaced")]
    NonUniform,
    #[error("series lengths differ")]
    LengthMismatch,
}
