use super::analyze::Analysis;
use super::serve::live_analysis;
use super::{io_err, ExperimentError};
use crate::pipeline::PipelineConfig;
use crate::protocol::{reconstruct_trials, Replay};
use std::path::Path;

/// Rebuilds trials from a frame log file and analyzes them exactly as the
/// live session does.
pub fn replay_file(path: &Path) -> Result<(Replay, Analysis), ExperimentError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.is_empty() {
        return Err(ExperimentError::Validation(format!("{}: empty log", path.display())));
    }
    Ok((reconstruct_trials(&bytes, &PipelineConfig::default()), live_analysis(&bytes)))
}
