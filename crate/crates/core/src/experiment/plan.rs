use super::ExperimentError;
use crate::dose::{DoseAnchorTable, NoiseModel};
use crate::dynamics::{HeadingWander, TrialNoise, TrimConfig};
use crate::pipeline::{PipelineConfig, Source};
use crate::sensors::{NoiseConfig, DEFAULT_MOCAP_RATE_HZ};
use crate::stimulus::{StimCommand, Target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Frequencies the stimulator is validated for, Hz.
pub const FREQ_RANGE: (f64, f64) = (40.0, 100.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FrequencySpec {
    Uniform { lo: f64, hi: f64 },
    /// Trials cycle through the values.
    Grid { values: Vec<f64> },
}

impl FrequencySpec {
    fn validate(&self) -> Result<(), ExperimentError> {
        let in_range = |f: f64| (FREQ_RANGE.0..=FREQ_RANGE.1).contains(&f);
        let ok = match self {
            FrequencySpec::Uniform { lo, hi } => in_range(*lo) && in_range(*hi) && lo <= hi,
            FrequencySpec::Grid { values } => !values.is_empty() && values.iter().all(|f| in_range(*f)),
        };
        if ok {
            Ok(())
        } else {
            Err(ExperimentError::Validation(format!(
                "frequencies must lie in [{}, {}] Hz: {self:?}",
                FREQ_RANGE.0, FREQ_RANGE.1
            )))
        }
    }
}

/// Everything a batch needs; serialized as `plan.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub beetles: u32,
    /// Trials per target, spread round-robin over the beetles.
    pub trials_per_condition: u32,
    pub targets: Vec<Target>,
    pub frequency: FrequencySpec,
    pub seed: u64,
    pub amplitude_mv: f64,
    pub pulse_width_ms: f64,
    pub duration_ms: f64,
    pub trim: TrimConfig,
    pub response_noise: NoiseModel,
    pub heading: HeadingWander,
    pub sensors: NoiseConfig,
    pub mocap_rate_hz: f64,
    /// Stop trials that leave the flight arena.
    pub arena: bool,
    pub source: Source,
    pub pipeline: PipelineConfig,
    pub table: DoseAnchorTable,
}

impl Default for ExperimentPlan {
    /// The calibrated default batch.
    fn default() -> Self {
        Self {
            beetles: 10,
            trials_per_condition: 500,
            targets: Target::ALL.to_vec(),
            frequency: FrequencySpec::Uniform { lo: 63.0, hi: 100.0 },
            seed: 2024,
            amplitude_mv: 3000.0,
            pulse_width_ms: 3.0,
            duration_ms: 500.0,
            trim: TrimConfig::default(),
            response_noise: NoiseModel::default(),
            heading: HeadingWander::default(),
            sensors: NoiseConfig::default(),
            mocap_rate_hz: DEFAULT_MOCAP_RATE_HZ,
            arena: true,
            source: Source::Imu,
            pipeline: PipelineConfig::default(),
            table: DoseAnchorTable::default(),
        }
    }
}

/// One trial to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub beetle_id: u32,
    pub trial_id: u32,
    pub command: StimCommand,
    pub seed: u64,
    pub launch_heading_deg: f64,
}

impl TrialSpec {
    /// File stem, e.g. `b03_t0042_both`.
    pub fn name(&self) -> String {
        format!("b{:02}_t{:04}_{}", self.beetle_id, self.trial_id, self.command.target.name())
    }
}

impl ExperimentPlan {
    /// Small plan for smoke tests and examples.
    pub fn quick(seed: u64) -> Self {
        Self { beetles: 2, trials_per_condition: 4, seed, ..Self::default() }
    }

    pub fn from_json(s: &str) -> Result<Self, ExperimentError> {
        let plan: Self = serde_json::from_str(s).map_err(|e| ExperimentError::Validation(format!("plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let v = |m: &str| Err(ExperimentError::Validation(m.to_string()));
        if self.beetles == 0 {
            return v("beetles must be at least 1");
        }
        if self.trials_per_condition == 0 {
            return v("trials_per_condition must be at least 1");
        }
        if self.targets.is_empty() {
            return v("targets must not be empty");
        }
        self.frequency.validate()?;
        let probe = self.command(Target::Both, FREQ_RANGE.1);
        probe.validate().map_err(|e| ExperimentError::Validation(e.to_string()))?;
        self.trim.validate().map_err(|e| ExperimentError::Validation(e.to_string()))?;
        self.response_noise.validate().map_err(|e| ExperimentError::Validation(e.to_string()))?;
        self.sensors.validate().map_err(|e| ExperimentError::Validation(e.to_string()))?;
        self.table.validate().map_err(|e| ExperimentError::Validation(e.to_string()))?;
        if !(self.mocap_rate_hz > 0.0 && self.mocap_rate_hz <= 1000.0) {
            return v("mocap_rate_hz must be in (0, 1000]");
        }
        Ok(())
    }

    pub fn noise(&self) -> TrialNoise {
        TrialNoise { response: self.response_noise, heading: self.heading }
    }

    fn command(&self, target: Target, frequency_hz: f64) -> StimCommand {
        StimCommand {
            target,
            frequency_hz,
            duration_ms: self.duration_ms,
            amplitude_mv: self.amplitude_mv,
            pulse_width_ms: self.pulse_width_ms,
        }
    }

    /// All trials in a fixed order; each depends only on the plan seed.
    pub fn expand(&self) -> Vec<TrialSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::new();
        let mut next_id = vec![0u32; self.beetles as usize];
        for &target in &self.targets {
            for k in 0..self.trials_per_condition {
                let beetle = k % self.beetles;
                let f = match &self.frequency {
                    FrequencySpec::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
                    FrequencySpec::Grid { values } => values[k as usize % values.len()],
                };
                let id = &mut next_id[beetle as usize];
                out.push(TrialSpec {
                    beetle_id: beetle,
                    trial_id: *id,
                    command: self.command(target, f),
                    seed: rng.random(),
                    launch_heading_deg: rng.random_range(-180.0..180.0),
                });
                *id += 1;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_is_deterministic_and_complete() {
        let plan = ExperimentPlan { beetles: 3, trials_per_condition: 7, ..ExperimentPlan::default() };
        let a = plan.expand();
        assert_eq!(a, plan.expand());
        assert_eq!(a.len(), 21);
        for t in Target::ALL {
            assert_eq!(a.iter().filter(|s| s.command.target == t).count(), 7);
        }
        let mut names: Vec<String> = a.iter().map(TrialSpec::name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 21);
        assert!(a.iter().all(|s| (63.0..=100.0).contains(&s.command.frequency_hz)));
    }

    #[test]
    fn rejects_out_of_range_frequency() {
        let plan = ExperimentPlan { frequency: FrequencySpec::Grid { values: vec![80.0, 200.0] }, ..ExperimentPlan::default() };
        assert!(matches!(plan.validate(), Err(ExperimentError::Validation(_))));
        let plan = ExperimentPlan { beetles: 0, ..ExperimentPlan::default() };
        assert!(plan.validate().is_err());
        assert!(ExperimentPlan::default().validate().is_ok());
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let plan = ExperimentPlan::from_json(r#"{"beetles": 2, "trials_per_condition": 3, "targets": ["both"], "frequency": {"kind": "grid", "values": [63, 100]}}"#).unwrap();
        assert_eq!(plan.targets, vec![Target::Both]);
        let back = ExperimentPlan::from_json(&serde_json::to_string(&plan).unwrap()).unwrap();
        assert_eq!(back, plan);
    }
}
