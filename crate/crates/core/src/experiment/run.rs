use super::plan::{ExperimentPlan, TrialSpec};
use super::{io_err, ExperimentError};
use crate::dynamics::{run_trial, write_truth_csv, Arena, LaunchState, TrialProtocol, TrialRecord};
use crate::geometry::Vec3;
use crate::sensors::{sample_imu, sample_mocap, write_imu_csv, write_mocap_csv};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Launch point: the middle of the arena at mid height.
pub const LAUNCH_POSITION: Vec3 = Vec3::new(6.0, 4.0, 2.0);

/// Truth and sensor streams of one planned trial.
pub fn simulate_trial(plan: &ExperimentPlan, spec: &TrialSpec) -> Result<TrialRecord, ExperimentError> {
    let sim = |e: crate::dynamics::SimError| ExperimentError::Simulation(e.to_string());
    let protocol = TrialProtocol::new(spec.command, spec.seed);
    let launch = LaunchState { position: LAUNCH_POSITION, heading_deg: spec.launch_heading_deg };
    let arena = plan.arena.then(Arena::default);
    let mut rec = run_trial(&plan.trim, &protocol, &plan.table, &plan.noise(), launch, arena).map_err(sim)?;
    rec.meta.beetle_id = spec.beetle_id;
    rec.meta.trial_id = spec.trial_id;
    let sensors = plan.sensors.with_seed(plan.sensors.seed ^ spec.seed);
    let serr = |e: crate::sensors::SensorError| ExperimentError::Simulation(e.to_string());
    rec.imu = sample_imu(&rec.truth, &sensors).map_err(serr)?;
    rec.mocap = sample_mocap(&rec.truth, &sensors, plan.mocap_rate_hz).map_err(serr)?;
    Ok(rec)
}

/// Every trial of the plan, in [`ExperimentPlan::expand`] order.
pub fn simulate_plan(plan: &ExperimentPlan) -> Result<Vec<TrialRecord>, ExperimentError> {
    plan.validate()?;
    plan.expand().par_iter().map(|s| simulate_trial(plan, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub trials: usize,
    pub terminated: usize,
    pub out_dir: String,
}

/// Simulates the plan into `out`: `plan.json` and three files per trial
/// under `trials/`. `progress` receives the number of trials finished.
pub fn run_plan(
    plan: &ExperimentPlan,
    out: &Path,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<RunSummary, ExperimentError> {
    plan.validate()?;
    let trials_dir = out.join("trials");
    fs::create_dir_all(&trials_dir).map_err(|e| io_err(&trials_dir, e))?;
    let plan_path = out.join("plan.json");
    let json = serde_json::to_string_pretty(plan).expect("plan serializes");
    fs::write(&plan_path, json + "\n").map_err(|e| io_err(&plan_path, e))?;
    let specs = plan.expand();
    let done = AtomicUsize::new(0);
    let terminated: Result<Vec<bool>, ExperimentError> = specs
        .par_iter()
        .map(|spec| {
            let rec = simulate_trial(plan, spec)?;
            write_trial(&rec, &trials_dir, &spec.name())?;
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, specs.len());
            Ok(rec.terminated)
        })
        .collect();
    let terminated = terminated?;
    Ok(RunSummary {
        trials: specs.len(),
        terminated: terminated.iter().filter(|t| **t).count(),
        out_dir: out.display().to_string(),
    })
}

/// Writes `NAME.csv` (truth with header), `NAME.imu.csv` and `NAME.mocap.csv`.
pub fn write_trial(rec: &TrialRecord, dir: &Path, name: &str) -> Result<(), ExperimentError> {
    let create = |suffix: &str| {
        let p = dir.join(format!("{name}{suffix}"));
        File::create(&p).map(BufWriter::new).map_err(|e| io_err(&p, e))
    };
    let env = |e: String| ExperimentError::Environment(format!("{name}: {e}"));
    write_truth_csv(rec, create(".csv")?).map_err(|e| env(e.to_string()))?;
    write_imu_csv(&rec.imu, create(".imu.csv")?).map_err(|e| env(e.to_string()))?;
    write_mocap_csv(&rec.mocap, create(".mocap.csv")?).map_err(|e| env(e.to_string()))?;
    Ok(())
}
