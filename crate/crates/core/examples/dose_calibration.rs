//! Calibrates the trial-noise model of the dose-response table against the
//! reported Spearman correlations and prints the result.
//!
//! ```bash
//! cargo run --release --example dose_calibration
//! ```

use cyborg::dose::{
    calibrate_all, simulated_correlations, CalibrationSetup, DoseAnchorTable, NoiseModel,
    FREQUENCY_TARGETS, PAIR_TARGETS,
};

fn main() -> anyhow::Result<()> {
    let table = DoseAnchorTable::default();
    let setup = CalibrationSetup::default();
    let mut base = NoiseModel::default();
    base.sigma[4] = 0.3;
    base.sigma[5] = 0.3;
    base.loading[0] = 0.7;
    base.loading[2] = 0.7;
    let model = calibrate_all(&table, &base, &setup)?;
    println!("sigma   {:?}", model.sigma);
    println!("loading {:?}", model.loading);
    let (freq, pairs) = simulated_correlations(&table, &model, &setup)?;
    for (t, r) in FREQUENCY_TARGETS.iter().zip(freq) {
        println!("f -> {:<7} ({:<6}) target {:+.2}  simulated {:+.3}", t.channel, t.cohort.name(), t.rho, r);
    }
    for (t, r) in PAIR_TARGETS.iter().zip(pairs) {
        println!("{:<7} ~ {:<7} ({:<6}) target {:+.2}  simulated {:+.3}", t.a, t.b, t.cohort.name(), t.rho, r);
    }
    Ok(())
}
