//! Batch experiment: simulates a plan into a run directory, analyzes it and
//! prints the frequency correlations and the induced-pitch panel of the Both cohort.
//!
//! ```bash
//! cargo run --release --example batch_experiment -- 100
//! ```

use cyborg::experiment::{analyze_trials, load_trials, run_plan, write_analysis, ExperimentPlan};

fn main() -> anyhow::Result<()> {
    let per_target: u32 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let plan = ExperimentPlan { trials_per_condition: per_target, ..ExperimentPlan::default() };
    let dir = std::env::temp_dir().join("cyborg_batch_experiment");
    let summary = run_plan(&plan, &dir, &|_, _| {})?;
    println!("{} trials written to {}", summary.trials, summary.out_dir);

    let (trials, warnings) = load_trials(&dir)?;
    let analysis = analyze_trials(&trials, plan.source, &plan.pipeline, warnings);
    write_analysis(&analysis, &dir)?;
    let r = &analysis.report;
    println!("{} analyzed, {} excluded by the saccade rule", r.analyzed, r.excluded);
    for c in r.stats.correlations.iter().filter(|c| c.x == "frequency_hz") {
        println!("  {:<6} f ~ {:<7} rho {:+.3}  p {:.1e}", c.target, c.y, c.result.rho, c.result.p_value);
    }
    if let Some(panel) = analysis.panels.iter().find(|p| p.file_name() == "both_d_pitch.csv") {
        println!("both: induced pitch by frequency");
        for row in &panel.rows {
            println!("  {:>5.1} Hz  n {:>3}  {:>6.2} deg  [{:.2}, {:.2}]", row.freq_hz, row.n, row.mean, row.lo, row.hi);
        }
    }
    Ok(())
}
