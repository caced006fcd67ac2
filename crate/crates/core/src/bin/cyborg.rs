use clap::{Args, Parser, Subcommand};
use cyborg::experiment::{
    load_trials, analyze_trials, replay_file, run_plan, serve, write_analysis, ExperimentError, ExperimentPlan, Scenario,
    ServeConfig,
};
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Parser)]
#[command(name = "cyborg", version, about = "Beetle hybrid-robot simulator, analysis and live endpoint")]
struct Cli {
    /// Print a machine-readable JSON result on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Top,
}

#[derive(Subcommand)]
enum Top {
    #[command(subcommand)]
    Sim(Sim),
}

#[derive(Subcommand)]
enum Sim {
    /// Simulate a batch experiment into a directory.
    Run(RunArgs),
    /// Extract induced responses and statistics from a run directory.
    Analyze(AnalyzeArgs),
    /// Serve the live protocol endpoint.
    Serve(ServeArgs),
    /// Rebuild trials from a frame log and analyze them.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment plan JSON; the calibrated default batch if omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the plan seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directory (or a directory of trial files).
    dir: PathBuf,
    /// Plan whose source and pipeline settings apply; defaults to DIR/plan.json.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Where to write the tables; defaults to DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 7878)]
    port: u16,
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    /// Scenario JSON (session, optional controller goal, disturbance).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Directory for frames.bin and the final analysis.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the session seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this much simulated time.
    #[arg(long)]
    duration_ms: Option<u64>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Frame log written by `serve`.
    log: PathBuf,
    /// Directory for the reconstructed analysis.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Environment(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Validation(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce()) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
    } else {
        human();
    }
}

fn cmd_run(a: RunArgs, json: bool) -> Result<(), ExperimentError> {
    let mut plan = match &a.plan {
        Some(p) => read_json::<ExperimentPlan>(p)?,
        None => ExperimentPlan::default(),
    };
    if let Some(s) = a.seed {
        plan.seed = s;
    }
    plan.validate()?;
    let step = AtomicUsize::new(0);
    let progress = |done: usize, total: usize| {
        let decile = done * 10 / total.max(1);
        if step.fetch_max(decile, Ordering::Relaxed) < decile {
            eprintln!("{done}/{total} trials");
        }
    };
    let summary = run_plan(&plan, &a.out, &progress)?;
    emit(json, &summary, || {
        println!("{} trials ({} stopped at the arena bound) in {}", summary.trials, summary.terminated, summary.out_dir)
    });
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs, json: bool) -> Result<(), ExperimentError> {
    let plan_path = a.plan.clone().unwrap_or_else(|| a.dir.join("plan.json"));
    let plan = if a.plan.is_some() || plan_path.is_file() { read_json::<ExperimentPlan>(&plan_path)? } else { ExperimentPlan::default() };
    let (trials, warnings) = load_trials(&a.dir)?;
    let analysis = analyze_trials(&trials, plan.source, &plan.pipeline, warnings);
    let out = a.out.unwrap_or(a.dir);
    write_analysis(&analysis, &out)?;
    let r = &analysis.report;
    emit(json, r, || {
        println!("{} trials, {} analyzed, {} excluded, {} failed, {} warnings", r.trials, r.analyzed, r.excluded, r.failed, r.warning_count);
        for c in &r.stats.correlations {
            println!("  {:<6} {:>12} ~ {:<8} rho {:+.3}  p {:.2e}  n {}", c.target, c.x, c.y, c.result.rho, c.result.p_value, c.result.n);
        }
        match &r.signs {
            Some(s) => println!("sign pattern {}", if s.all() { "matches" } else { "differs" }),
            None => println!("sign pattern not evaluated (missing cohort)"),
        }
    });
    Ok(())
}

fn cmd_serve(a: ServeArgs, json: bool) -> Result<(), ExperimentError> {
    let mut scenario = match &a.plan {
        Some(p) => read_json::<Scenario>(p)?,
        None => Scenario::default(),
    };
    if let Some(s) = a.seed {
        scenario.session.seed = s;
    }
    let cfg = ServeConfig { port: a.port, time_scale: a.time_scale, duration_ms: a.duration_ms, out: a.out, scenario };
    let handle = serve(cfg)?;
    eprintln!("listening on {}", handle.addr);
    let summary = handle.join()?;
    emit(json, &summary, || {
        println!(
            "{} ms simulated, {} frames out, {} trains, {} malformed, {} log bytes",
            summary.sim_ms, summary.session.frames_out, summary.session.trains, summary.session.malformed, summary.log_bytes
        )
    });
    Ok(())
}

fn cmd_replay(a: ReplayArgs, json: bool) -> Result<(), ExperimentError> {
    let (replay, analysis) = replay_file(&a.log)?;
    if let Some(out) = &a.out {
        write_analysis(&analysis, out)?;
    }
    let value = json!({
        "frames": replay.frames,
        "trials": replay.trials.len(),
        "errors": replay.errors,
        "warnings": replay.warnings,
        "analysis": analysis.report,
    });
    emit(json, &value, || {
        println!("{} frames, {} trials, {} decode errors", replay.frames, replay.trials.len(), replay.errors.len());
        for e in &replay.errors {
            println!("  {e}");
        }
        for w in &replay.warnings {
            println!("  warning: {w}");
        }
    });
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json = cli.json;
    let Top::Sim(sim) = cli.cmd;
    let result = match sim {
        Sim::Run(a) => cmd_run(a, json),
        Sim::Analyze(a) => cmd_analyze(a, json),
        Sim::Serve(a) => cmd_serve(a, json),
        Sim::Replay(a) => cmd_replay(a, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                ExperimentError::Validation(_) => "validation",
                ExperimentError::Environment(_) => "environment",
                ExperimentError::Simulation(_) => "simulation",
            };
            eprintln!("error: {e}");
            if json {
                println!("{}", json!({ "error": e.to_string(), "kind": kind, "exit_code": e.exit_code() }));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
