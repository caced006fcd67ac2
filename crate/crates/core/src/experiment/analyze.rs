use super::{io_err, ExperimentError};
use crate::dose::{Channel, Cohort, InducedResponse, PAIR_TARGETS};
use crate::dynamics::{read_meta_line, TrialHeader, TrialRecord};
use crate::pipeline::{extract_induced, write_induced_csv, InducedRow, PipelineConfig, Source};
use crate::sensors::{read_imu_csv, read_mocap_csv};
use crate::stats::report::{CorrelationEntry, GroupTest, StatsReport};
use crate::stats::{mean_ci95, one_sample_t, spearman};
use crate::stimulus::Target;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Frequency bins wider than this many distinct values are pooled into 5 Hz bins.
const MAX_EXACT_BINS: usize = 12;
const BIN_HZ: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub freq_hz: f64,
    pub n: usize,
    pub mean: f64,
    /// 95% confidence interval; NaN with fewer than two trials.
    pub lo: f64,
    pub hi: f64,
}

/// Frequency against one induced channel for one cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub cohort: Cohort,
    pub channel: Channel,
    pub rows: Vec<PanelRow>,
}

impl Panel {
    pub fn file_name(&self) -> String {
        format!("{}_{}.csv", self.cohort.name(), self.channel.name())
    }
}

/// Direction of the mean response on the channels with a known sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignPattern {
    pub both_ah_negative: bool,
    pub both_av_positive: bool,
    pub single_yaw_contralateral: bool,
    pub single_roll_contralateral: bool,
}

impl SignPattern {
    pub fn all(&self) -> bool {
        self.both_ah_negative && self.both_av_positive && self.single_yaw_contralateral && self.single_roll_contralateral
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub source: Source,
    pub trials: usize,
    pub analyzed: usize,
    pub excluded: usize,
    pub failed: usize,
    pub warning_count: usize,
    pub warnings: Vec<String>,
    pub signs: Option<SignPattern>,
    pub stats: StatsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub rows: Vec<InducedRow>,
    pub panels: Vec<Panel>,
    pub report: AnalysisReport,
}

fn cohort_rows(rows: &[InducedRow], cohort: Cohort) -> Vec<(f64, InducedResponse)> {
    rows.iter()
        .filter(|r| !r.excluded && cohort.targets().contains(&r.target))
        .map(|r| (r.freq_hz, r.response.folded(r.target)))
        .collect()
}

fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

fn stats_report(rows: &[InducedRow], warnings: &mut Vec<String>) -> StatsReport {
    let mut report = StatsReport::default();
    for cohort in [Cohort::Both, Cohort::Single] {
        let data = cohort_rows(rows, cohort);
        if data.is_empty() {
            continue;
        }
        let freq: Vec<f64> = data.iter().map(|d| d.0).collect();
        let column = |c: Channel| -> Vec<f64> { data.iter().map(|d| d.1.get(c)).collect() };
        for c in Channel::ALL {
            match spearman(&freq, &column(c)) {
                Ok(result) => report.correlations.push(CorrelationEntry {
                    target: cohort.name().into(),
                    x: "frequency_hz".into(),
                    y: c.name().into(),
                    result,
                }),
                Err(e) => warnings.push(format!("{} frequency vs {c}: {e}", cohort.name())),
            }
        }
        for p in PAIR_TARGETS.iter().filter(|p| p.cohort == cohort) {
            match spearman(&column(p.a), &column(p.b)) {
                Ok(result) => report.correlations.push(CorrelationEntry {
                    target: cohort.name().into(),
                    x: p.a.name().into(),
                    y: p.b.name().into(),
                    result,
                }),
                Err(e) => warnings.push(format!("{} {} vs {}: {e}", cohort.name(), p.a, p.b)),
            }
        }
    }
    for t in Target::ALL {
        let data: Vec<&InducedRow> = rows.iter().filter(|r| !r.excluded && r.target == t).collect();
        if data.is_empty() {
            continue;
        }
        for c in Channel::ALL {
            let x: Vec<f64> = data.iter().map(|r| r.response.get(c)).collect();
            match one_sample_t(&x, 0.0) {
                Ok(result) => report.group_tests.push(GroupTest {
                    target: t.name().into(),
                    channel: c.name().into(),
                    mean: mean(&x).expect("non-empty"),
                    result,
                }),
                Err(e) => warnings.push(format!("{} {c} t-test: {e}", t.name())),
            }
        }
    }
    report
}

fn signs(rows: &[InducedRow]) -> Option<SignPattern> {
    let both = cohort_rows(rows, Cohort::Both);
    let single = cohort_rows(rows, Cohort::Single);
    let m = |d: &[(f64, InducedResponse)], c: Channel| mean(&d.iter().map(|x| x.1.get(c)).collect::<Vec<_>>());
    Some(SignPattern {
        both_ah_negative: m(&both, Channel::Ah)? < 0.0,
        both_av_positive: m(&both, Channel::Av)? > 0.0,
        single_yaw_contralateral: m(&single, Channel::Yaw)? > 0.0,
        single_roll_contralateral: m(&single, Channel::Roll)? > 0.0,
    })
}

fn panels(rows: &[InducedRow]) -> Vec<Panel> {
    let mut out = Vec::new();
    for cohort in [Cohort::Both, Cohort::Single] {
        let data = cohort_rows(rows, cohort);
        if data.is_empty() {
            continue;
        }
        let mut distinct: Vec<f64> = data.iter().map(|d| d.0).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let bin = |f: f64| if distinct.len() <= MAX_EXACT_BINS { f } else { (f / BIN_HZ).round() * BIN_HZ };
        let mut bins: Vec<f64> = distinct.iter().map(|&f| bin(f)).collect();
        bins.dedup();
        for c in Channel::ALL {
            let rows = bins
                .iter()
                .map(|&b| {
                    let vals: Vec<Vec<f64>> = data.iter().filter(|d| bin(d.0) == b).map(|d| vec![d.1.get(c)]).collect();
                    let m = vals.iter().map(|v| v[0]).sum::<f64>() / vals.len() as f64;
                    let (lo, hi) = mean_ci95(&vals).map_or((f64::NAN, f64::NAN), |band| (band.lo[0], band.hi[0]));
                    PanelRow { freq_hz: b, n: vals.len(), mean: m, lo, hi }
                })
                .collect();
            out.push(Panel { cohort, channel: c, rows });
        }
    }
    out
}

/// Extracts, tabulates and tests a set of trials. Trials that cannot be
/// analyzed are skipped with a warning.
pub fn analyze_trials(trials: &[TrialRecord], source: Source, cfg: &PipelineConfig, mut warnings: Vec<String>) -> Analysis {
    let results: Vec<Result<InducedRow, String>> = trials
        .par_iter()
        .map(|tr| {
            let e = extract_induced(tr, source, cfg).map_err(|e| {
                format!("beetle {} trial {} ({}): {e}", tr.meta.beetle_id, tr.meta.trial_id, tr.meta.target.name())
            })?;
            Ok(InducedRow {
                beetle_id: tr.meta.beetle_id,
                trial_id: tr.meta.trial_id,
                target: tr.meta.target,
                freq_hz: tr.meta.frequency_hz,
                response: e.response,
                excluded: e.excluded || tr.terminated,
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(w) => {
                failed += 1;
                warnings.push(w);
            }
        }
    }
    let stats = stats_report(&rows, &mut warnings);
    let report = AnalysisReport {
        source,
        trials: trials.len(),
        analyzed: rows.len(),
        excluded: rows.iter().filter(|r| r.excluded).count(),
        failed,
        warning_count: warnings.len(),
        warnings,
        signs: signs(&rows),
        stats,
    };
    Analysis { panels: panels(&rows), rows, report }
}

fn trial_stems(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.ends_with(".csv") && !name.ends_with(".imu.csv") && !name.ends_with(".mocap.csv") {
            stems.push(path.with_extension(""));
        }
    }
    stems.sort();
    Ok(stems)
}

fn load_trial(stem: &Path) -> Result<TrialRecord, String> {
    let open = |suffix: &str| {
        let p = PathBuf::from(format!("{}{suffix}", stem.display()));
        File::open(&p).map(BufReader::new).map_err(|e| format!("{}: {e}", p.display()))
    };
    let header: TrialHeader = read_meta_line(&mut open(".csv")?).map_err(|e| e.to_string())?;
    let imu = read_imu_csv(open(".imu.csv")?)?;
    let mocap = read_mocap_csv(open(".mocap.csv")?)?;
    Ok(TrialRecord { meta: header.meta, truth: Vec::new(), imu, mocap, terminated: header.terminated })
}

/// Reads every trial under `dir/trials` (or `dir` itself). Unreadable
/// trials are skipped and reported in the returned warnings.
pub fn load_trials(dir: &Path) -> Result<(Vec<TrialRecord>, Vec<String>), ExperimentError> {
    if !dir.is_dir() {
        return Err(ExperimentError::Environment(format!("{}: not a directory", dir.display())));
    }
    let sub = dir.join("trials");
    let stems = trial_stems(if sub.is_dir() { &sub } else { dir })?;
    if stems.is_empty() {
        return Err(ExperimentError::Validation(format!("{}: no trial files", dir.display())));
    }
    let loaded: Vec<_> = stems.par_iter().map(|s| load_trial(s).map_err(|e| format!("skipped {}: {e}", s.display()))).collect();
    let mut trials = Vec::new();
    let mut warnings = Vec::new();
    for l in loaded {
        match l {
            Ok(t) => trials.push(t),
            Err(w) => warnings.push(w),
        }
    }
    Ok((trials, warnings))
}

/// Writes `induced.csv`, `panels/*.csv` and `report.json` into `out`.
pub fn write_analysis(a: &Analysis, out: &Path) -> Result<(), ExperimentError> {
    let panels_dir = out.join("panels");
    fs::create_dir_all(&panels_dir).map_err(|e| io_err(&panels_dir, e))?;
    let p = out.join("induced.csv");
    let f = File::create(&p).map_err(|e| io_err(&p, e))?;
    write_induced_csv(&a.rows, BufWriter::new(f)).map_err(|e| ExperimentError::Environment(e.to_string()))?;
    for panel in &a.panels {
        let p = panels_dir.join(panel.file_name());
        let f = File::create(&p).map_err(|e| io_err(&p, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        let env = |e: csv::Error| ExperimentError::Environment(e.to_string());
        w.write_record(["freq_hz", "n", "mean", "ci_lo", "ci_hi"]).map_err(env)?;
        for r in &panel.rows {
            w.write_record([r.freq_hz.to_string(), r.n.to_string(), r.mean.to_string(), r.lo.to_string(), r.hi.to_string()])
                .map_err(env)?;
        }
        w.flush().map_err(|e| io_err(&p, e))?;
    }
    let p = out.join("report.json");
    let mut f = File::create(&p).map_err(|e| io_err(&p, e))?;
    let json = serde_json::to_string_pretty(&a.report).expect("report serializes");
    writeln!(f, "{json}").map_err(|e| io_err(&p, e))?;
    Ok(())
}
