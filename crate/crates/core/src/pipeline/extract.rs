use super::filter::{Butterworth, FilterInit};
use super::poly::{fit_poly_path, PolyPath};
use super::PipelineError;
use crate::dose::InducedResponse;
use crate::dynamics::{heading_vector, lateral_vector, TrialRecord};
use crate::geometry::{quat_to_euler, unwrap_deg, Vec3};
use crate::sensors::{world_accel_from_specific_force, MocapSample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

const TIME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Imu,
    Mocap,
}

impl std::str::FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "imu" => Ok(Source::Imu),
            "mocap" => Ok(Source::Mocap),
            _ => Err(format!("unknown source {s:?} (imu|mocap)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub pre_ms: f64,
    pub stim_ms: f64,
    /// Induced amounts look for the peak within this span after onset.
    pub peak_window_ms: f64,
    pub filter_order: usize,
    pub filter_cutoff_hz: f64,
    pub zero_phase: bool,
    /// Below this horizontal speed the flight direction is undefined, m/s.
    pub min_speed: f64,
    pub saccade_limit_dps: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pre_ms: 150.0,
            stim_ms: 500.0,
            peak_window_ms: 300.0,
            filter_order: 5,
            filter_cutoff_hz: 20.0,
            zero_phase: false,
            min_speed: 0.05,
            saccade_limit_dps: 500.0,
        }
    }
}

/// Horizontal, lateral (leftward positive) and vertical acceleration, m/s².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AccelDecomposition {
    pub a_h: f64,
    pub a_lat: f64,
    pub a_v: f64,
}

/// Splits `accel` along the horizontal direction of `velocity`.
pub fn decompose_vector(velocity: Vec3, accel: Vec3, min_speed: f64) -> Option<AccelDecomposition> {
    let speed = velocity.x.hypot(velocity.y);
    if !(speed > min_speed) {
        return None;
    }
    let h = Vec3::new(velocity.x / speed, velocity.y / speed, 0.0);
    let l = Vec3::new(-h.y, h.x, 0.0);
    Some(AccelDecomposition { a_h: accel.dot(h), a_lat: accel.dot(l), a_v: accel.z })
}

/// Decomposition of the smoothed path acceleration at `t_ms`.
pub fn decompose_accel(path: &PolyPath, t_ms: f64, min_speed: f64) -> Result<AccelDecomposition, PipelineError> {
    decompose_vector(path.velocity(t_ms), path.acceleration(t_ms), min_speed)
        .ok_or(PipelineError::Direction { t_ms })
}

fn interp(t: &[f64], x: &[f64], at: f64) -> f64 {
    let j = t.partition_point(|&s| s < at);
    if j < t.len() && (t[j] - at).abs() <= TIME_EPS {
        return x[j];
    }
    let j = j.clamp(1, t.len() - 1);
    let f = (at - t[j - 1]) / (t[j] - t[j - 1]);
    x[j - 1] + (x[j] - x[j - 1]) * f
}

/// Signed largest excursion from the onset value within
/// `[onset, onset + window]`.
pub fn induced_amount(t_ms: &[f64], x: &[f64], onset_ms: f64, window_ms: f64) -> Result<f64, PipelineError> {
    if t_ms.len() != x.len() {
        return Err(PipelineError::LengthMismatch);
    }
    let end = onset_ms + window_ms;
    let covered = !t_ms.is_empty() && t_ms[0] <= onset_ms + TIME_EPS && t_ms[t_ms.len() - 1] >= end - TIME_EPS;
    if !covered {
        return Err(PipelineError::WindowNotCovered { from_ms: onset_ms, to_ms: end });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::NonFinite);
    }
    let x0 = if t_ms.len() == 1 { x[0] } else { interp(t_ms, x, onset_ms) };
    let mut best = 0.0f64;
    for (&t, &v) in t_ms.iter().zip(x) {
        if t >= onset_ms - TIME_EPS && t <= end + TIME_EPS && (v - x0).abs() > best.abs() {
            best = v - x0;
        }
    }
    Ok(best)
}

/// Whether the heading of the smoothed path ever turns faster than
/// `limit_dps` on a 1 ms grid. Samples below `min_speed` are skipped.
pub fn saccade_excluded(path: &PolyPath, limit_dps: f64, min_speed: f64) -> bool {
    let n = (path.t1_ms - path.t0_ms).floor() as usize;
    (0..=n).any(|i| {
        let t = path.t0_ms + i as f64;
        let (v, a) = (path.velocity(t), path.acceleration(t));
        let s2 = v.x * v.x + v.y * v.y;
        s2 > min_speed * min_speed && ((v.x * a.y - v.y * a.x) / s2).to_degrees().abs() > limit_dps
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    /// Angle channels are NaN for the mocap source.
    pub response: InducedResponse,
    pub excluded: bool,
}

fn mocap_window(trial: &TrialRecord, cfg: &PipelineConfig) -> Vec<MocapSample> {
    let onset = trial.meta.stim_onset_ms;
    let (from, to) = (onset - cfg.pre_ms - TIME_EPS, onset + cfg.stim_ms + TIME_EPS);
    trial.mocap.iter().filter(|s| (from..=to).contains(&s.t_ms)).copied().collect()
}

fn saccade_check(trial: &TrialRecord, cfg: &PipelineConfig) -> Result<bool, PipelineError> {
    if trial.mocap.is_empty() {
        return Ok(false);
    }
    let path = fit_poly_path(&mocap_window(trial, cfg))?;
    Ok(saccade_excluded(&path, cfg.saccade_limit_dps, cfg.min_speed))
}

fn extract_imu(trial: &TrialRecord, cfg: &PipelineConfig) -> Result<InducedResponse, PipelineError> {
    let imu = &trial.imu;
    if imu.len() < 3 {
        return Err(PipelineError::MissingStream("imu"));
    }
    let t: Vec<f64> = imu.iter().map(|s| s.t_ms).collect();
    let dt = t[1] - t[0];
    if !(dt > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0)) {
        return Err(PipelineError::NonUniform);
    }
    let onset = trial.meta.stim_onset_ms;
    let window = cfg.peak_window_ms;
    let euler: Vec<_> = imu.iter().map(|s| quat_to_euler(s.orientation).angles).collect();
    let yaw = unwrap_deg(&euler.iter().map(|e| e.yaw).collect::<Vec<_>>());
    let pitch: Vec<f64> = euler.iter().map(|e| e.pitch).collect();
    let roll = unwrap_deg(&euler.iter().map(|e| e.roll).collect::<Vec<_>>());

    // direction of flight taken as the body heading at onset
    let heading = interp(&t, &yaw, onset);
    let (h, l) = (heading_vector(heading), lateral_vector(heading));
    let mut series = [Vec::new(), Vec::new(), Vec::new()];
    for s in imu {
        let a = world_accel_from_specific_force(s.accel, s.orientation);
        series[0].push(a.dot(h));
        series[1].push(a.dot(l));
        series[2].push(a.z);
    }
    let filter = Butterworth::lowpass(cfg.filter_order, cfg.filter_cutoff_hz, 1000.0 / dt)?;
    let [a_h, a_lat, a_v] = series.map(|x| {
        if cfg.zero_phase {
            filter.filtfilt(&x)
        } else {
            filter.filter(&x, FilterInit::Steady)
        }
    });
    let amount = |x: &[f64]| induced_amount(&t, x, onset, window);
    Ok(InducedResponse {
        d_pitch: amount(&pitch)?,
        d_yaw: amount(&yaw)?,
        d_roll: amount(&roll)?,
        d_ah: amount(&a_h)?,
        d_alat: amount(&a_lat)?,
        d_av: amount(&a_v)?,
    })
}

fn extract_mocap(trial: &TrialRecord, cfg: &PipelineConfig) -> Result<(InducedResponse, bool), PipelineError> {
    if trial.mocap.is_empty() {
        return Err(PipelineError::MissingStream("mocap"));
    }
    let path = fit_poly_path(&mocap_window(trial, cfg))?;
    let onset = trial.meta.stim_onset_ms;
    let excluded = saccade_excluded(&path, cfg.saccade_limit_dps, cfg.min_speed);
    let end = onset + cfg.peak_window_ms;
    if !(path.contains(onset) && path.contains(end)) {
        return Err(PipelineError::WindowNotCovered { from_ms: onset, to_ms: end });
    }
    let n = cfg.peak_window_ms.round() as usize;
    let t: Vec<f64> = (0..=n).map(|i| onset + i as f64 * cfg.peak_window_ms / n as f64).collect();
    let mut series = [Vec::new(), Vec::new(), Vec::new()];
    for &ti in &t {
        let d = decompose_accel(&path, ti, cfg.min_speed)?;
        series[0].push(d.a_h);
        series[1].push(d.a_lat);
        series[2].push(d.a_v);
    }
    let amount = |x: &[f64]| induced_amount(&t, x, onset, cfg.peak_window_ms);
    Ok((
        InducedResponse {
            d_pitch: f64::NAN,
            d_yaw: f64::NAN,
            d_roll: f64::NAN,
            d_ah: amount(&series[0])?,
            d_alat: amount(&series[1])?,
            d_av: amount(&series[2])?,
        },
        excluded,
    ))
}

/// Induced response of one trial from the chosen sensor stream.
pub fn extract_induced(trial: &TrialRecord, source: Source, cfg: &PipelineConfig) -> Result<Extraction, PipelineError> {
    match source {
        Source::Imu => Ok(Extraction { response: extract_imu(trial, cfg)?, excluded: saccade_check(trial, cfg)? }),
        Source::Mocap => {
            let (response, excluded) = extract_mocap(trial, cfg)?;
            Ok(Extraction { response, excluded })
        }
    }
}

/// One line of the induced-response table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedRow {
    pub beetle_id: u32,
    pub trial_id: u32,
    pub target: crate::stimulus::Target,
    pub freq_hz: f64,
    pub response: InducedResponse,
    pub excluded: bool,
}

/// Extracts every trial in parallel; order follows the input.
pub fn extract_batch(trials: &[TrialRecord], source: Source, cfg: &PipelineConfig) -> Result<Vec<InducedRow>, PipelineError> {
    trials
        .par_iter()
        .map(|tr| {
            let e = extract_induced(tr, source, cfg)?;
            Ok(InducedRow {
                beetle_id: tr.meta.beetle_id,
                trial_id: tr.meta.trial_id,
                target: tr.meta.target,
                freq_hz: tr.meta.frequency_hz,
                response: e.response,
                excluded: e.excluded || tr.terminated,
            })
        })
        .collect()
}

pub fn write_induced_csv<W: Write>(rows: &[InducedRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "beetle_id", "trial_id", "target", "freq_hz", "d_pitch", "d_yaw", "d_roll", "d_ah", "d_alat", "d_av", "excluded",
    ])?;
    for r in rows {
        let mut rec = vec![r.beetle_id.to_string(), r.trial_id.to_string(), r.target.name().to_string(), r.freq_hz.to_string()];
        rec.extend(r.response.to_array().iter().map(|v| v.to_string()));
        rec.push(r.excluded.to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}
