//! Wing Euler angles in the stroke-plane frame.
//!
//! The leading-edge direction `l` gives elevation `phi = atan2(l·Y', l·X')`
//! and deviation `theta = asin(l·Z')`. The chord is measured against the
//! reference chord `c0`, the unit vector perpendicular to `l` in the plane
//! spanned by `l` and `Y'`; rotation `alpha` is the signed angle of the chord
//! about `l`, positive when the trailing edge moves toward `-Z'` (trailing
//! edge depressed).
//!
//! Tethered-mode traces are resampled per wingbeat with cycles starting at
//! successive elevation maxima (dorsal reversal).

use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use thiserror::Error;

/// Phase samples per normalized cycle.
pub const PHASE_POINTS: usize = 360;
/// Default tilt of the stroke plane relative to the body axis, deg.
pub const DEFAULT_TILT_DEG: f64 = 60.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum WingError {
    #[error("markers are collinear or coincident")]
    Collinear,
    #[error("leading edge is parallel to Y'; rotation angle undefined")]
    EdgeAlongY,
    #[error("stroke frame axes are not orthonormal and right-handed")]
    BadFrame,
    #[error("need at least two elevation maxima, found {0}")]
    InsufficientCycles(usize),
    #[error("series lengths differ: {0} poses vs {1} timestamps")]
    LengthMismatch(usize, usize),
    #[error("timestamps must be strictly increasing")]
    NonMonotoneTime,
    #[error("marker file: {0}")]
    Csv(String),
}

/// Wing stroke-plane frame, axes given in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeFrame {
    pub origin: Vec3,
    pub x: Vec3,
    pub y: Vec3,
    pub z: Vec3,
}

impl StrokeFrame {
    pub fn new(origin: Vec3, x: Vec3, y: Vec3, z: Vec3) -> Result<Self, WingError> {
        let unit = |v: Vec3| (v.norm() - 1.0).abs() < 1e-9;
        let ortho = x.dot(y).abs() < 1e-9 && y.dot(z).abs() < 1e-9 && x.dot(z).abs() < 1e-9;
        if !(unit(x) && unit(y) && unit(z) && ortho && (x.cross(y) - z).norm() < 1e-9) {
            return Err(WingError::BadFrame);
        }
        Ok(Self { origin, x, y, z })
    }

    /// Right-wing stroke frame for a body with longitudinal axis `forward`
    /// and dorsal direction `up`: `X'` points to the right, `Y'` is the body
    /// axis tilted by `tilt_deg` toward dorsal, `Z' = X' × Y'`. Left-wing
    /// markers are mirrored through the body's sagittal plane first.
    pub fn from_body(origin: Vec3, forward: Vec3, up: Vec3, tilt_deg: f64) -> Result<Self, WingError> {
        let f = forward.normalized().ok_or(WingError::BadFrame)?;
        let x = f.cross(up).normalized().ok_or(WingError::BadFrame)?;
        let dorsal = x.cross(f);
        let (s, c) = tilt_deg.to_radians().sin_cos();
        let y = f * c + dorsal * s;
        Self::new(origin, x, y, x.cross(y))
    }

    fn local(&self, v: Vec3) -> Vec3 {
        Vec3::new(v.dot(self.x), v.dot(self.y), v.dot(self.z))
    }

    fn world(&self, v: Vec3) -> Vec3 {
        self.x * v.x + self.y * v.y + self.z * v.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WingPose {
    /// Elevation, deg.
    pub phi: f64,
    /// Deviation, deg.
    pub theta: f64,
    /// Rotation, deg.
    pub alpha: f64,
}

impl WingPose {
    pub const fn new(phi: f64, theta: f64, alpha: f64) -> Self {
        Self { phi, theta, alpha }
    }
}

/// Reference chord for a leading edge given in frame coordinates.
fn reference_chord(l: Vec3) -> Result<Vec3, WingError> {
    (Vec3::Y - l * l.y).normalized().filter(|c| c.is_finite()).ok_or(WingError::EdgeAlongY)
}

/// Angles from three wing markers: `m1 → m2` along the leading edge, `m3`
/// on the trailing side.
pub fn wing_pose_from_markers(m1: Vec3, m2: Vec3, m3: Vec3, frame: &StrokeFrame) -> Result<WingPose, WingError> {
    let edge = m2 - m1;
    let off = m3 - m1;
    let scale = edge.norm() * off.norm();
    if !(scale > 0.0) || edge.cross(off).norm() <= EPS * scale {
        return Err(WingError::Collinear);
    }
    let l = frame.local(edge).normalized().ok_or(WingError::Collinear)?;
    let chord = frame.local(off);
    let c = (chord - l * chord.dot(l)).normalized().ok_or(WingError::Collinear)?;
    let c0 = reference_chord(l)?;
    let n = l.cross(c0);
    Ok(WingPose {
        phi: l.y.atan2(l.x).to_degrees(),
        theta: l.z.clamp(-1.0, 1.0).asin().to_degrees(),
        alpha: (-c.dot(n)).atan2(c.dot(c0)).to_degrees(),
    })
}

/// Marker positions realizing `pose` for a wing of the given span and chord
/// (m): inverse of [`wing_pose_from_markers`].
pub fn markers_from_pose(pose: WingPose, frame: &StrokeFrame, span: f64, chord: f64) -> Result<[Vec3; 3], WingError> {
    let (sp, cp) = pose.phi.to_radians().sin_cos();
    let (st, ct) = pose.theta.to_radians().sin_cos();
    let (sa, ca) = pose.alpha.to_radians().sin_cos();
    let l = Vec3::new(ct * cp, ct * sp, st);
    let c0 = reference_chord(l)?;
    let c = c0 * ca - l.cross(c0) * sa;
    let m1 = frame.origin;
    let m2 = m1 + frame.world(l) * span;
    let m3 = m1 + frame.world(l * (0.5 * span) + c * chord);
    Ok([m1, m2, m3])
}

/// One wingbeat resampled onto a uniform phase grid (`i` degrees at index `i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub samples: Vec<WingPose>,
    pub start_ms: f64,
    pub period_ms: f64,
}

impl CycleTrace {
    pub fn phase_deg(&self, i: usize) -> f64 {
        i as f64 * 360.0 / self.samples.len() as f64
    }

    /// Pose at an arbitrary phase, linearly interpolated and periodic.
    pub fn at_phase(&self, phase_deg: f64) -> WingPose {
        let n = self.samples.len();
        let x = phase_deg.rem_euclid(360.0) * n as f64 / 360.0;
        let i = (x.floor() as usize) % n;
        let f = x - x.floor();
        let (a, b) = (self.samples[i], self.samples[(i + 1) % n]);
        WingPose::new(a.phi + (b.phi - a.phi) * f, a.theta + (b.theta - a.theta) * f, a.alpha + (b.alpha - a.alpha) * f)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phase_deg", "phi", "theta", "alpha"])?;
        for (i, p) in self.samples.iter().enumerate() {
            w.write_record([self.phase_deg(i), p.phi, p.theta, p.alpha].iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sub-sample location (fractional index) and value of the elevation maxima.
fn elevation_maxima(phi: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..phi.len().saturating_sub(1) {
        let (a, b, c) = (phi[i - 1], phi[i], phi[i + 1]);
        if b > a && b >= c {
            let denom = a - 2.0 * b + c;
            let shift = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            out.push(i as f64 + shift);
        }
    }
    out
}

fn time_at(t: &[f64], x: f64) -> f64 {
    let i = (x.floor() as usize).min(t.len() - 2);
    t[i] + (t[i + 1] - t[i]) * (x - i as f64)
}

fn pose_at_time(poses: &[WingPose], t: &[f64], time: f64) -> WingPose {
    let j = t.partition_point(|&s| s <= time).clamp(1, t.len() - 1);
    let f = (time - t[j - 1]) / (t[j] - t[j - 1]);
    let (a, b) = (poses[j - 1], poses[j]);
    WingPose::new(a.phi + (b.phi - a.phi) * f, a.theta + (b.theta - a.theta) * f, a.alpha + (b.alpha - a.alpha) * f)
}

/// Splits a pose series at successive elevation maxima and resamples each
/// complete cycle onto [`PHASE_POINTS`] phase samples.
pub fn normalize_cycles(poses: &[WingPose], t_ms: &[f64]) -> Result<Vec<CycleTrace>, WingError> {
    if poses.len() != t_ms.len() {
        return Err(WingError::LengthMismatch(poses.len(), t_ms.len()));
    }
    if t_ms.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(WingError::NonMonotoneTime);
    }
    let phi: Vec<f64> = poses.iter().map(|p| p.phi).collect();
    let maxima = elevation_maxima(&phi);
    if maxima.len() < 2 {
        return Err(WingError::InsufficientCycles(maxima.len()));
    }
    Ok(maxima
        .windows(2)
        .map(|w| {
            let (t0, t1) = (time_at(t_ms, w[0]), time_at(t_ms, w[1]));
            let period = t1 - t0;
            let samples = (0..PHASE_POINTS)
                .map(|k| pose_at_time(poses, t_ms, t0 + period * k as f64 / PHASE_POINTS as f64))
                .collect();
            CycleTrace { samples, start_ms: t0, period_ms: period }
        })
        .collect())
}

/// Phase-wise mean of several cycles.
pub fn mean_trace(traces: &[CycleTrace]) -> Option<CycleTrace> {
    let first = traces.first()?;
    let n = traces.len() as f64;
    let mut samples = vec![WingPose::default(); first.samples.len()];
    for tr in traces {
        if tr.samples.len() != samples.len() {
            return None;
        }
        for (acc, p) in samples.iter_mut().zip(&tr.samples) {
            acc.phi += p.phi / n;
            acc.theta += p.theta / n;
            acc.alpha += p.alpha / n;
        }
    }
    let period_ms = traces.iter().map(|t| t.period_ms).sum::<f64>() / n;
    Some(CycleTrace { samples, start_ms: first.start_ms, period_ms })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Baseline,
    Stimulated,
}

/// Phase window with raised-cosine edges inside its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseWindow {
    pub start_deg: f64,
    pub end_deg: f64,
}

impl PhaseWindow {
    /// Weight in [0, 1]: 0 outside, 1 on the plateau, cosine ramps of width
    /// `taper_deg` at both ends.
    pub fn weight(&self, phase_deg: f64, taper_deg: f64) -> f64 {
        let p = phase_deg.rem_euclid(360.0);
        if p < self.start_deg || p > self.end_deg {
            return 0.0;
        }
        let ramp = |d: f64| if d >= taper_deg { 1.0 } else { 0.5 - 0.5 * (PI * d / taper_deg).cos() };
        ramp(p - self.start_deg).min(ramp(self.end_deg - p))
    }
}

/// Baseline wingbeat shape and stimulation modulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WingTemplate {
    pub phi_amp_deg: f64,
    pub theta_amp_deg: f64,
    pub alpha_amp_deg: f64,
    /// Sharpness of the half-stroke rotation plateaus.
    pub alpha_sharpness: f64,
    pub alpha_bump_deg: f64,
    pub alpha_windows: Vec<PhaseWindow>,
    pub phi_shift_deg: f64,
    pub phi_windows: Vec<PhaseWindow>,
    pub taper_deg: f64,
}

impl Default for WingTemplate {
    fn default() -> Self {
        Self {
            phi_amp_deg: 60.0,
            theta_amp_deg: 5.0,
            alpha_amp_deg: 45.0,
            alpha_sharpness: 3.0,
            alpha_bump_deg: 10.0,
            alpha_windows: vec![
                PhaseWindow { start_deg: 80.0, end_deg: 180.0 },
                PhaseWindow { start_deg: 220.0, end_deg: 300.0 },
            ],
            phi_shift_deg: -10.0,
            phi_windows: vec![PhaseWindow { start_deg: 80.0, end_deg: 180.0 }],
            taper_deg: 10.0,
        }
    }
}

impl WingTemplate {
    pub fn pose(&self, phase_deg: f64, condition: Condition) -> WingPose {
        let x = phase_deg.to_radians();
        let k = self.alpha_sharpness;
        let mut pose = WingPose::new(
            self.phi_amp_deg * x.cos(),
            self.theta_amp_deg * (2.0 * x).sin(),
            self.alpha_amp_deg * (k * x.sin()).tanh() / k.tanh(),
        );
        if condition == Condition::Stimulated {
            let bump = |ws: &[PhaseWindow]| ws.iter().map(|w| w.weight(phase_deg, self.taper_deg)).fold(0.0, f64::max);
            pose.alpha += self.alpha_bump_deg * bump(&self.alpha_windows);
            pose.phi += self.phi_shift_deg * bump(&self.phi_windows);
        }
        pose
    }
}

/// One synthetic tethered wingbeat on the phase grid.
pub fn synthesize_trace(condition: Condition, template: &WingTemplate, period_ms: f64) -> CycleTrace {
    let samples = (0..PHASE_POINTS)
        .map(|i| template.pose(i as f64 * 360.0 / PHASE_POINTS as f64, condition))
        .collect();
    CycleTrace { samples, start_ms: 0.0, period_ms }
}

/// One row of a marker log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerRow {
    pub t_ms: f64,
    pub markers: [Vec3; 3],
}

/// Reads `t_ms, m1x, m1y, m1z, m2x, …, m3z`.
pub fn read_marker_csv<R: Read>(input: R) -> Result<Vec<MarkerRow>, WingError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| WingError::Csv(e.to_string()))?;
        if rec.len() != 10 {
            return Err(WingError::Csv(format!("expected 10 columns, got {}", rec.len())));
        }
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| WingError::Csv(e.to_string()))?;
        let m = |k: usize| Vec3::new(v[1 + 3 * k], v[2 + 3 * k], v[3 + 3 * k]);
        out.push(MarkerRow { t_ms: v[0], markers: [m(0), m(1), m(2)] });
    }
    Ok(out)
}

pub fn write_marker_csv<W: Write>(rows: &[MarkerRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_ms", "m1x", "m1y", "m1z", "m2x", "m2y", "m2z", "m3x", "m3y", "m3z"])?;
    for r in rows {
        let mut row = vec![r.t_ms];
        for m in r.markers {
            row.extend(m.to_array());
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Poses and timestamps for a whole marker log.
pub fn poses_from_markers(rows: &[MarkerRow], frame: &StrokeFrame) -> Result<(Vec<WingPose>, Vec<f64>), WingError> {
    let mut poses = Vec::with_capacity(rows.len());
    for r in rows {
        poses.push(wing_pose_from_markers(r.markers[0], r.markers[1], r.markers[2], frame)?);
    }
    Ok((poses, rows.iter().map(|r| r.t_ms).collect()))
}
