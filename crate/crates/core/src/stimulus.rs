//! Stimulation commands, pulse trains and first-order muscle activation.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

/// Default rise time constant of muscle activation during a pulse, ms.
pub const DEFAULT_TAU_ACT_MS: f64 = 10.0;
/// Default decay time constant of muscle activation between pulses, ms.
pub const DEFAULT_TAU_DECAY_MS: f64 = 40.0;

#[derive(Debug, Error, PartialEq)]
pub enum StimError {
    #[error("frequency {0} Hz outside [1, 1000]")]
    Frequency(f64),
    #[error("duration {0} ms outside [0, 10000]")]
    Duration(f64),
    #[error("amplitude {0} mV outside [0, 5000]")]
    Amplitude(f64),
    #[error("pulse width {0} ms must be positive")]
    PulseWidth(f64),
    #[error("pulses overlap: width {width_ms} ms at {frequency_hz} Hz exceeds 100% duty")]
    Overlap { width_ms: f64, frequency_hz: f64 },
    #[error("unknown stimulation target {0:?}")]
    UnknownTarget(String),
}

/// Which subalar muscle(s) a command drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Left,
    Right,
    Both,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Left, Target::Right, Target::Both];

    /// Wire code used by the link protocol.
    pub fn code(self) -> u8 {
        match self {
            Target::Left => 0,
            Target::Right => 1,
            Target::Both => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, StimError> {
        match code {
            0 => Ok(Target::Left),
            1 => Ok(Target::Right),
            2 => Ok(Target::Both),
            other => Err(StimError::UnknownTarget(other.to_string())),
        }
    }

    pub fn drives_left(self) -> bool {
        matches!(self, Target::Left | Target::Both)
    }

    pub fn drives_right(self) -> bool {
        matches!(self, Target::Right | Target::Both)
    }

    /// +1 for left, −1 for right, 0 for both: multiplies the side-dependent
    /// channels (yaw, roll, lateral acceleration).
    pub fn side_sign(self) -> f64 {
        match self {
            Target::Left => 1.0,
            Target::Right => -1.0,
            Target::Both => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Left => "left",
            Target::Right => "right",
            Target::Both => "both",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = StimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Target::Left),
            "right" | "r" => Ok(Target::Right),
            "both" | "b" => Ok(Target::Both),
            _ => Err(StimError::UnknownTarget(s.to_string())),
        }
    }
}

/// A stimulation request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimCommand {
    pub target: Target,
    pub frequency_hz: f64,
    pub duration_ms: f64,
    pub amplitude_mv: f64,
    pub pulse_width_ms: f64,
}

impl StimCommand {
    /// 500 ms train of 3 V, 3 ms pulses.
    pub fn standard(target: Target, frequency_hz: f64) -> Self {
        Self {
            target,
            frequency_hz,
            duration_ms: 500.0,
            amplitude_mv: 3000.0,
            pulse_width_ms: 3.0,
        }
    }

    pub fn validate(&self) -> Result<(), StimError> {
        if !(1.0..=1000.0).contains(&self.frequency_hz) {
            return Err(StimError::Frequency(self.frequency_hz));
        }
        if !(0.0..=10_000.0).contains(&self.duration_ms) {
            return Err(StimError::Duration(self.duration_ms));
        }
        if !(0.0..=5000.0).contains(&self.amplitude_mv) {
            return Err(StimError::Amplitude(self.amplitude_mv));
        }
        if !(self.pulse_width_ms > 0.0 && self.pulse_width_ms.is_finite()) {
            return Err(StimError::PulseWidth(self.pulse_width_ms));
        }
        if self.pulse_width_ms * self.frequency_hz > 1000.0 {
            return Err(StimError::Overlap {
                width_ms: self.pulse_width_ms,
                frequency_hz: self.frequency_hz,
            });
        }
        Ok(())
    }

    pub fn period_ms(&self) -> f64 {
        1000.0 / self.frequency_hz
    }
}

/// Realized pulse schedule of a command, times relative to train start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    pub onsets_ms: Vec<f64>,
    pub pulse_width_ms: f64,
    pub amplitude_mv: f64,
    pub duration_ms: f64,
}

pub fn build_pulse_train(cmd: &StimCommand) -> Result<PulseTrain, StimError> {
    cmd.validate()?;
    let period = cmd.period_ms();
    let onsets_ms = (0u64..)
        .map(|k| k as f64 * period)
        .take_while(|&t| t < cmd.duration_ms)
        .collect();
    Ok(PulseTrain {
        onsets_ms,
        pulse_width_ms: cmd.pulse_width_ms,
        amplitude_mv: cmd.amplitude_mv,
        duration_ms: cmd.duration_ms,
    })
}

impl PulseTrain {
    pub fn empty() -> Self {
        Self { onsets_ms: Vec::new(), pulse_width_ms: 1.0, amplitude_mv: 0.0, duration_ms: 0.0 }
    }

    /// Zero-amplitude trains are carried for bookkeeping but never excite the muscle.
    pub fn excites(&self) -> bool {
        self.amplitude_mv > 0.0 && !self.onsets_ms.is_empty()
    }

    /// Time the last pulse ends.
    pub fn end_ms(&self) -> f64 {
        self.onsets_ms.last().map_or(0.0, |&t| t + self.pulse_width_ms)
    }

    /// Whether a pulse is on at time `t` (ms, train-relative).
    pub fn pulse_active(&self, t: f64) -> bool {
        self.pulse_containing(t).is_some()
    }

    fn pulse_containing(&self, t: f64) -> Option<usize> {
        if !self.excites() {
            return None;
        }
        let idx = self.onsets_ms.partition_point(|&o| o <= t);
        if idx == 0 {
            return None;
        }
        let k = idx - 1;
        (t < self.onsets_ms[k] + self.pulse_width_ms).then_some(k)
    }

    /// End of the constant-input segment that starts at `t`.
    fn segment_end(&self, t: f64) -> f64 {
        if let Some(k) = self.pulse_containing(t) {
            return self.onsets_ms[k] + self.pulse_width_ms;
        }
        if !self.excites() {
            return f64::INFINITY;
        }
        let idx = self.onsets_ms.partition_point(|&o| o <= t);
        self.onsets_ms.get(idx).copied().unwrap_or(f64::INFINITY)
    }
}

/// Activation level of one muscle, in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivationState {
    pub level: f64,
}

/// Advances activation from `t` to `t + dt` (ms, train-relative).
///
/// During a pulse the level relaxes toward 1 with `tau_act_ms`, otherwise it
/// decays toward 0 with `tau_decay_ms`. Each constant-input piece is solved in
/// closed form, so pulse edges falling inside a step are handled exactly.
pub fn activation_step(
    a: ActivationState,
    train: &PulseTrain,
    t: f64,
    dt: f64,
    tau_act_ms: f64,
    tau_decay_ms: f64,
) -> ActivationState {
    let mut level = a.level.clamp(0.0, 1.0);
    let end = t + dt;
    let mut s = t;
    while s < end {
        let seg_end = train.segment_end(s).min(end);
        let h = seg_end - s;
        if train.pulse_active(s) {
            level = 1.0 - (1.0 - level) * (-h / tau_act_ms).exp();
        } else {
            level *= (-h / tau_decay_ms).exp();
        }
        if seg_end <= s {
            // guards against a zero-length segment from float ties
            break;
        }
        s = seg_end;
    }
    ActivationState { level: level.clamp(0.0, 1.0) }
}

/// Cycle-averaged activation of the periodic steady state reached under an
/// indefinitely long train, from the closed-form piecewise-exponential orbit.
pub fn steady_mean_activation(
    frequency_hz: f64,
    pulse_width_ms: f64,
    tau_act_ms: f64,
    tau_decay_ms: f64,
) -> f64 {
    let period = 1000.0 / frequency_hz;
    if pulse_width_ms >= period {
        return 1.0;
    }
    let on = pulse_width_ms;
    let off = period - on;
    let ea = (-on / tau_act_ms).exp();
    let ed = (-off / tau_decay_ms).exp();
    let a0 = ed * (1.0 - ea) / (1.0 - ea * ed);
    let a1 = 1.0 - (1.0 - a0) * ea;
    let on_area = on - (1.0 - a0) * tau_act_ms * (1.0 - ea);
    let off_area = a1 * tau_decay_ms * (1.0 - ed);
    (on_area + off_area) / period
}

/// Linear frequency-to-drive map between two anchor frequencies, clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveMap {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
}

impl Default for DriveMap {
    fn default() -> Self {
        Self { f_lo_hz: 40.0, f_hi_hz: 100.0 }
    }
}

impl DriveMap {
    pub fn normalized_drive(&self, frequency_hz: f64) -> Result<f64, StimError> {
        if !(1.0..=1000.0).contains(&frequency_hz) {
            return Err(StimError::Frequency(frequency_hz));
        }
        Ok(((frequency_hz - self.f_lo_hz) / (self.f_hi_hz - self.f_lo_hz)).clamp(0.0, 1.0))
    }
}

/// Drive under the default 40–100 Hz map.
pub fn normalized_drive(frequency_hz: f64) -> Result<f64, StimError> {
    DriveMap::default().normalized_drive(frequency_hz)
}

/// One row of the stimulus schedule export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub t_ms: f64,
    pub left_level: f64,
    pub right_level: f64,
    pub pulse_active: u8,
}

/// Samples the activation of both muscles under `cmd` on a uniform grid.
pub fn activation_schedule(
    cmd: &StimCommand,
    dt_ms: f64,
    total_ms: f64,
    tau_act_ms: f64,
    tau_decay_ms: f64,
) -> Result<Vec<ScheduleRow>, StimError> {
    let train = build_pulse_train(cmd)?;
    let idle = PulseTrain::empty();
    let mut left = ActivationState::default();
    let mut right = ActivationState::default();
    let steps = (total_ms / dt_ms).round() as usize;
    let mut rows = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = i as f64 * dt_ms;
        rows.push(ScheduleRow {
            t_ms: t,
            left_level: left.level,
            right_level: right.level,
            pulse_active: u8::from(train.pulse_active(t)),
        });
        let lt = if cmd.target.drives_left() { &train } else { &idle };
        let rt = if cmd.target.drives_right() { &train } else { &idle };
        left = activation_step(left, lt, t, dt_ms, tau_act_ms, tau_decay_ms);
        right = activation_step(right, rt, t, dt_ms, tau_act_ms, tau_decay_ms);
    }
    Ok(rows)
}

/// Writes `t_ms, left_level, right_level, pulse_active` CSV.
pub fn write_schedule_csv<W: Write>(rows: &[ScheduleRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Explicit Euler on a fine grid, pulse state read pointwise.
    fn fine_ode_mean(freq: f64, width: f64, ta: f64, td: f64, dt: f64) -> f64 {
        let period = 1000.0 / freq;
        let mut a = 0.0;
        let mut t = 0.0;
        let settle = 2000.0;
        let mut acc = 0.0;
        let mut n = 0usize;
        while t < settle + 10.0 * period {
            let on = (t % period) < width;
            let da = if on { (1.0 - a) / ta } else { -a / td };
            if t >= settle {
                acc += a;
                n += 1;
            }
            a += da * dt;
            t += dt;
        }
        acc / n as f64
    }

    #[test]
    fn fifty_hertz_train_has_25_pulses() {
        let cmd = StimCommand::standard(Target::Both, 50.0);
        let t = build_pulse_train(&cmd).unwrap();
        let expected: Vec<f64> = (0..25).map(|k| k as f64 * 20.0).collect();
        assert_eq!(t.onsets_ms, expected);
    }

    #[test]
    fn hundred_hertz_train_spacing() {
        let t = build_pulse_train(&StimCommand::standard(Target::Left, 100.0)).unwrap();
        assert_eq!(t.onsets_ms.len(), 50);
        for w in t.onsets_ms.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_duration_is_empty() {
        let mut cmd = StimCommand::standard(Target::Both, 50.0);
        cmd.duration_ms = 0.0;
        assert!(build_pulse_train(&cmd).unwrap().onsets_ms.is_empty());
    }

    #[test]
    fn overlapping_pulses_rejected() {
        let mut cmd = StimCommand::standard(Target::Both, 400.0);
        cmd.pulse_width_ms = 3.0;
        assert!(matches!(build_pulse_train(&cmd), Err(StimError::Overlap { .. })));
    }

    #[test]
    fn invalid_fields_rejected() {
        let mut cmd = StimCommand::standard(Target::Both, 0.5);
        assert_eq!(cmd.validate(), Err(StimError::Frequency(0.5)));
        cmd.frequency_hz = 50.0;
        cmd.amplitude_mv = 6000.0;
        assert_eq!(cmd.validate(), Err(StimError::Amplitude(6000.0)));
        cmd.amplitude_mv = 3000.0;
        cmd.pulse_width_ms = 0.0;
        assert_eq!(cmd.validate(), Err(StimError::PulseWidth(0.0)));
    }

    #[test]
    fn no_input_keeps_zero() {
        let train = build_pulse_train(&StimCommand::standard(Target::Both, 50.0)).unwrap();
        let a = activation_step(ActivationState::default(), &train, -10.0, 1.0, 10.0, 40.0);
        assert_eq!(a.level, 0.0);
    }

    #[test]
    fn decays_by_e_over_tau_after_train() {
        let train = build_pulse_train(&StimCommand::standard(Target::Both, 50.0)).unwrap();
        let mut a = ActivationState { level: 0.8 };
        let start = train.end_ms() + 5.0;
        for i in 0..40 {
            a = activation_step(a, &train, start + i as f64, 1.0, 10.0, 40.0);
        }
        assert_abs_diff_eq!(a.level, 0.8 / std::f64::consts::E, epsilon = 1e-12);
    }

    #[test]
    fn steady_level_matches_fine_ode_oracle() {
        let oracle = fine_ode_mean(100.0, 3.0, 10.0, 40.0, 0.01);
        let closed = steady_mean_activation(100.0, 3.0, 10.0, 40.0);
        assert!((closed - oracle).abs() / oracle < 0.01, "{closed} vs {oracle}");
        // coarse 1 ms stepping of the activation model itself
        let mut cmd = StimCommand::standard(Target::Both, 100.0);
        cmd.duration_ms = 3000.0;
        let train = build_pulse_train(&cmd).unwrap();
        let mut a = ActivationState::default();
        let (mut acc, mut n) = (0.0, 0);
        for i in 0..2500 {
            let t = i as f64;
            if t >= 2000.0 {
                acc += a.level;
                n += 1;
            }
            a = activation_step(a, &train, t, 1.0, 10.0, 40.0);
        }
        let stepped = acc / n as f64;
        assert!((stepped - oracle).abs() / oracle < 0.01, "{stepped} vs {oracle}");
    }

    #[test]
    fn steady_level_monotone_in_frequency() {
        let mut prev = 0.0;
        for f in (40..=100).step_by(5) {
            let a = steady_mean_activation(f as f64, 3.0, 10.0, 40.0);
            assert!(a > prev);
            prev = a;
        }
    }

    #[test]
    fn drive_anchors() {
        let m = DriveMap { f_lo_hz: 63.0, f_hi_hz: 100.0 };
        assert_eq!(m.normalized_drive(100.0).unwrap(), 1.0);
        assert_eq!(m.normalized_drive(63.0).unwrap(), 0.0);
        assert_abs_diff_eq!(m.normalized_drive(81.5).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(m.normalized_drive(150.0).unwrap(), 1.0);
        assert!(m.normalized_drive(2000.0).is_err());
    }

    #[test]
    fn schedule_csv_header() {
        let rows = activation_schedule(&StimCommand::standard(Target::Left, 50.0), 1.0, 30.0, 10.0, 40.0)
            .unwrap();
        let mut buf = Vec::new();
        write_schedule_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_ms,left_level,right_level,pulse_active\n"));
        assert!(rows.iter().all(|r| r.right_level == 0.0));
        assert!(rows[10].left_level > 0.0);
    }

    proptest! {
        #[test]
        fn pulse_count_matches_enumeration(freq in 1.0f64..1000.0, dur in 0.0f64..10_000.0) {
            let cmd = StimCommand { target: Target::Both, frequency_hz: freq, duration_ms: dur,
                amplitude_mv: 3000.0, pulse_width_ms: 0.5 };
            let train = build_pulse_train(&cmd).unwrap();
            let mut count = 0usize;
            while (count as f64) * (1000.0 / freq) < dur { count += 1; }
            prop_assert_eq!(train.onsets_ms.len(), count);
            prop_assert!(train.onsets_ms.windows(2).all(|w| w[1] > w[0]));
        }

        #[test]
        fn activation_stays_in_unit_interval(
            freq in 1.0f64..300.0, width in 0.1f64..3.0, a0 in 0.0f64..1.0,
            dt in 0.01f64..1.0, ta in 0.5f64..50.0, td in 0.5f64..200.0,
        ) {
            let cmd = StimCommand { target: Target::Both, frequency_hz: freq, duration_ms: 400.0,
                amplitude_mv: 3000.0, pulse_width_ms: width };
            prop_assume!(cmd.validate().is_ok());
            let train = build_pulse_train(&cmd).unwrap();
            let mut a = ActivationState { level: a0 };
            let mut t = -5.0;
            while t < 450.0 {
                a = activation_step(a, &train, t, dt, ta, td);
                prop_assert!((0.0..=1.0).contains(&a.level));
                t += dt;
            }
        }
    }
}
