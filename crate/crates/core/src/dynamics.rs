//! Stroke-averaged 6-DOF free-flight model.
//!
//! Attitude is carried as Euler angles and relaxes exponentially toward a
//! target set by the trim and the activation-weighted induced angles. The
//! translational acceleration is the activation-weighted induced
//! acceleration along the flight heading, plus a linear drag that restores
//! cruise velocity, plus an optional external disturbance.
//!
//! Flight heading (the direction the beetle is trying to fly) is separate
//! from body yaw: stimulation yaws the body but leaves the heading alone.
//! Without stimulation the body yaw relaxes back onto the heading.

use crate::dose::{noisy_response, DoseAnchorTable, DoseError, InducedResponse, NoiseModel};
use crate::geometry::{
    euler_rates_to_body, euler_to_quat, wrap_deg, EulerBody, UnitQuat, Vec3, ARENA_SIZE_M,
};
use crate::sensors::{ImuSample, MocapSample};
use crate::stimulus::{
    activation_step, build_pulse_train, steady_mean_activation, ActivationState, PulseTrain,
    StimCommand, StimError, Target, DEFAULT_TAU_ACT_MS, DEFAULT_TAU_DECAY_MS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trim: {0}")]
    Trim(&'static str),
    #[error("invalid stimulus: {0}")]
    Stim(#[from] StimError),
    #[error("dose model: {0}")]
    Dose(#[from] DoseError),
    #[error("time step {0} ms outside (0, 2]")]
    Step(f64),
    #[error("non-finite state at t = {t_ms} ms: {what}")]
    NonFinite { t_ms: f64, what: &'static str },
    #[error("trial record: {0}")]
    Record(String),
}

/// Payload up to this mass leaves flight speed unchanged, g.
pub const PAYLOAD_FREE_G: f64 = 1.23;
/// Reference excess payload for the speed penalty, g.
pub const PAYLOAD_HEAVY_G: f64 = 3.50;

const DRIVE_SUBSTEPS: usize = 8;

/// Steady flight configuration and model time constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimConfig {
    /// Unloaded cruise speed, m/s.
    pub cruise_speed: f64,
    pub payload_mass_g: f64,
    /// Fractional speed loss at [`PAYLOAD_HEAVY_G`]; linear in excess mass.
    pub payload_penalty: f64,
    pub trim_pitch_deg: f64,
    pub tau_attitude_ms: f64,
    pub tau_recover_ms: f64,
    pub tau_act_ms: f64,
    pub tau_decay_ms: f64,
    /// Time constant of each of the two force-lag stages, ms.
    pub tau_force_ms: f64,
    /// Linear drag toward cruise velocity, 1/s.
    pub drag_per_s: f64,
    /// Largest commanded pitch excursion, deg.
    pub pitch_limit_deg: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            cruise_speed: 2.0,
            payload_mass_g: PAYLOAD_FREE_G,
            payload_penalty: 0.15,
            trim_pitch_deg: 0.0,
            tau_attitude_ms: 80.0,
            tau_recover_ms: 150.0,
            tau_act_ms: DEFAULT_TAU_ACT_MS,
            tau_decay_ms: DEFAULT_TAU_DECAY_MS,
            tau_force_ms: 10.0,
            drag_per_s: 0.2,
            pitch_limit_deg: 80.0,
        }
    }
}

impl TrimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            self.cruise_speed,
            self.tau_attitude_ms,
            self.tau_recover_ms,
            self.tau_act_ms,
            self.tau_decay_ms,
            self.tau_force_ms,
        ];
        if !positive.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(SimError::Trim("speeds and time constants must be positive"));
        }
        if !(self.payload_mass_g >= 0.0) {
            return Err(SimError::Trim("payload mass must be non-negative"));
        }
        if !(self.drag_per_s >= 0.0) || !(0.0..=1.0).contains(&self.payload_penalty) {
            return Err(SimError::Trim("drag and payload penalty out of range"));
        }
        if !(self.trim_pitch_deg.abs() < self.pitch_limit_deg && self.pitch_limit_deg < 90.0) {
            return Err(SimError::Trim("pitch limit must exceed trim and stay below 90 deg"));
        }
        Ok(())
    }
}

/// Cruise speed after the payload penalty.
pub fn payload_speed(trim: &TrimConfig) -> f64 {
    let excess = (trim.payload_mass_g - PAYLOAD_FREE_G).max(0.0);
    let loss = trim.payload_penalty * excess / (PAYLOAD_HEAVY_G - PAYLOAD_FREE_G);
    trim.cruise_speed * (1.0 - loss).max(0.0)
}

/// Axis-aligned flight volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub min: Vec3,
    pub max: Vec3,
}

impl Default for Arena {
    fn default() -> Self {
        Self { min: Vec3::ZERO, max: Vec3::from_array(ARENA_SIZE_M) }
    }
}

impl Arena {
    pub fn contains(&self, p: Vec3) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeetleState {
    pub t_ms: f64,
    /// World frame, m.
    pub position: Vec3,
    /// World frame, m/s.
    pub velocity: Vec3,
    /// Body → level frame.
    pub attitude: UnitQuat,
    /// Body frame (p, q, r), deg/s.
    pub body_rates: Vec3,
    pub activation_left: ActivationState,
    pub activation_right: ActivationState,
}

/// Initial conditions of a flight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaunchState {
    pub position: Vec3,
    /// Flight heading, deg, clockwise from east seen from above.
    pub heading_deg: f64,
}

impl Default for LaunchState {
    fn default() -> Self {
        Self { position: Vec3::new(2.0, 4.0, 2.0), heading_deg: 0.0 }
    }
}

/// Ornstein–Uhlenbeck wander of the flight heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingWander {
    /// Stationary standard deviation, deg.
    pub sigma_deg: f64,
    /// Correlation time, ms.
    pub tau_ms: f64,
}

impl HeadingWander {
    pub const OFF: HeadingWander = HeadingWander { sigma_deg: 0.0, tau_ms: 1000.0 };
}

impl Default for HeadingWander {
    fn default() -> Self {
        Self { sigma_deg: 5.0, tau_ms: 1000.0 }
    }
}

/// Trial-to-trial variability: noise on the induced response and heading wander.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialNoise {
    pub response: NoiseModel,
    pub heading: HeadingWander,
}

impl TrialNoise {
    pub const OFF: TrialNoise = TrialNoise { response: NoiseModel::OFF, heading: HeadingWander::OFF };
}

impl Default for TrialNoise {
    fn default() -> Self {
        Self { response: NoiseModel::default(), heading: HeadingWander::default() }
    }
}

#[derive(Debug, Clone)]
struct ActiveTrain {
    command: StimCommand,
    train: PulseTrain,
    start_ms: f64,
    response: InducedResponse,
    steady_activation: f64,
}

/// One beetle in flight. Single-threaded; the owner is the only mutator.
#[derive(Debug, Clone)]
pub struct Simulator {
    trim: TrimConfig,
    cruise: f64,
    state: BeetleState,
    euler: EulerBody,
    heading_deg: f64,
    heading_dev_deg: f64,
    lag: [f64; 2],
    weight: f64,
    train: Option<ActiveTrain>,
    disturbance: Vec3,
    wander: HeadingWander,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(trim: TrimConfig, launch: LaunchState, wander: HeadingWander, seed: u64) -> Result<Self, SimError> {
        trim.validate()?;
        let cruise = payload_speed(&trim);
        let euler = EulerBody::new(wrap_deg(launch.heading_deg), trim.trim_pitch_deg, 0.0);
        let state = BeetleState {
            t_ms: 0.0,
            position: launch.position,
            velocity: heading_vector(launch.heading_deg) * cruise,
            attitude: euler_to_quat(euler),
            body_rates: Vec3::ZERO,
            activation_left: ActivationState::default(),
            activation_right: ActivationState::default(),
        };
        Ok(Self {
            trim,
            cruise,
            state,
            euler,
            heading_deg: launch.heading_deg,
            heading_dev_deg: 0.0,
            lag: [0.0; 2],
            weight: 0.0,
            train: None,
            disturbance: Vec3::ZERO,
            wander,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn state(&self) -> &BeetleState {
        &self.state
    }

    pub fn trim(&self) -> &TrimConfig {
        &self.trim
    }

    pub fn euler(&self) -> EulerBody {
        self.euler
    }

    pub fn heading_deg(&self) -> f64 {
        self.heading_deg
    }

    /// Constant world-frame acceleration added to every step, m/s².
    pub fn set_disturbance(&mut self, a: Vec3) {
        self.disturbance = a;
    }

    /// Whether a train window is open at the current time.
    pub fn stim_on(&self) -> bool {
        self.train
            .as_ref()
            .is_some_and(|a| self.state.t_ms - a.start_ms < a.train.duration_ms)
    }

    pub fn active_command(&self) -> Option<&StimCommand> {
        self.train.as_ref().filter(|_| self.stim_on()).map(|a| &a.command)
    }

    /// Starts `command` now, replacing any train in progress. `response` is
    /// the induced response the train drives toward at full activation.
    pub fn start_train(&mut self, command: StimCommand, response: InducedResponse) -> Result<(), SimError> {
        let train = build_pulse_train(&command)?;
        let steady_activation = steady_mean_activation(
            command.frequency_hz,
            command.pulse_width_ms,
            self.trim.tau_act_ms,
            self.trim.tau_decay_ms,
        );
        self.train = Some(ActiveTrain {
            command,
            train,
            start_ms: self.state.t_ms,
            response,
            steady_activation,
        });
        Ok(())
    }

    /// Normalized drive of the active train: activation over its steady
    /// cycle mean, averaged over the driven sides.
    fn drive_weight(&self, left: f64, right: f64) -> f64 {
        let Some(a) = &self.train else { return 0.0 };
        let t = a.command.target;
        let (mut sum, mut n) = (0.0, 0.0);
        if t.drives_left() {
            sum += left;
            n += 1.0;
        }
        if t.drives_right() {
            sum += right;
            n += 1.0;
        }
        sum / n / a.steady_activation
    }

    /// Advances by `dt_ms` (≤ 2 ms).
    pub fn step(&mut self, dt_ms: f64) -> Result<(), SimError> {
        if !(dt_ms > 0.0 && dt_ms <= 2.0) {
            return Err(SimError::Step(dt_ms));
        }
        let t = self.state.t_ms;
        let dt_s = dt_ms / 1000.0;
        let trim = self.trim;

        // muscle activation, exact over the step
        let idle = PulseTrain::empty();
        let (lt, rt, t_rel) = match &self.train {
            Some(a) => (
                if a.command.target.drives_left() { &a.train } else { &idle },
                if a.command.target.drives_right() { &a.train } else { &idle },
                t - a.start_ms,
            ),
            None => (&idle, &idle, 0.0),
        };
        // drive averaged over the step on a sub-grid (trapezoid)
        let (mut left, mut right) = (self.state.activation_left, self.state.activation_right);
        let h = dt_ms / DRIVE_SUBSTEPS as f64;
        let mut w_prev = self.weight;
        let mut w_sum = 0.0;
        for j in 0..DRIVE_SUBSTEPS {
            let s = t_rel + j as f64 * h;
            left = activation_step(left, lt, s, h, trim.tau_act_ms, trim.tau_decay_ms);
            right = activation_step(right, rt, s, h, trim.tau_act_ms, trim.tau_decay_ms);
            let w_next = self.drive_weight(left.level, right.level);
            w_sum += 0.5 * (w_prev + w_next);
            w_prev = w_next;
        }
        let w_end = w_prev;
        let w = w_sum / DRIVE_SUBSTEPS as f64;
        let stim_on = self.stim_on();
        let response = self.train.as_ref().map_or(InducedResponse::ZERO, |a| a.response);

        // heading wander
        if self.wander.sigma_deg > 0.0 {
            let decay = (-dt_ms / self.wander.tau_ms).exp();
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.heading_dev_deg = self.heading_dev_deg * decay
                + self.wander.sigma_deg * (1.0 - decay * decay).sqrt() * z;
        }
        let heading = self.heading_deg + self.heading_dev_deg;

        // attitude relaxation
        let (target, tau) = if stim_on {
            let pitch = (trim.trim_pitch_deg + w * response.d_pitch)
                .clamp(-trim.pitch_limit_deg, trim.pitch_limit_deg);
            (EulerBody::new(heading + w * response.d_yaw, pitch, w * response.d_roll), trim.tau_attitude_ms)
        } else {
            (EulerBody::new(heading, trim.trim_pitch_deg, 0.0), trim.tau_recover_ms)
        };
        let k = (-dt_ms / tau).exp();
        let old = self.euler;
        let relax = |cur: f64, tgt: f64| tgt + (cur - tgt) * k;
        let yaw_err = wrap_deg(old.yaw - target.yaw);
        let new = EulerBody::new(
            wrap_deg(target.yaw + yaw_err * k),
            relax(old.pitch, target.pitch),
            relax(old.roll, target.roll),
        );
        let rates = EulerBody::new(
            wrap_deg(new.yaw - old.yaw) / dt_s,
            (new.pitch - old.pitch) / dt_s,
            (new.roll - old.roll) / dt_s,
        );
        let mid = EulerBody::new(old.yaw + 0.5 * wrap_deg(new.yaw - old.yaw), 0.5 * (old.pitch + new.pitch), 0.5 * (old.roll + new.roll));

        // two-stage force lag on the drive, exact for the step-averaged input
        let r = dt_ms / trim.tau_force_ms;
        let kf = (-r).exp();
        let (e1, e2) = (self.lag[0] - w, self.lag[1] - w);
        self.lag = [w + e1 * kf, w + (e2 + e1 * r) * kf];
        let u = w + e2 * (1.0 - kf) / r + e1 * (1.0 - kf * (1.0 + r)) / r;

        // translation; position takes the updated velocity
        let hv = heading_vector(heading);
        let l = lateral_vector(heading);
        let induced = hv * response.d_ah + l * response.d_alat + Vec3::Z * response.d_av;
        let forcing = induced * u + self.disturbance;
        let velocity = if trim.drag_per_s > 0.0 {
            // exact relaxation toward the drag-balanced velocity
            let v_inf = hv * self.cruise + forcing * (1.0 / trim.drag_per_s);
            v_inf + (self.state.velocity - v_inf) * (-trim.drag_per_s * dt_s).exp()
        } else {
            self.state.velocity + forcing * dt_s
        };
        let position = self.state.position + velocity * dt_s;

        self.euler = new;
        self.weight = w_end;
        self.state = BeetleState {
            t_ms: t + dt_ms,
            position,
            velocity,
            attitude: euler_to_quat(new),
            body_rates: euler_rates_to_body(mid, rates),
            activation_left: left,
            activation_right: right,
        };
        if !(position.is_finite() && velocity.is_finite()) {
            return Err(SimError::NonFinite { t_ms: t, what: "translation" });
        }
        if !(new.yaw.is_finite() && new.pitch.is_finite() && new.roll.is_finite()) {
            return Err(SimError::NonFinite { t_ms: t, what: "attitude" });
        }
        Ok(())
    }

    /// Ground-truth sample of the current state.
    pub fn sample(&self) -> TruthSample {
        TruthSample {
            t_ms: self.state.t_ms,
            position: self.state.position,
            velocity: self.state.velocity,
            attitude: self.state.attitude,
            act_l: self.state.activation_left.level,
            act_r: self.state.activation_right.level,
            stim_on: self.stim_on(),
        }
    }
}

/// Unit vector of a flight heading (deg clockwise from east) in world axes.
pub fn heading_vector(heading_deg: f64) -> Vec3 {
    let (s, c) = heading_deg.to_radians().sin_cos();
    Vec3::new(c, -s, 0.0)
}

/// Horizontal unit vector 90° to the left of a heading.
pub fn lateral_vector(heading_deg: f64) -> Vec3 {
    let (s, c) = heading_deg.to_radians().sin_cos();
    Vec3::new(s, c, 0.0)
}

/// Stimulation trial timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialProtocol {
    pub pre_ms: f64,
    pub stim_ms: f64,
    pub post_ms: f64,
    pub command: StimCommand,
    pub seed: u64,
}

impl TrialProtocol {
    pub fn new(command: StimCommand, seed: u64) -> Self {
        Self { pre_ms: 150.0, stim_ms: command.duration_ms, post_ms: 350.0, command, seed }
    }

    pub fn total_ms(&self) -> f64 {
        self.pre_ms + self.stim_ms + self.post_ms
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if ![self.pre_ms, self.stim_ms, self.post_ms].iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(SimError::Trim("protocol durations must be non-negative"));
        }
        self.command.validate()?;
        Ok(())
    }
}

/// Ground-truth state at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t_ms: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: UnitQuat,
    pub act_l: f64,
    pub act_r: f64,
    pub stim_on: bool,
}

/// Identification and configuration of a trial; the JSON header of every
/// trial file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub beetle_id: u32,
    pub trial_id: u32,
    pub target: Target,
    pub frequency_hz: f64,
    pub amplitude_mv: f64,
    pub pulse_width_ms: f64,
    pub seed: u64,
    pub stim_onset_ms: f64,
    pub stim_ms: f64,
    pub trim: TrimConfig,
    /// Response drawn for this trial (absent for logs rebuilt from telemetry).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drawn: Option<InducedResponse>,
}

/// One stimulation trial: truth and emulated sensor streams.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub meta: TrialMeta,
    /// 1 kHz ground truth (empty for telemetry-only records).
    pub truth: Vec<TruthSample>,
    pub imu: Vec<ImuSample>,
    pub mocap: Vec<MocapSample>,
    /// The beetle left the arena; the record stops there.
    pub terminated: bool,
}

/// Simulates pre/stim/post at 1 kHz with the train starting at `pre_ms`.
/// The induced response is drawn from the trial seed.
pub fn run_trial(
    trim: &TrimConfig,
    protocol: &TrialProtocol,
    table: &DoseAnchorTable,
    noise: &TrialNoise,
    launch: LaunchState,
    arena: Option<Arena>,
) -> Result<TrialRecord, SimError> {
    run_trial_dt(trim, protocol, table, noise, launch, arena, 1.0)
}

/// [`run_trial`] with an explicit step; samples are still kept every 1 ms.
pub fn run_trial_dt(
    trim: &TrimConfig,
    protocol: &TrialProtocol,
    table: &DoseAnchorTable,
    noise: &TrialNoise,
    launch: LaunchState,
    arena: Option<Arena>,
    dt_ms: f64,
) -> Result<TrialRecord, SimError> {
    protocol.validate()?;
    noise.response.validate()?;
    let cmd = protocol.command;
    let response =
        noisy_response(cmd.target, cmd.frequency_hz, table, &noise.response, protocol.seed)?;
    let mut sim = Simulator::new(*trim, launch, noise.heading, protocol.seed ^ 0x4845_4144)?;
    let substeps = (1.0 / dt_ms).round().max(1.0) as usize;
    let dt = 1.0 / substeps as f64;
    let n = protocol.total_ms().round() as usize;
    let onset = protocol.pre_ms.round() as usize;
    let mut truth = Vec::with_capacity(n + 1);
    let mut terminated = false;
    for i in 0..=n {
        if i == onset {
            sim.start_train(cmd, response)?;
        }
        truth.push(sim.sample());
        if arena.is_some_and(|a| !a.contains(sim.state().position)) {
            terminated = true;
            break;
        }
        if i < n {
            for _ in 0..substeps {
                sim.step(dt)?;
            }
            // pin the clock to the integer grid
            sim.state.t_ms = (i + 1) as f64;
        }
    }
    Ok(TrialRecord {
        meta: TrialMeta {
            beetle_id: 0,
            trial_id: 0,
            target: cmd.target,
            frequency_hz: cmd.frequency_hz,
            amplitude_mv: cmd.amplitude_mv,
            pulse_width_ms: cmd.pulse_width_ms,
            seed: protocol.seed,
            stim_onset_ms: protocol.pre_ms,
            stim_ms: protocol.stim_ms,
            trim: *trim,
            drawn: Some(response),
        },
        truth,
        imu: Vec::new(),
        mocap: Vec::new(),
        terminated,
    })
}

const TRUTH_HEADER: [&str; 14] =
    ["t_ms", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "act_L", "act_R", "stim_on"];

/// First line of a trial file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialHeader {
    #[serde(flatten)]
    pub meta: TrialMeta,
    #[serde(default)]
    pub terminated: bool,
}

/// Writes the truth series as CSV with a `# {json header}` first line.
pub fn write_truth_csv<W: Write>(record: &TrialRecord, mut out: W) -> Result<(), SimError> {
    let header = TrialHeader { meta: record.meta.clone(), terminated: record.terminated };
    let meta = serde_json::to_string(&header).map_err(|e| SimError::Record(e.to_string()))?;
    writeln!(out, "# {meta}").map_err(|e| SimError::Record(e.to_string()))?;
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SimError::Record(e.to_string());
    w.write_record(TRUTH_HEADER).map_err(err)?;
    for s in &record.truth {
        let q = s.attitude;
        let row = [
            s.t_ms, s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y,
            s.velocity.z, q.w, q.x, q.y, q.z, s.act_l, s.act_r, f64::from(u8::from(s.stim_on)),
        ];
        w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
    }
    w.flush().map_err(|e| SimError::Record(e.to_string()))?;
    Ok(())
}

/// Reads a file written by [`write_truth_csv`]. Sensor streams come back empty.
pub fn read_truth_csv<R: BufRead>(mut input: R) -> Result<TrialRecord, SimError> {
    let header: TrialHeader = read_meta_line(&mut input)?;
    let mut r = csv::Reader::from_reader(input);
    let err = |e: String| SimError::Record(e);
    if r.headers().map_err(|e| err(e.to_string()))?.iter().ne(TRUTH_HEADER) {
        return Err(err("unexpected truth columns".into()));
    }
    let mut truth = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let v: Vec<f64> = rec.iter().map(|x| x.parse::<f64>()).collect::<Result<_, _>>().map_err(|e| err(e.to_string()))?;
        if v.len() != TRUTH_HEADER.len() {
            return Err(err("short truth row".into()));
        }
        truth.push(TruthSample {
            t_ms: v[0],
            position: Vec3::new(v[1], v[2], v[3]),
            velocity: Vec3::new(v[4], v[5], v[6]),
            attitude: UnitQuat { w: v[7], x: v[8], y: v[9], z: v[10] },
            act_l: v[11],
            act_r: v[12],
            stim_on: v[13] != 0.0,
        });
    }
    Ok(TrialRecord { meta: header.meta, truth, imu: Vec::new(), mocap: Vec::new(), terminated: header.terminated })
}

/// Reads a `# {json}` header line, returning the parsed value and the rest.
pub fn read_meta_line<R: BufRead, T: serde::de::DeserializeOwned>(reader: &mut R) -> Result<T, SimError> {
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| SimError::Record(e.to_string()))?;
    let json = line
        .trim_end()
        .strip_prefix("# ")
        .ok_or_else(|| SimError::Record("missing '# {json}' header line".into()))?;
    serde_json::from_str(json).map_err(|e| SimError::Record(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quat_to_euler;

    fn quiet(trim: TrimConfig) -> Simulator {
        Simulator::new(trim, LaunchState::default(), HeadingWander::OFF, 1).unwrap()
    }

    #[test]
    fn trim_is_a_fixed_point() {
        let mut sim = quiet(TrimConfig::default());
        let before = *sim.state();
        for _ in 0..500 {
            sim.step(1.0).unwrap();
        }
        let after = sim.state();
        assert!((after.velocity - before.velocity).norm() < 1e-9);
        assert!(after.attitude.angle_to_deg(before.attitude) < 1e-9);
        assert!(after.body_rates.norm() < 1e-9);
        // uniform motion
        let expected = before.position + before.velocity * 0.5;
        assert!((after.position - expected).norm() < 1e-9);
    }

    #[test]
    fn held_both_train_reaches_pitch_and_braking() {
        let mut sim = quiet(TrimConfig::default());
        let mut cmd = StimCommand::standard(Target::Both, 100.0);
        cmd.duration_ms = 3000.0;
        let r = crate::dose::steady_response(Target::Both, 100.0, &DoseAnchorTable::default()).unwrap();
        sim.start_train(cmd, r).unwrap();
        let v0 = sim.state().velocity;
        let mut peak_brake: f64 = 0.0;
        for _ in 0..1500 {
            let v = sim.state().velocity;
            sim.step(1.0).unwrap();
            let a = (sim.state().velocity - v) * 1000.0;
            peak_brake = peak_brake.min(a.x);
        }
        let pitch = quat_to_euler(sim.state().attitude).angles.pitch;
        assert!((pitch - 22.0).abs() < 0.22, "pitch {pitch}");
        assert!((peak_brake + 1.4).abs() < 0.07, "peak braking {peak_brake}");
        assert!(sim.state().velocity.x < v0.x);
    }

    #[test]
    fn fine_step_oracle_agrees() {
        let table = DoseAnchorTable::default();
        let proto = TrialProtocol::new(StimCommand::standard(Target::Left, 90.0), 3);
        let mut proto = proto;
        proto.post_ms = 0.0;
        let run = |dt| {
            run_trial_dt(&TrimConfig::default(), &proto, &table, &TrialNoise::OFF, LaunchState::default(), None, dt)
                .unwrap()
        };
        let coarse = run(1.0);
        let fine = run(0.01);
        assert_eq!(coarse.truth.len(), fine.truth.len());
        let scale = |f: &dyn Fn(&TruthSample) -> f64| {
            fine.truth.iter().map(|s| f(s).abs()).fold(0.0, f64::max).max(1e-12)
        };
        let channels: [(&str, Box<dyn Fn(&TruthSample) -> f64>); 6] = [
            ("px", Box::new(|s| s.position.x - 2.0)),
            ("vx", Box::new(|s| s.velocity.x)),
            ("vy", Box::new(|s| s.velocity.y)),
            ("vz", Box::new(|s| s.velocity.z)),
            ("pitch", Box::new(|s| quat_to_euler(s.attitude).angles.pitch)),
            ("yaw", Box::new(|s| quat_to_euler(s.attitude).angles.yaw)),
        ];
        for (name, f) in channels.iter() {
            let sc = scale(f.as_ref());
            let worst = coarse
                .truth
                .iter()
                .zip(&fine.truth)
                .map(|(a, b)| (f(a) - f(b)).abs() / sc)
                .fold(0.0, f64::max);
            assert!(worst < 1e-3, "{name}: relative divergence {worst}");
        }
    }

    #[test]
    fn pitch_recovers_after_train() {
        let table = DoseAnchorTable::default();
        let trim = TrimConfig::default();
        let mut proto = TrialProtocol::new(StimCommand::standard(Target::Both, 100.0), 0);
        proto.post_ms = 5.0 * trim.tau_recover_ms + 10.0;
        let rec = run_trial(&trim, &proto, &table, &TrialNoise::OFF, LaunchState::default(), None).unwrap();
        let end = (proto.pre_ms + proto.stim_ms) as usize;
        let peak = quat_to_euler(rec.truth[end].attitude).angles.pitch;
        assert!(peak > 15.0);
        let at = end + (5.0 * trim.tau_recover_ms) as usize;
        let late = quat_to_euler(rec.truth[at].attitude).angles.pitch;
        // exponential-decay oracle from the pitch at train end
        let oracle = peak * (-5.0f64).exp();
        assert!(late.abs() < 2.0 && (late - oracle).abs() < 0.5, "{late} vs {oracle}");
    }

    #[test]
    fn trials_are_bit_reproducible() {
        let table = DoseAnchorTable::default();
        let proto = TrialProtocol::new(StimCommand::standard(Target::Right, 70.0), 77);
        let go = || {
            run_trial(&TrimConfig::default(), &proto, &table, &TrialNoise::default(), LaunchState::default(), Some(Arena::default()))
                .unwrap()
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn zero_amplitude_never_moves_attitude() {
        let table = DoseAnchorTable::default();
        let mut cmd = StimCommand::standard(Target::Both, 100.0);
        cmd.amplitude_mv = 0.0;
        let rec = run_trial(&TrimConfig::default(), &TrialProtocol::new(cmd, 1), &table, &TrialNoise::OFF, LaunchState::default(), None).unwrap();
        for s in &rec.truth {
            assert!(s.attitude.angle_to_deg(UnitQuat::IDENTITY) < 1e-9);
            assert_eq!(s.act_l, 0.0);
        }
    }

    #[test]
    fn quaternion_stays_normalized() {
        let table = DoseAnchorTable::default();
        let proto = TrialProtocol::new(StimCommand::standard(Target::Left, 100.0), 5);
        let rec = run_trial(&TrimConfig::default(), &proto, &table, &TrialNoise::default(), LaunchState::default(), None).unwrap();
        for s in &rec.truth {
            assert!((s.attitude.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn leaving_the_arena_truncates() {
        let table = DoseAnchorTable::default();
        let proto = TrialProtocol::new(StimCommand::standard(Target::Both, 80.0), 5);
        let launch = LaunchState { position: Vec3::new(11.5, 4.0, 2.0), heading_deg: 0.0 };
        let rec = run_trial(&TrimConfig::default(), &proto, &table, &TrialNoise::OFF, launch, Some(Arena::default())).unwrap();
        assert!(rec.terminated);
        assert!(rec.truth.len() < 1001);
    }

    #[test]
    fn payload_penalty() {
        let mut trim = TrimConfig::default();
        for (m, expected) in [(0.25, 2.0), (1.23, 2.0), (3.50, 1.7)] {
            trim.payload_mass_g = m;
            assert!((payload_speed(&trim) - expected).abs() < 1e-12, "{m} g");
        }
        trim.payload_mass_g = -1.0;
        assert!(trim.validate().is_err());
    }

    #[test]
    fn heading_vectors_follow_convention() {
        let h = heading_vector(90.0);
        assert!((h - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        let l = lateral_vector(0.0);
        assert!((l - Vec3::Y).norm() < 1e-12);
        assert!((heading_vector(37.0).cross(lateral_vector(37.0)) - Vec3::Z).norm() < 1e-12);
    }

    #[test]
    fn default_wander_stays_saccade_free() {
        let table = DoseAnchorTable::default();
        for seed in 0..20 {
            let proto = TrialProtocol::new(StimCommand::standard(Target::Left, 100.0), seed);
            let rec = run_trial(&TrimConfig::default(), &proto, &table, &TrialNoise::default(), LaunchState::default(), None).unwrap();
            for w in rec.truth.windows(2) {
                let (a, b) = (w[0].velocity, w[1].velocity);
                let da = (b.y.atan2(b.x) - a.y.atan2(a.x)).to_degrees();
                assert!(da.abs() * 1000.0 < 500.0);
            }
        }
    }

    #[test]
    fn truth_file_round_trip() {
        let cmd = StimCommand::standard(Target::Right, 72.0);
        let rec = run_trial(&TrimConfig::default(), &TrialProtocol::new(cmd, 9), &DoseAnchorTable::default(), &TrialNoise::default(), LaunchState::default(), None).unwrap();
        let mut buf = Vec::new();
        write_truth_csv(&rec, &mut buf).unwrap();
        let back = read_truth_csv(&buf[..]).unwrap();
        assert_eq!(back.meta, rec.meta);
        assert_eq!(back.truth, rec.truth);
        assert!(read_truth_csv(&b"t_ms\n1\n"[..]).is_err());
    }
}
