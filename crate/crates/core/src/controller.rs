//! Closed-loop altitude hold and braking with whole stimulation trains.
//!
//! The actuator is single-sided: a Both train adds lift and brakes, nothing
//! can remove lift or speed the beetle up. The controller therefore only
//! fires when the error points the way a train can push.

use crate::dynamics::SimError;
use crate::geometry::Vec3;
use crate::protocol::{encode, BackpackSession, Link, LinkConfig, LinkError, Message, SessionConfig, StimRequest};
use crate::stimulus::{StimCommand, Target};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid goal: {0}")]
    Goal(&'static str),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Hold altitude (m) against sink.
    AltitudeHold,
    /// Bring horizontal speed (m/s) down to the target.
    BrakeToSpeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlGoal {
    pub mode: ControlMode,
    pub target: f64,
    /// Hz per unit of error.
    pub kp: f64,
    pub deadband: f64,
    pub refractory_ms: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    pub duration_ms: f64,
    /// Estimates older than this are stale.
    pub max_age_ms: f64,
}

impl Default for ControlGoal {
    fn default() -> Self {
        Self {
            mode: ControlMode::AltitudeHold,
            target: 2.0,
            kp: 60.0,
            deadband: 0.05,
            refractory_ms: 700.0,
            f_lo: 63.0,
            f_hi: 100.0,
            duration_ms: 500.0,
            max_age_ms: 50.0,
        }
    }
}

impl ControlGoal {
    pub fn altitude(target_m: f64) -> Self {
        Self { target: target_m, ..Self::default() }
    }

    pub fn brake(target_speed: f64) -> Self {
        Self { mode: ControlMode::BrakeToSpeed, target: target_speed, kp: 20.0, deadband: 0.2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !self.target.is_finite() || (self.mode == ControlMode::BrakeToSpeed && self.target < 0.0) {
            return Err(ControlError::Goal("target"));
        }
        if !(self.kp >= 0.0 && self.kp.is_finite()) {
            return Err(ControlError::Goal("kp must be non-negative"));
        }
        if !(self.deadband >= 0.0 && self.deadband.is_finite()) {
            return Err(ControlError::Goal("deadband must be non-negative"));
        }
        if !(self.duration_ms > 0.0 && self.refractory_ms >= self.duration_ms && self.refractory_ms.is_finite()) {
            return Err(ControlError::Goal("refractory must cover the train duration"));
        }
        if !(self.f_lo > 0.0 && self.f_lo <= self.f_hi && self.f_hi.is_finite()) {
            return Err(ControlError::Goal("frequency band"));
        }
        if !(self.max_age_ms > 0.0) {
            return Err(ControlError::Goal("max_age_ms"));
        }
        StimCommand { frequency_hz: self.f_hi, ..self.command(self.f_lo) }
            .validate()
            .map_err(|_| ControlError::Goal("frequency band"))?;
        Ok(())
    }

    fn command(&self, frequency_hz: f64) -> StimCommand {
        StimCommand { frequency_hz, duration_ms: self.duration_ms, ..StimCommand::standard(Target::Both, frequency_hz) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    /// Time the estimate refers to, ms.
    pub t_ms: f64,
    pub position: Vec3,
    pub velocity: Vec3,
}

impl StateEstimate {
    pub fn horizontal_speed(&self) -> f64 {
        self.velocity.x.hypot(self.velocity.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hold {
    Deadband,
    /// The error calls for negative lift or thrust.
    WrongSide,
    Refractory,
    Stale,
    NoEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Fire(StimCommand),
    Hold(Hold),
}

#[derive(Debug, Clone)]
pub struct Controller {
    goal: ControlGoal,
    last_fire_ms: Option<f64>,
    stale: u64,
}

impl Controller {
    pub fn new(goal: ControlGoal) -> Result<Self, ControlError> {
        goal.validate()?;
        Ok(Self { goal, last_fire_ms: None, stale: 0 })
    }

    pub fn goal(&self) -> &ControlGoal {
        &self.goal
    }

    /// Number of steps held on stale telemetry.
    pub fn stale_count(&self) -> u64 {
        self.stale
    }

    /// Registers a train started by someone else (a pilot); it opens the
    /// refractory window like our own.
    pub fn note_external_train(&mut self, t_ms: f64) {
        self.last_fire_ms = Some(t_ms);
    }

    /// Signed error `target − measured`.
    pub fn error(&self, est: &StateEstimate) -> f64 {
        match self.goal.mode {
            ControlMode::AltitudeHold => self.goal.target - est.position.z,
            ControlMode::BrakeToSpeed => self.goal.target - est.horizontal_speed(),
        }
    }

    pub fn control_step(&mut self, now_ms: f64, est: Option<&StateEstimate>) -> Decision {
        let Some(est) = est else { return Decision::Hold(Hold::NoEstimate) };
        if now_ms - est.t_ms > self.goal.max_age_ms {
            self.stale += 1;
            return Decision::Hold(Hold::Stale);
        }
        let e = self.error(est);
        if e.abs() <= self.goal.deadband {
            return Decision::Hold(Hold::Deadband);
        }
        // altitude below target: e > 0; speed above target: e < 0
        let fires = match self.goal.mode {
            ControlMode::AltitudeHold => e > 0.0,
            ControlMode::BrakeToSpeed => e < 0.0,
        };
        if !fires {
            return Decision::Hold(Hold::WrongSide);
        }
        if self.last_fire_ms.is_some_and(|t| now_ms < t + self.goal.refractory_ms) {
            return Decision::Hold(Hold::Refractory);
        }
        // the wire carries whole hertz
        let f = (self.goal.f_lo + self.goal.kp * e.abs()).clamp(self.goal.f_lo, self.goal.f_hi).round();
        self.last_fire_ms = Some(now_ms);
        Decision::Fire(self.goal.command(f))
    }
}

/// Motion-capture position feed with fixed latency and a line-fit velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub rate_hz: f64,
    pub sigma_m: f64,
    pub latency_ms: f64,
    /// Samples in the velocity fit.
    pub window: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { rate_hz: 200.0, sigma_m: 0.001, latency_ms: 20.0, window: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    in_flight: VecDeque<(f64, Vec3)>,
    recent: VecDeque<(f64, Vec3)>,
    next_sample_ms: f64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, seed: u64) -> Result<Self, ControlError> {
        if !(cfg.rate_hz > 0.0 && cfg.sigma_m >= 0.0 && cfg.latency_ms >= 0.0 && cfg.window >= 2) {
            return Err(ControlError::Goal("tracker configuration"));
        }
        Ok(Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: Normal::new(0.0, cfg.sigma_m).expect("finite σ"),
            in_flight: VecDeque::new(),
            recent: VecDeque::new(),
            next_sample_ms: 0.0,
        })
    }

    /// Feeds the true position at `t_ms`; samples on the tracker clock.
    pub fn observe(&mut self, t_ms: f64, position: Vec3) {
        if t_ms + 1e-9 >= self.next_sample_ms {
            let mut n = || self.noise.sample(&mut self.rng);
            let p = position + Vec3::new(n(), n(), n());
            self.in_flight.push_back((t_ms, p));
            self.next_sample_ms += 1000.0 / self.cfg.rate_hz;
        }
        while self.in_flight.front().is_some_and(|(t, _)| t + self.cfg.latency_ms <= t_ms + 1e-9) {
            let s = self.in_flight.pop_front().expect("checked");
            self.recent.push_back(s);
            if self.recent.len() > self.cfg.window {
                self.recent.pop_front();
            }
        }
    }

    /// Least-squares line through the recent samples, evaluated at the newest.
    pub fn estimate(&self) -> Option<StateEstimate> {
        if self.recent.len() < 2 {
            return None;
        }
        let n = self.recent.len() as f64;
        let t_mean = self.recent.iter().map(|s| s.0).sum::<f64>() / n;
        let p_mean = self.recent.iter().fold(Vec3::ZERO, |a, s| a + s.1) * (1.0 / n);
        let stt: f64 = self.recent.iter().map(|s| (s.0 - t_mean).powi(2)).sum();
        let stp = self.recent.iter().fold(Vec3::ZERO, |a, s| a + (s.1 - p_mean) * (s.0 - t_mean));
        let slope = stp * (1.0 / stt);
        let t_last = self.recent.back().expect("non-empty").0;
        Some(StateEstimate {
            t_ms: t_last,
            position: p_mean + slope * (t_last - t_mean),
            velocity: slope * 1000.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClosedLoopConfig {
    pub session: SessionConfig,
    pub goal: ControlGoal,
    /// `false` runs the same scenario open loop.
    pub enabled: bool,
    pub duration_ms: u64,
    pub disturbance: Vec3,
    pub period_ms: u64,
    pub uplink: LinkConfig,
    pub tracker: TrackerConfig,
    /// The final span over which the terminal speed is averaged.
    pub terminal_ms: u64,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            goal: ControlGoal::default(),
            enabled: true,
            duration_ms: 30_000,
            disturbance: Vec3::new(0.0, 0.0, -0.3),
            period_ms: 50,
            uplink: LinkConfig::default(),
            tracker: TrackerConfig::default(),
            terminal_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopResult {
    /// RMS of `target − measured` over the whole run, true state.
    pub rms_error: f64,
    pub terminal_mean: f64,
    pub commands: u64,
    pub stale: u64,
    /// `(t_ms, altitude m, horizontal speed m/s)` every 10 ms.
    pub trace: Vec<(f64, f64, f64)>,
}

/// Runs a backpack session under the controller. Commands travel as frames
/// over a lossy uplink; the controller sees delayed motion-capture estimates.
pub fn run_closed_loop(cfg: &ClosedLoopConfig) -> Result<ClosedLoopResult, ControlError> {
    let mut controller = Controller::new(cfg.goal)?;
    let mut session = BackpackSession::new(&cfg.session)?;
    session.set_disturbance(cfg.disturbance);
    let mut tracker = Tracker::new(cfg.tracker, cfg.session.seed ^ 0x5452_4143)?;
    let mut uplink: Link<Vec<u8>> = Link::new(LinkConfig { seed: cfg.session.seed ^ cfg.uplink.seed, ..cfg.uplink })?;
    let mut seq: u16 = 0;
    let mut commands = 0;
    let mut sq = 0.0;
    let mut terminal = (0.0, 0usize);
    let mut trace = Vec::new();
    for t in 0..cfg.duration_ms {
        let now = t as f64;
        let state = *session.simulator().state();
        tracker.observe(now, state.position);
        if cfg.enabled && t % cfg.period_ms == 0 {
            if let Decision::Fire(cmd) = controller.control_step(now, tracker.estimate().as_ref()) {
                let req = StimRequest::from_command(&cmd).map_err(|_| ControlError::Goal("command out of range"))?;
                uplink.send(t, encode(&Message::StimRequest(req), seq).expect("validated request"));
                seq = seq.wrapping_add(1);
                commands += 1;
            }
        }
        for d in uplink.poll(t) {
            session.receive(&d.item);
        }
        let speed = state.velocity.x.hypot(state.velocity.y);
        let measured = match cfg.goal.mode {
            ControlMode::AltitudeHold => state.position.z,
            ControlMode::BrakeToSpeed => speed,
        };
        sq += (cfg.goal.target - measured).powi(2);
        if t + cfg.terminal_ms >= cfg.duration_ms {
            terminal.0 += measured;
            terminal.1 += 1;
        }
        if t % 10 == 0 {
            trace.push((now, state.position.z, speed));
        }
        session.step()?;
    }
    Ok(ClosedLoopResult {
        rms_error: (sq / cfg.duration_ms.max(1) as f64).sqrt(),
        terminal_mean: terminal.0 / terminal.1.max(1) as f64,
        commands,
        stale: controller.stale_count(),
        trace,
    })
}
