//! Backpack end of the link: a simulated beetle driven by framed commands.
//!
//! Each 1 ms step, in order: a finished train emits its off marker; queued
//! requests are acknowledged and started (a request during an active train
//! replaces it, closing the old marker first); the simulator advances;
//! telemetry goes out every 10 ms and a heartbeat every second. Every frame
//! in and out is appended to the log.

use super::frame::{encode, DecodeError, DecodeErrorKind, Message, StimMarker, StimRequest, StreamDecoder, ImuTelemetry};
use crate::dose::{noisy_response, DoseAnchorTable};
use crate::dynamics::{LaunchState, SimError, Simulator, TrialMeta, TrialNoise, TrialRecord, TrimConfig};
use crate::pipeline::PipelineConfig;
use crate::sensors::{body_rate_between, ImuEmulator, ImuSample, NoiseConfig, IMU_PERIOD_MS};
use crate::stimulus::Target;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};

pub const HEARTBEAT_PERIOD_MS: u64 = 1000;
const TELEMETRY_PERIOD_MS: u64 = IMU_PERIOD_MS as u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub trim: TrimConfig,
    pub launch: LaunchState,
    pub noise: TrialNoise,
    pub imu_noise: NoiseConfig,
    pub table: DoseAnchorTable,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            trim: TrimConfig::default(),
            launch: LaunchState::default(),
            noise: TrialNoise::default(),
            imu_noise: NoiseConfig::default(),
            table: DoseAnchorTable::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub frames_in: u64,
    pub frames_out: u64,
    /// Undecodable input, one per decoder error.
    pub malformed: u64,
    /// Valid frames of a type the backpack does not accept.
    pub ignored: u64,
    /// Requests whose command fails validation.
    pub rejected: u64,
    pub trains: u64,
}

#[derive(Debug, Clone)]
pub struct BackpackSession {
    sim: Simulator,
    imu: ImuEmulator,
    table: DoseAnchorTable,
    noise: TrialNoise,
    seed: u64,
    now_ms: u64,
    seq: u16,
    decoder: StreamDecoder,
    queue: VecDeque<(u16, StimRequest)>,
    marker_open: bool,
    log: Vec<u8>,
    stats: SessionStats,
}

impl BackpackSession {
    pub fn new(cfg: &SessionConfig) -> Result<Self, SimError> {
        cfg.noise.response.validate()?;
        let imu = ImuEmulator::new(cfg.imu_noise.with_seed(cfg.seed ^ cfg.imu_noise.seed))
            .map_err(|e| SimError::Record(e.to_string()))?;
        Ok(Self {
            sim: Simulator::new(cfg.trim, cfg.launch, cfg.noise.heading, cfg.seed ^ 0x4845_4144)?,
            imu,
            table: cfg.table.clone(),
            noise: cfg.noise,
            seed: cfg.seed,
            now_ms: 0,
            seq: 0,
            decoder: StreamDecoder::new(),
            queue: VecDeque::new(),
            marker_open: false,
            log: Vec::new(),
            stats: SessionStats::default(),
        })
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    /// Every frame seen so far, verbatim, in session order.
    pub fn log(&self) -> &[u8] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.log)
    }

    /// Constant world-frame disturbance on the simulated beetle, m/s².
    pub fn set_disturbance(&mut self, a: crate::Vec3) {
        self.sim.set_disturbance(a);
    }

    /// Raw bytes from the base station. Requests are queued for the next
    /// step; returns how many were queued.
    pub fn receive(&mut self, bytes: &[u8]) -> usize {
        self.decoder.push(bytes);
        let mut queued = 0;
        while let Some(event) = self.decoder.next_event() {
            match event {
                Ok(frame) => {
                    self.stats.frames_in += 1;
                    match frame.message {
                        Message::StimRequest(req) => {
                            self.accept(frame.seq, req);
                            queued += 1;
                        }
                        _ => self.stats.ignored += 1,
                    }
                }
                Err(_) => self.stats.malformed += 1,
            }
        }
        queued
    }

    fn accept(&mut self, seq: u16, req: StimRequest) {
        let bytes = encode(&Message::StimRequest(req), seq).expect("decoded request re-encodes");
        self.log.extend_from_slice(&bytes);
        self.queue.push_back((seq, req));
    }

    fn emit(&mut self, msg: Message, out: &mut Vec<Vec<u8>>) {
        let bytes = encode(&msg, self.seq).expect("backpack messages are in range");
        self.seq = self.seq.wrapping_add(1);
        self.log.extend_from_slice(&bytes);
        self.stats.frames_out += 1;
        out.push(bytes);
    }

    /// Advances 1 ms and returns the frames sent during it.
    pub fn step(&mut self) -> Result<Vec<Vec<u8>>, SimError> {
        let mut out = Vec::new();
        let t = self.now_ms;
        let t_us = t * 1000;
        if self.marker_open && !self.sim.stim_on() {
            self.emit(Message::StimMarker(StimMarker::stop(t_us)), &mut out);
            self.marker_open = false;
        }
        while let Some((seq, req)) = self.queue.pop_front() {
            let Ok(cmd) = req.to_command() else {
                self.stats.rejected += 1;
                continue;
            };
            let train_seed = self.seed.wrapping_add((self.stats.trains + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let response = match noisy_response(cmd.target, cmd.frequency_hz, &self.table, &self.noise.response, train_seed) {
                Ok(r) if cmd.validate().is_ok() => r,
                _ => {
                    self.stats.rejected += 1;
                    continue;
                }
            };
            self.sim.start_train(cmd, response)?;
            self.stats.trains += 1;
            self.emit(Message::StimAck { seq, start_timestamp_us: t_us }, &mut out);
            if self.marker_open {
                self.emit(Message::StimMarker(StimMarker::stop(t_us)), &mut out);
            }
            self.emit(Message::StimMarker(StimMarker::start(t_us, cmd.target)), &mut out);
            self.marker_open = true;
        }

        let before = self.sim.sample();
        self.sim.step(1.0)?;
        let after = self.sim.sample();
        if t % TELEMETRY_PERIOD_MS == 0 {
            let accel = (after.velocity - before.velocity) * 1000.0;
            let rates = body_rate_between(before.attitude, after.attitude, 1.0);
            let sample = self.imu.observe(t as f64, before.attitude, accel, rates);
            self.emit(Message::ImuTelemetry(ImuTelemetry::from_sample(&sample)), &mut out);
        }
        if t % HEARTBEAT_PERIOD_MS == 0 {
            self.emit(Message::Heartbeat { t_us }, &mut out);
        }
        self.now_ms += 1;
        Ok(out)
    }

    /// Steps `ms` times and returns all frames sent.
    pub fn run_for(&mut self, ms: u64) -> Result<Vec<Vec<u8>>, SimError> {
        let mut out = Vec::new();
        for _ in 0..ms {
            out.extend(self.step()?);
        }
        Ok(out)
    }
}

/// Trials rebuilt from a frame log.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub trials: Vec<TrialRecord>,
    pub frames: usize,
    pub errors: Vec<DecodeError>,
    pub warnings: Vec<String>,
}

struct OpenTrial {
    request: StimRequest,
    onset_us: u64,
    end_us: Option<u64>,
}

/// Rebuilds one trial per acknowledged request from logged telemetry and
/// markers. Each trial keeps the telemetry in `[onset − pre, onset + stim]`
/// of `cfg`; the stimulation length comes from the markers.
pub fn reconstruct_trials(log: &[u8], cfg: &PipelineConfig) -> Replay {
    let mut decoder = StreamDecoder::new();
    decoder.push(log);
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut frames = 0;
    let mut requests: HashMap<u16, StimRequest> = HashMap::new();
    let mut trials: Vec<OpenTrial> = Vec::new();
    let mut open: Option<(usize, Target)> = None;
    let mut imu: Vec<ImuSample> = Vec::new();
    let mut events = decoder.drain();
    events.extend(decoder.finish());
    for event in events {
        let frame = match event {
            Ok(f) => f,
            Err(e) => {
                if e.kind == DecodeErrorKind::Incomplete {
                    warnings.push(format!("log ends inside a frame at byte {}", e.offset));
                }
                errors.push(e);
                continue;
            }
        };
        frames += 1;
        match frame.message {
            Message::StimRequest(r) => {
                requests.insert(frame.seq, r);
            }
            Message::StimAck { seq, start_timestamp_us } => match requests.remove(&seq) {
                Some(request) => trials.push(OpenTrial { request, onset_us: start_timestamp_us, end_us: None }),
                None => warnings.push(format!("ack for unknown request seq {seq} at byte {}", frame.offset)),
            },
            Message::StimMarker(m) => match (m.target(), open) {
                (Some(target), None) => match trials.iter().rposition(|tr| tr.onset_us == m.t_us) {
                    Some(i) => open = Some((i, target)),
                    None => warnings.push(format!("marker without acknowledged request at byte {}", frame.offset)),
                },
                (Some(_), Some(_)) => warnings.push(format!("overlapping on markers at byte {}", frame.offset)),
                (None, Some((i, _))) => {
                    trials[i].end_us = Some(m.t_us);
                    open = None;
                }
                (None, None) => warnings.push(format!("off marker without train at byte {}", frame.offset)),
            },
            Message::ImuTelemetry(m) => imu.push(m.to_sample()),
            Message::Heartbeat { .. } => {}
        }
    }
    let last_t = imu.last().map_or(f64::NEG_INFINITY, |s| s.t_ms);
    let records = trials
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            let onset = tr.onset_us as f64 / 1000.0;
            let (from, to) = (onset - cfg.pre_ms, onset + cfg.stim_ms);
            if last_t < to {
                warnings.push(format!("trial {i}: log stops at {last_t} ms before window end {to} ms"));
            }
            let stim_ms = match tr.end_us {
                Some(end) => (end - tr.onset_us) as f64 / 1000.0,
                None => {
                    warnings.push(format!("trial {i}: no off marker"));
                    f64::from(tr.request.duration_ms)
                }
            };
            let cmd = tr.request.to_command().expect("requests were validated on decode");
            TrialRecord {
                meta: TrialMeta {
                    beetle_id: 0,
                    trial_id: i as u32,
                    target: cmd.target,
                    frequency_hz: cmd.frequency_hz,
                    amplitude_mv: cmd.amplitude_mv,
                    pulse_width_ms: cmd.pulse_width_ms,
                    seed: 0,
                    stim_onset_ms: onset,
                    stim_ms,
                    trim: TrimConfig::default(),
                    drawn: None,
                },
                truth: Vec::new(),
                imu: imu.iter().filter(|s| (from..=to).contains(&s.t_ms)).copied().collect(),
                mocap: Vec::new(),
                terminated: false,
            }
        })
        .collect();
    Replay { trials: records, frames, errors, warnings }
}

impl Replay {
    pub fn error_counts(&self) -> HashMap<DecodeErrorKind, usize> {
        let mut m = HashMap::new();
        for e in &self.errors {
            *m.entry(e.kind).or_insert(0) += 1;
        }
        m
    }
}
