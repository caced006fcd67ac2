//! Live protocol endpoint.
//!
//! One thread owns the session and steps it against the wall clock. Each TCP
//! client gets a writer thread fed by a channel. The first client to connect
//! while no pilot is attached becomes the pilot and may send frames; other
//! clients only observe. Every frame goes to `frames.bin` as it happens.

use super::analyze::{analyze_trials, write_analysis, AnalysisReport};
use super::{io_err, ExperimentError};
use crate::controller::{ControlGoal, Controller, Decision, Tracker, TrackerConfig};
use crate::geometry::Vec3;
use crate::pipeline::{PipelineConfig, Source};
use crate::protocol::{encode, reconstruct_trials, BackpackSession, Message, SessionConfig, SessionStats, StimRequest};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

/// Controller requests use the top quarter of the sequence space so their
/// acks cannot be mistaken for a pilot's.
pub const CONTROLLER_SEQ_BASE: u16 = 0xC000;

/// What runs behind the socket; read from the `--plan` file of `serve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub session: SessionConfig,
    pub goal: Option<ControlGoal>,
    pub controller_period_ms: u64,
    pub tracker: TrackerConfig,
    pub disturbance: Vec3,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            goal: None,
            controller_period_ms: 50,
            tracker: TrackerConfig::default(),
            disturbance: Vec3::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeConfig {
    /// 0 picks a free port.
    pub port: u16,
    /// Simulated ms per wall ms.
    pub time_scale: f64,
    /// Stop after this much simulated time; `None` runs until stopped.
    pub duration_ms: Option<u64>,
    /// Directory for `frames.bin` and the final `report.json`.
    pub out: Option<PathBuf>,
    pub scenario: Scenario,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { port: 7878, time_scale: 1.0, duration_ms: None, out: None, scenario: Scenario::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeSummary {
    pub sim_ms: u64,
    pub clients: usize,
    pub session: SessionStats,
    pub log_bytes: usize,
    /// Analysis of the trials in the session log.
    pub analysis: AnalysisReport,
}

type Clients = Arc<Mutex<Vec<Sender<Arc<Vec<u8>>>>>>;

pub struct ServeHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: Option<JoinHandle<Result<ServeSummary, ExperimentError>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServeHandle {
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    /// Waits for the simulation to end (its duration, or [`stop`](Self::stop)).
    pub fn join(mut self) -> Result<ServeSummary, ExperimentError> {
        let r = self.sim.take().expect("joined once").join().map_err(|_| ExperimentError::Simulation("simulation thread panicked".into()))?;
        self.stop();
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        r
    }
}

impl Drop for ServeHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds the socket and starts the session threads.
pub fn serve(cfg: ServeConfig) -> Result<ServeHandle, ExperimentError> {
    if !(cfg.time_scale > 0.0 && cfg.time_scale.is_finite()) {
        return Err(ExperimentError::Validation(format!("time scale {} must be positive", cfg.time_scale)));
    }
    let mut session = BackpackSession::new(&cfg.scenario.session).map_err(|e| ExperimentError::Validation(e.to_string()))?;
    session.set_disturbance(cfg.scenario.disturbance);
    let controller = match cfg.scenario.goal {
        Some(g) => Some(Controller::new(g).map_err(|e| ExperimentError::Validation(e.to_string()))?),
        None => None,
    };
    let tracker = Tracker::new(cfg.scenario.tracker, cfg.scenario.session.seed ^ 0x5452_4143)
        .map_err(|e| ExperimentError::Validation(e.to_string()))?;
    let log = match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            let p = dir.join("frames.bin");
            Some(BufWriter::new(File::create(&p).map_err(|e| io_err(&p, e))?))
        }
        None => None,
    };
    let listener = TcpListener::bind(("127.0.0.1", cfg.port))
        .map_err(|e| ExperimentError::Environment(format!("bind port {}: {e}", cfg.port)))?;
    let addr = listener.local_addr().map_err(|e| ExperimentError::Environment(e.to_string()))?;
    listener.set_nonblocking(true).map_err(|e| ExperimentError::Environment(e.to_string()))?;

    let stop = Arc::new(AtomicBool::new(false));
    let clients: Clients = Arc::default();
    let (cmd_tx, cmd_rx) = mpsc::channel::<Vec<u8>>();
    let acceptor = {
        let (stop, clients) = (stop.clone(), clients.clone());
        thread::spawn(move || accept_loop(listener, stop, clients, cmd_tx))
    };
    let sim = {
        let stop = stop.clone();
        let mut state = Live { session, controller, tracker, clients, cmd_rx, log, cfg };
        thread::spawn(move || state.run(&stop))
    };
    Ok(ServeHandle { addr, stop, sim: Some(sim), acceptor: Some(acceptor) })
}

fn accept_loop(listener: TcpListener, stop: Arc<AtomicBool>, clients: Clients, cmd_tx: Sender<Vec<u8>>) {
    let pilot_attached = Arc::new(AtomicBool::new(false));
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nodelay(true);
                let (tx, rx) = mpsc::channel::<Arc<Vec<u8>>>();
                let Ok(write_half) = stream.try_clone() else { continue };
                thread::spawn(move || writer(write_half, rx));
                clients.lock().expect("client list").push(tx);
                if !pilot_attached.swap(true, Ordering::SeqCst) {
                    let (cmd_tx, flag, stop) = (cmd_tx.clone(), pilot_attached.clone(), stop.clone());
                    thread::spawn(move || {
                        pilot_reader(stream, &cmd_tx, &stop);
                        flag.store(false, Ordering::SeqCst);
                    });
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn writer(mut stream: TcpStream, rx: Receiver<Arc<Vec<u8>>>) {
    for bytes in rx {
        if stream.write_all(&bytes).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);
}

fn pilot_reader(mut stream: TcpStream, tx: &Sender<Vec<u8>>, stop: &AtomicBool) {
    let _ = stream.set_read_timeout(Some(Duration::from_millis(50)));
    let mut buf = [0u8; 4096];
    while !stop.load(Ordering::SeqCst) {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                if tx.send(buf[..n].to_vec()).is_err() {
                    break;
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
}

struct Live {
    session: BackpackSession,
    controller: Option<Controller>,
    tracker: Tracker,
    clients: Clients,
    cmd_rx: Receiver<Vec<u8>>,
    log: Option<BufWriter<File>>,
    cfg: ServeConfig,
}

impl Live {
    fn broadcast(&self, frames: Vec<Vec<u8>>) {
        if frames.is_empty() {
            return;
        }
        let batch = Arc::new(frames.concat());
        self.clients.lock().expect("client list").retain(|c| c.send(batch.clone()).is_ok());
    }

    fn step(&mut self, controller_seq: &mut u16) -> Result<(), ExperimentError> {
        let now = self.session.now_ms();
        while let Ok(bytes) = self.cmd_rx.try_recv() {
            if self.session.receive(&bytes) > 0 {
                // pilot commands pre-empt the controller
                if let Some(c) = &mut self.controller {
                    c.note_external_train(now as f64);
                }
            }
        }
        let state = *self.session.simulator().state();
        self.tracker.observe(now as f64, state.position);
        if let Some(c) = &mut self.controller {
            if now % self.cfg.scenario.controller_period_ms.max(1) == 0 {
                if let Decision::Fire(cmd) = c.control_step(now as f64, self.tracker.estimate().as_ref()) {
                    let req = StimRequest::from_command(&cmd).map_err(|e| ExperimentError::Simulation(e.to_string()))?;
                    let seq = CONTROLLER_SEQ_BASE | (*controller_seq & 0x3FFF);
                    *controller_seq = controller_seq.wrapping_add(1);
                    self.session.receive(&encode(&Message::StimRequest(req), seq).expect("validated"));
                }
            }
        }
        let frames = self.session.step().map_err(|e| ExperimentError::Simulation(e.to_string()))?;
        self.broadcast(frames);
        Ok(())
    }

    fn run(&mut self, stop: &AtomicBool) -> Result<ServeSummary, ExperimentError> {
        let start = Instant::now();
        let mut full_log = Vec::new();
        let mut controller_seq = 0u16;
        let end = self.cfg.duration_ms.unwrap_or(u64::MAX);
        while !stop.load(Ordering::SeqCst) && self.session.now_ms() < end {
            let due = (start.elapsed().as_secs_f64() * 1000.0 * self.cfg.time_scale) as u64;
            if self.session.now_ms() >= due {
                thread::sleep(Duration::from_micros(500));
                continue;
            }
            while self.session.now_ms() < due.min(end) {
                self.step(&mut controller_seq)?;
            }
            let chunk = self.session.take_log();
            if let Some(f) = &mut self.log {
                f.write_all(&chunk)
                    .and_then(|_| f.flush())
                    .map_err(|e| ExperimentError::Environment(e.to_string()))?;
            }
            full_log.extend_from_slice(&chunk);
        }
        if let Some(f) = &mut self.log {
            f.flush().map_err(|e| ExperimentError::Environment(e.to_string()))?;
        }
        let analysis = live_analysis(&full_log);
        if let Some(dir) = &self.cfg.out {
            write_analysis(&analysis, dir)?;
        }
        // close the client channels so writers finish
        let clients = std::mem::take(&mut *self.clients.lock().expect("client list")).len();
        Ok(ServeSummary {
            sim_ms: self.session.now_ms(),
            clients,
            session: self.session.stats(),
            log_bytes: full_log.len(),
            analysis: analysis.report,
        })
    }
}

/// Reconstruction and analysis of a frame log, as done at the end of a live
/// session and by replay.
pub fn live_analysis(log: &[u8]) -> super::analyze::Analysis {
    let cfg = PipelineConfig::default();
    let replay = reconstruct_trials(log, &cfg);
    let mut warnings = replay.warnings.clone();
    warnings.extend(replay.errors.iter().map(|e| format!("frame error: {e}")));
    analyze_trials(&replay.trials, Source::Imu, &cfg, warnings)
}
