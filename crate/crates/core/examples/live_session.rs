//! Live endpoint: serves a session at 20x speed, fires three trains as the
//! pilot, watches as a second client and replays the recorded frame log.
//!
//! ```bash
//! cargo run --release --example live_session
//! ```

use cyborg::experiment::{replay_file, serve, ServeConfig};
use cyborg::protocol::{encode, Message, StimRequest, StreamDecoder};
use std::io::{Read, Write};
use std::net::TcpStream;
use std::thread;
use std::time::Duration;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("cyborg_live_session");
    let cfg = ServeConfig { port: 0, time_scale: 20.0, duration_ms: Some(10_000), out: Some(dir.clone()), ..ServeConfig::default() };
    let handle = serve(cfg)?;
    println!("serving on {}", handle.addr);

    let mut pilot = TcpStream::connect(handle.addr)?;
    let mut sink = pilot.try_clone()?;
    thread::spawn(move || std::io::copy(&mut sink, &mut std::io::sink()));
    thread::sleep(Duration::from_millis(20));
    let mut observer = TcpStream::connect(handle.addr)?;
    let watcher = thread::spawn(move || {
        let mut bytes = Vec::new();
        let _ = observer.read_to_end(&mut bytes);
        bytes
    });
    thread::sleep(Duration::from_millis(20));

    for (seq, (target, freq)) in [(2u8, 100u16), (0, 80), (1, 63)].into_iter().enumerate() {
        let req = StimRequest { target, freq_hz: freq, duration_ms: 500, amplitude_mv: 3000, pulse_width_us: 3000 };
        pilot.write_all(&encode(&Message::StimRequest(req), seq as u16)?)?;
        thread::sleep(Duration::from_millis(100));
    }
    let summary = handle.join()?;
    println!("{} ms simulated, {} frames sent, {} trains", summary.sim_ms, summary.session.frames_out, summary.session.trains);

    let mut dec = StreamDecoder::new();
    dec.push(&watcher.join().expect("observer thread"));
    for f in dec.drain().into_iter().flatten() {
        match f.message {
            Message::StimAck { seq, start_timestamp_us } => println!("observer: ack {seq} at {} ms", start_timestamp_us / 1000),
            Message::StimMarker(m) => println!("observer: marker {:?} at {} ms", m.target(), m.t_us / 1000),
            _ => {}
        }
    }

    let (replay, analysis) = replay_file(&dir.join("frames.bin"))?;
    println!("replay: {} frames, {} trials, {} decode errors", replay.frames, replay.trials.len(), replay.errors.len());
    for row in &analysis.rows {
        println!("  {:<5} {:>3} Hz pitch {:+.1} deg  a_h {:+.2}  a_v {:+.2}", row.target.name(), row.freq_hz, row.response.d_pitch, row.response.d_ah, row.response.d_av);
    }
    let same = serde_json::to_string(&analysis.report)? == serde_json::to_string(&summary.analysis)?;
    println!("replay analysis identical to live: {same}");
    Ok(())
}
