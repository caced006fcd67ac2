//! Wire frames: encodes one of each message, damages a stream, decodes it
//! incrementally and sends frames over a lossy, jittery radio link.
//!
//! ```bash
//! cargo run --release --example wire_protocol
//! ```

use cyborg::protocol::{encode, link_simulate, ImuTelemetry, LinkConfig, Message, StimMarker, StimRequest, StreamDecoder};
use cyborg::stimulus::Target;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(" ")
}

fn main() -> anyhow::Result<()> {
    let messages = [
        Message::StimRequest(StimRequest { target: Target::Both.code(), freq_hz: 80, duration_ms: 500, amplitude_mv: 3000, pulse_width_us: 3000 }),
        Message::StimAck { seq: 1, start_timestamp_us: 2_000_000 },
        Message::StimMarker(StimMarker::start(2_000_000, Target::Both)),
        Message::ImuTelemetry(ImuTelemetry { t_us: 2_010_000, accel: [12, -3, -1000], gyro: [0, 15, -4], quat: [32767, 0, 0, 0] }),
        Message::Heartbeat { t_us: 3_000_000 },
    ];
    let mut stream = Vec::new();
    for (seq, m) in messages.iter().enumerate() {
        let bytes = encode(m, seq as u16 + 1)?;
        println!("{:<13} {}", format!("{:?}", m).split(['(', ' ']).next().unwrap_or(""), hex(&bytes));
        stream.extend(bytes);
    }

    // a stray byte, a flipped CRC bit and a cut-off tail
    stream.insert(17, 0x42);
    stream[40] ^= 0x01;
    stream.truncate(stream.len() - 3);
    let mut dec = StreamDecoder::new();
    for chunk in stream.chunks(7) {
        dec.push(chunk);
    }
    let mut events = dec.drain();
    events.extend(dec.finish());
    for ev in events {
        match ev {
            Ok(f) => println!("frame  seq {:>2} at byte {:>3}", f.seq, f.offset),
            Err(e) => println!("error  {e}"),
        }
    }

    let link = LinkConfig { loss_prob: 0.1, seed: 7, ..LinkConfig::default() };
    let sent: Vec<(u64, u16)> = (0..1000).map(|i| (i * 10, i as u16)).collect();
    let delivered = link_simulate(sent, link)?;
    let delays: Vec<u64> = delivered.iter().map(|d| d.delivered_ms - d.sent_ms).collect();
    println!(
        "link: {} of 1000 delivered, delay {}..{} ms, mean {:.1} ms",
        delivered.len(),
        delays.iter().min().unwrap_or(&0),
        delays.iter().max().unwrap_or(&0),
        delays.iter().sum::<u64>() as f64 / delays.len().max(1) as f64
    );
    Ok(())
}
