//! One stimulation trial: pulse train, muscle activation and the flight
//! response of a noise-free beetle, printed every 50 ms.
//!
//! ```bash
//! cargo run --release --example flight_trial -- both 100
//! ```

use cyborg::dose::{steady_response, DoseAnchorTable};
use cyborg::dynamics::{run_trial, LaunchState, TrialNoise, TrialProtocol, TrimConfig};
use cyborg::geometry::quat_to_euler;
use cyborg::stimulus::{build_pulse_train, StimCommand, Target};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let target = match args.next().as_deref() {
        Some("left") => Target::Left,
        Some("right") => Target::Right,
        _ => Target::Both,
    };
    let freq: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100.0);

    let cmd = StimCommand::standard(target, freq);
    let train = build_pulse_train(&cmd)?;
    println!("{target} at {freq} Hz: {} pulses of {} ms over {} ms", train.onsets_ms.len(), cmd.pulse_width_ms, cmd.duration_ms);
    let table = DoseAnchorTable::default();
    println!("model response: {:?}", steady_response(target, freq, &table)?);

    let rec = run_trial(&TrimConfig::default(), &TrialProtocol::new(cmd, 1), &table, &TrialNoise::OFF, LaunchState::default(), None)?;
    println!("{:>6} {:>6} {:>6} {:>7} {:>7} {:>7} {:>6} {:>6}", "t_ms", "act_l", "act_r", "yaw", "pitch", "roll", "speed", "z");
    for s in rec.truth.iter().step_by(50) {
        let e = quat_to_euler(s.attitude).angles;
        let speed = (s.velocity.x.powi(2) + s.velocity.y.powi(2)).sqrt();
        println!(
            "{:>6.0} {:>6.3} {:>6.3} {:>7.2} {:>7.2} {:>7.2} {:>6.3} {:>6.3}",
            s.t_ms - rec.meta.stim_onset_ms, s.act_l, s.act_r, e.yaw, e.pitch, e.roll, speed, s.position.z
        );
    }
    Ok(())
}
