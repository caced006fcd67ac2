//! Telemetry analysis of single trials: simulates noisy IMU and
//! motion-capture streams, extracts the induced responses and compares them
//! with the dose-response model.
//!
//! ```bash
//! cargo run --release --example induced_response
//! ```

use cyborg::dose::{steady_response, Channel, DoseAnchorTable};
use cyborg::dynamics::{run_trial, LaunchState, TrialNoise, TrialProtocol, TrimConfig};
use cyborg::pipeline::{extract_induced, PipelineConfig, Source};
use cyborg::sensors::{sample_imu, sample_mocap, NoiseConfig, DEFAULT_MOCAP_RATE_HZ};
use cyborg::stimulus::{StimCommand, Target};

fn main() -> anyhow::Result<()> {
    let table = DoseAnchorTable::default();
    let cfg = PipelineConfig::default();
    let sensors = NoiseConfig::default();
    print!("{:<6} {:>4} {:<6}", "target", "Hz", "source");
    for ch in Channel::ALL {
        print!(" {:>14}", ch.name());
    }
    println!();
    for target in Target::ALL {
        for freq in [63.0, 100.0] {
            let protocol = TrialProtocol::new(StimCommand::standard(target, freq), 3);
            let mut rec = run_trial(&TrimConfig::default(), &protocol, &table, &TrialNoise::OFF, LaunchState::default(), None)?;
            rec.imu = sample_imu(&rec.truth, &sensors)?;
            rec.mocap = sample_mocap(&rec.truth, &sensors, DEFAULT_MOCAP_RATE_HZ)?;
            let model = steady_response(target, freq, &table)?;
            for source in [Source::Imu, Source::Mocap] {
                let e = extract_induced(&rec, source, &cfg)?;
                print!("{:<6} {:>4} {:<6}", target.name(), freq, format!("{source:?}").to_lowercase());
                for ch in Channel::ALL {
                    print!(" {:>6.2} ({:>5.2})", e.response.get(ch), model.get(ch));
                }
                println!("{}", if e.excluded { "  excluded" } else { "" });
            }
        }
    }
    println!("values in parentheses: model response");
    Ok(())
}
