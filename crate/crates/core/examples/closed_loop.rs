//! Closed-loop control: altitude hold against a sinking disturbance and
//! braking to a target ground speed, each against the open-loop run.
//!
//! ```bash
//! cargo run --release --example closed_loop
//! ```

use cyborg::controller::{run_closed_loop, ClosedLoopConfig, ControlGoal};
use cyborg::geometry::Vec3;

fn main() -> anyhow::Result<()> {
    let hold = ClosedLoopConfig::default();
    let on = run_closed_loop(&hold)?;
    let off = run_closed_loop(&ClosedLoopConfig { enabled: false, ..hold.clone() })?;
    println!("altitude hold at {} m, sink {} m/s^2", hold.goal.target, -hold.disturbance.z);
    println!("  controlled   RMS error {:.3} m, {} trains", on.rms_error, on.commands);
    println!("  uncontrolled RMS error {:.3} m", off.rms_error);
    println!("{:>6} {:>9} {:>9}", "t_s", "z_on", "z_off");
    for (a, b) in on.trace.iter().zip(&off.trace).step_by(200) {
        println!("{:>6.1} {:>9.3} {:>9.3}", a.0 / 1000.0, a.1, b.1);
    }

    for target in [1.2, 1.5] {
        let cfg = ClosedLoopConfig { goal: ControlGoal::brake(target), disturbance: Vec3::ZERO, ..ClosedLoopConfig::default() };
        let r = run_closed_loop(&cfg)?;
        println!("brake to {target} m/s: terminal {:.3} m/s after {} trains", r.terminal_mean, r.commands);
    }
    Ok(())
}
