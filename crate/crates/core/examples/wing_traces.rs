//! Tethered wingbeat traces: synthesizes baseline and stimulated cycles,
//! round-trips them through three-marker reconstruction and prints the
//! change in each wing angle across the stroke.
//!
//! ```bash
//! cargo run --release --example wing_traces
//! ```

use cyborg::geometry::Vec3;
use cyborg::wing::{
    markers_from_pose, mean_trace, normalize_cycles, poses_from_markers, synthesize_trace, Condition, MarkerRow,
    StrokeFrame, WingTemplate, DEFAULT_TILT_DEG,
};

fn main() -> anyhow::Result<()> {
    let tpl = WingTemplate::default();
    let frame = StrokeFrame::from_body(Vec3::ZERO, Vec3::X, Vec3::Z, DEFAULT_TILT_DEG)?;
    let period_ms = 11.0;
    let mut means = Vec::new();
    for condition in [Condition::Baseline, Condition::Stimulated] {
        // five wingbeats of markers sampled at 10 kHz
        let rows: Vec<MarkerRow> = (0..550)
            .map(|i| {
                let t_ms = i as f64 * 0.1;
                let pose = tpl.pose(360.0 * t_ms / period_ms, condition);
                Ok(MarkerRow { t_ms, markers: markers_from_pose(pose, &frame, 0.03, 0.01)? })
            })
            .collect::<Result<_, cyborg::wing::WingError>>()?;
        let (poses, t) = poses_from_markers(&rows, &frame)?;
        let cycles = normalize_cycles(&poses, &t)?;
        println!("{condition:?}: {} complete cycles, period {:.2} ms", cycles.len(), cycles[0].period_ms);
        means.push(mean_trace(&cycles).expect("at least one cycle"));
    }
    let truth = synthesize_trace(Condition::Stimulated, &tpl, period_ms);
    println!("{:>6} {:>8} {:>8} {:>8} {:>10}", "phase", "d_phi", "d_theta", "d_alpha", "alpha_fit");
    for i in (0..360).step_by(20) {
        let (b, s) = (means[0].samples[i], means[1].samples[i]);
        println!(
            "{:>6.0} {:>8.2} {:>8.2} {:>8.2} {:>10.2}",
            means[1].phase_deg(i), s.phi - b.phi, s.theta - b.theta, s.alpha - b.alpha, s.alpha - truth.samples[i].alpha
        );
    }
    Ok(())
}
