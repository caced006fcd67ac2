//! Butterworth low-pass as cascaded second-order sections.
//!
//! Analog prototype poles are pre-warped to the cutoff and mapped by the
//! bilinear transform. Odd orders end with a first-order section.

use super::PipelineError;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_CUTOFF_HZ: f64 = 20.0;

/// `y = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²) x`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state for a constant input `x`.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        let s1 = self.b[2] * x - self.a[1] * y;
        [self.b[1] * x - self.a[0] * y + s1, s1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterInit {
    /// Zero initial state.
    Zero,
    /// State at rest under the first input sample.
    Steady,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Butterworth {
    pub order: usize,
    pub cutoff_hz: f64,
    pub fs_hz: f64,
    pub sections: Vec<Section>,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<Self, PipelineError> {
        if order == 0 || !(fs_hz > 0.0) || !(cutoff_hz > 0.0) || cutoff_hz >= fs_hz / 2.0 {
            return Err(PipelineError::Cutoff { cutoff_hz, fs_hz });
        }
        let k = 2.0 * fs_hz;
        let wa = k * (PI * cutoff_hz / fs_hz).tan();
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for i in 0..order / 2 {
            // conjugate pole pair at angle θ from the negative real axis
            let theta = PI * (order - 2 * i - 1) as f64 / (2 * order) as f64;
            let re = -wa * theta.cos();
            let mag2 = wa * wa;
            let a0 = k * k - 2.0 * re * k + mag2;
            sections.push(Section {
                b: [mag2 / a0, 2.0 * mag2 / a0, mag2 / a0],
                a: [2.0 * (mag2 - k * k) / a0, (k * k + 2.0 * re * k + mag2) / a0],
            });
        }
        if order % 2 == 1 {
            let a0 = k + wa;
            sections.push(Section { b: [wa / a0, wa / a0, 0.0], a: [(wa - k) / a0, 0.0] });
        }
        Ok(Self { order, cutoff_hz, fs_hz, sections })
    }

    /// The 5th-order, 20 Hz design.
    pub fn default_at(fs_hz: f64) -> Result<Self, PipelineError> {
        Self::lowpass(DEFAULT_ORDER, DEFAULT_CUTOFF_HZ, fs_hz)
    }

    /// Causal single pass.
    pub fn filter(&self, x: &[f64], init: FilterInit) -> Vec<f64> {
        let mut y = x.to_vec();
        for sec in &self.sections {
            let mut s = match (init, y.first()) {
                (FilterInit::Steady, Some(&x0)) => sec.steady_state(x0),
                _ => [0.0; 2],
            };
            for v in y.iter_mut() {
                let xin = *v;
                let out = sec.b[0] * xin + s[0];
                s[0] = sec.b[1] * xin - sec.a[0] * out + s[1];
                s[1] = sec.b[2] * xin - sec.a[1] * out;
                *v = out;
            }
        }
        y
    }

    /// Forward-backward pass with zero phase and squared magnitude.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.filter(x, FilterInit::Steady);
        y.reverse();
        let mut y = self.filter(&y, FilterInit::Steady);
        y.reverse();
        y
    }

    /// |H(e^{jω})| of the digital filter at `f_hz`.
    pub fn magnitude(&self, f_hz: f64) -> f64 {
        let w = 2.0 * PI * f_hz / self.fs_hz;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        self.sections
            .iter()
            .map(|sec| {
                let num = (sec.b[0] + sec.b[1] * c1 + sec.b[2] * c2).hypot(sec.b[1] * s1 + sec.b[2] * s2);
                let den = (1.0 + sec.a[0] * c1 + sec.a[1] * c2).hypot(sec.a[0] * s1 + sec.a[1] * s2);
                num / den
            })
            .product()
    }
}

/// The 5th-order 20 Hz low-pass applied causally from rest.
pub fn butterworth_lowpass(x: &[f64], fs_hz: f64, zero_phase: bool) -> Result<Vec<f64>, PipelineError> {
    let f = Butterworth::default_at(fs_hz)?;
    Ok(if zero_phase { f.filtfilt(x) } else { f.filter(x, FilterInit::Steady) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine_gain(f: &Butterworth, freq: f64) -> f64 {
        let n = 4000;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * freq * i as f64 / f.fs_hz).sin()).collect();
        let y = f.filter(&x, FilterInit::Zero);
        let tail = &y[n / 2..];
        // amplitude from RMS of the settled output
        (2.0 * tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt()
    }

    /// Analog prototype evaluated at the pre-warped frequency.
    fn prewarped_oracle(order: usize, fc: f64, fs: f64, f: f64) -> f64 {
        let warp = |x: f64| (PI * x / fs).tan();
        1.0 / (1.0 + (warp(f) / warp(fc)).powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn structure_and_dc_gain() {
        let f = Butterworth::default_at(100.0).unwrap();
        assert_eq!(f.sections.len(), 3);
        assert_eq!(f.sections[2].b[2], 0.0);
        let y = f.filter(&[3.7; 500], FilterInit::Zero);
        assert!((y[499] - 3.7).abs() < 1e-9);
        let y = f.filter(&[3.7; 50], FilterInit::Steady);
        assert!(y.iter().all(|v| (v - 3.7).abs() < 1e-9));
        assert!((f.magnitude(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_power_at_cutoff() {
        let f = Butterworth::default_at(100.0).unwrap();
        let g = sine_gain(&f, 20.0);
        assert!((g / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() < 0.02, "{g}");
    }

    #[test]
    fn stopband_matches_prewarped_oracle() {
        let f = Butterworth::default_at(100.0).unwrap();
        let oracle = prewarped_oracle(5, 20.0, 100.0, 40.0);
        let g = sine_gain(&f, 40.0);
        assert!((20.0 * (g / oracle).log10()).abs() < 1.0, "{g} vs {oracle}");
        assert!((f.magnitude(40.0) / oracle - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_phase_has_no_lag() {
        let f = Butterworth::default_at(100.0).unwrap();
        let x: Vec<f64> = (0..400).map(|i| (2.0 * PI * 3.0 * i as f64 / 100.0).sin()).collect();
        let y = f.filtfilt(&x);
        for i in 100..300 {
            assert!((y[i] - x[i]).abs() < 0.01);
        }
        assert!(matches!(Butterworth::lowpass(5, 50.0, 100.0), Err(PipelineError::Cutoff { .. })));
    }

    proptest! {
        #[test]
        fn impulse_decays(order in 1usize..=8, fc in 10.0..40.0f64) {
            let f = Butterworth::lowpass(order, fc, 100.0).unwrap();
            // 2 s at 100 Hz
            let mut x = vec![0.0; 400];
            x[0] = 1.0;
            let y = f.filter(&x, FilterInit::Zero);
            let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(y[200..].iter().all(|v| v.abs() < 1e-9 * peak));
        }
    }
}
