//! Degree-5 least-squares smoothing of a flight path.

use super::PipelineError;
use crate::geometry::Vec3;
use crate::sensors::MocapSample;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const DEGREE: usize = 5;
pub const MIN_SAMPLES: usize = 12;

/// Per-axis quintic in the normalized time `s = (t − center) / half_span`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyPath {
    /// `coeffs[axis][k]` multiplies `s^k`.
    pub coeffs: [[f64; DEGREE + 1]; 3],
    pub t0_ms: f64,
    pub t1_ms: f64,
    /// RMS distance between samples and fit, m.
    pub residual_rms: f64,
}

impl PolyPath {
    fn center(&self) -> f64 {
        0.5 * (self.t0_ms + self.t1_ms)
    }

    fn half_span_s(&self) -> f64 {
        0.5 * (self.t1_ms - self.t0_ms) / 1000.0
    }

    fn s(&self, t_ms: f64) -> f64 {
        (t_ms - self.center()) / (0.5 * (self.t1_ms - self.t0_ms))
    }

    fn eval_deriv(&self, t_ms: f64, order: u32) -> Vec3 {
        let s = self.s(t_ms);
        let mut out = [0.0; 3];
        for (axis, c) in self.coeffs.iter().enumerate() {
            // Horner on the differentiated polynomial
            let mut acc = 0.0;
            for k in (order as usize..=DEGREE).rev() {
                let falling: f64 = (0..order).map(|j| (k - j as usize) as f64).product();
                acc = acc * s + c[k] * falling;
            }
            out[axis] = acc;
        }
        Vec3::from_array(out) * self.half_span_s().powi(-(order as i32))
    }

    /// Position, m.
    pub fn position(&self, t_ms: f64) -> Vec3 {
        self.eval_deriv(t_ms, 0)
    }

    /// Velocity, m/s.
    pub fn velocity(&self, t_ms: f64) -> Vec3 {
        self.eval_deriv(t_ms, 1)
    }

    /// Acceleration, m/s².
    pub fn acceleration(&self, t_ms: f64) -> Vec3 {
        self.eval_deriv(t_ms, 2)
    }

    pub fn contains(&self, t_ms: f64) -> bool {
        (self.t0_ms..=self.t1_ms).contains(&t_ms)
    }
}

/// Fits each axis independently over the sample time span (QR least squares).
pub fn fit_poly_path(samples: &[MocapSample]) -> Result<PolyPath, PipelineError> {
    if samples.len() < MIN_SAMPLES {
        return Err(PipelineError::TooFewSamples { need: MIN_SAMPLES, got: samples.len() });
    }
    let (mut t0, mut t1) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in samples {
        if !(s.t_ms.is_finite() && s.position.is_finite()) {
            return Err(PipelineError::NonFinite);
        }
        t0 = t0.min(s.t_ms);
        t1 = t1.max(s.t_ms);
    }
    if !(t1 > t0) {
        return Err(PipelineError::RankDeficient);
    }
    let mut path = PolyPath { coeffs: [[0.0; DEGREE + 1]; 3], t0_ms: t0, t1_ms: t1, residual_rms: 0.0 };
    let n = samples.len();
    let design = DMatrix::from_fn(n, DEGREE + 1, |i, k| path.s(samples[i].t_ms).powi(k as i32));
    let qr = design.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let scale = r.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale) {
        return Err(PipelineError::RankDeficient);
    }
    let mut sq = 0.0;
    for axis in 0..3 {
        let y = DVector::from_fn(n, |i, _| samples[i].position.to_array()[axis]);
        let c = r.solve_upper_triangular(&(q.transpose() * &y)).ok_or(PipelineError::RankDeficient)?;
        sq += (&design * &c - &y).norm_squared();
        path.coeffs[axis].copy_from_slice(c.as_slice());
    }
    path.residual_rms = (sq / n as f64).sqrt();
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn quintic(t_s: f64) -> Vec3 {
        Vec3::new(
            1.0 + 2.0 * t_s - 0.5 * t_s.powi(2) + 0.3 * t_s.powi(3) - 0.2 * t_s.powi(4) + 0.1 * t_s.powi(5),
            4.0 - 0.1 * t_s + 0.7 * t_s.powi(3),
            2.0 + 0.05 * t_s.powi(2) - 0.4 * t_s.powi(5),
        )
    }

    fn quintic_accel(t_s: f64) -> Vec3 {
        Vec3::new(
            -1.0 + 1.8 * t_s - 2.4 * t_s.powi(2) + 2.0 * t_s.powi(3),
            4.2 * t_s,
            0.1 - 8.0 * t_s.powi(3),
        )
    }

    fn samples(f: impl Fn(f64) -> Vec3, n: usize, dt_ms: f64) -> Vec<MocapSample> {
        (0..n).map(|i| {
            let t = 100.0 + i as f64 * dt_ms;
            MocapSample { t_ms: t, position: f(t / 1000.0) }
        })
        .collect()
    }

    #[test]
    fn exact_quintic_is_recovered() {
        let path = fit_poly_path(&samples(quintic, 131, 5.0)).unwrap();
        assert!(path.residual_rms < 1e-9);
        for t in [100.0, 333.3, 750.0] {
            assert!((path.position(t) - quintic(t / 1000.0)).norm() < 1e-9);
            assert!((path.acceleration(t) - quintic_accel(t / 1000.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn constant_acceleration_is_exact() {
        let a = Vec3::new(0.3, -1.4, 0.6);
        let path = fit_poly_path(&samples(|t| Vec3::new(1.0, 2.0, 3.0) + Vec3::new(2.0, 0.0, 0.0) * t + a * (0.5 * t * t), 131, 5.0)).unwrap();
        for t in [100.0, 400.0, 750.0] {
            assert!((path.acceleration(t) - a).norm() < 1e-9);
            assert!((path.velocity(t) - (Vec3::new(2.0, 0.0, 0.0) + a * (t / 1000.0))).norm() < 1e-9);
        }
    }

    #[test]
    fn noisy_fit_matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.001).unwrap();
        let mut s = samples(quintic, 131, 5.0);
        for p in &mut s {
            p.position += Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        }
        let path = fit_poly_path(&s).unwrap();
        // oracle: raw seconds, normal equations solved by Gaussian elimination
        let oracle = |axis: usize| -> [f64; 6] {
            let mut m = [[0.0f64; 7]; 6];
            for p in &s {
                let t = p.t_ms / 1000.0 - 0.425;
                let y = p.position.to_array()[axis];
                for r in 0..6 {
                    for c in 0..6 {
                        m[r][c] += t.powi((r + c) as i32);
                    }
                    m[r][6] += t.powi(r as i32) * y;
                }
            }
            for col in 0..6 {
                let piv = (col..6).max_by(|a, b| m[*a][col].abs().total_cmp(&m[*b][col].abs())).unwrap();
                m.swap(col, piv);
                for r in 0..6 {
                    if r != col {
                        let f = m[r][col] / m[col][col];
                        for c in col..7 {
                            m[r][c] -= f * m[col][c];
                        }
                    }
                }
            }
            std::array::from_fn(|k| m[k][6] / m[k][k])
        };
        let coeffs: Vec<[f64; 6]> = (0..3).map(oracle).collect();
        let oracle_acc = |t_ms: f64| {
            let t = t_ms / 1000.0 - 0.425;
            Vec3::from_array(std::array::from_fn(|a| (2..6).map(|k| coeffs[a][k] * (k * (k - 1)) as f64 * t.powi(k as i32 - 2)).sum()))
        };
        let mut rms_fit = 0.0;
        let mut rms_oracle = 0.0;
        for p in &s {
            let truth = quintic_accel(p.t_ms / 1000.0);
            rms_fit += (path.acceleration(p.t_ms) - truth).norm().powi(2);
            rms_oracle += (oracle_acc(p.t_ms) - truth).norm().powi(2);
            assert!((path.acceleration(p.t_ms) - oracle_acc(p.t_ms)).norm() < 1e-5);
        }
        let n = s.len() as f64;
        assert!(((rms_fit / n).sqrt() - (rms_oracle / n).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn degenerate_inputs() {
        let mut s = samples(quintic, 20, 5.0);
        for p in &mut s {
            p.t_ms = 100.0;
        }
        assert_eq!(fit_poly_path(&s), Err(PipelineError::RankDeficient));
        // only three distinct timestamps
        let s: Vec<MocapSample> = (0..15).map(|i| MocapSample { t_ms: (i % 3) as f64, position: Vec3::ZERO }).collect();
        assert_eq!(fit_poly_path(&s), Err(PipelineError::RankDeficient));
        assert!(matches!(fit_poly_path(&samples(quintic, 5, 5.0)), Err(PipelineError::TooFewSamples { .. })));
    }
}
