//! Emulated IMU and motion-capture observations of a ground-truth flight.
//!
//! The IMU reports specific force in the body frame (gravity reaction
//! included), body rates and an on-chip fused orientation. On-chip fusion is
//! emulated as truth plus a small random rotation. Channel noise is AR(1)
//! with coefficient 0.5 per 10 ms sample, scaled so its stationary spread is
//! the configured σ.

use crate::dynamics::TruthSample;
use crate::geometry::{UnitQuat, Vec3, GRAVITY};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

pub const IMU_RATE_HZ: f64 = 100.0;
pub const IMU_PERIOD_MS: f64 = 10.0;
pub const DEFAULT_MOCAP_RATE_HZ: f64 = 200.0;
const AR_COEFF: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("requested {requested} Hz exceeds the {available} Hz truth rate")]
    RateTooHigh { requested: f64, available: f64 },
    #[error("rate must be positive")]
    BadRate,
    #[error("noise σ must be finite and non-negative")]
    BadNoise,
    #[error("truth series needs at least two samples at ≥ 1 kHz")]
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t_ms: f64,
    /// Specific force, body frame, m/s².
    pub accel: Vec3,
    /// Body rates, deg/s.
    pub gyro: Vec3,
    /// Body → level frame.
    pub orientation: UnitQuat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MocapSample {
    pub t_ms: f64,
    /// World frame, m.
    pub position: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub accel_sigma: f64,
    pub gyro_sigma: f64,
    pub orientation_sigma_deg: f64,
    /// m.
    pub mocap_sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self { accel_sigma: 0.0, gyro_sigma: 0.0, orientation_sigma_deg: 0.0, mocap_sigma: 0.0, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let all = [self.accel_sigma, self.gyro_sigma, self.orientation_sigma_deg, self.mocap_sigma];
        if all.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(SensorError::BadNoise)
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { accel_sigma: 0.2, gyro_sigma: 2.0, orientation_sigma_deg: 1.0, mocap_sigma: 0.001, seed: 0 }
    }
}

/// Specific force seen by a body-fixed accelerometer.
pub fn specific_force(world_accel: Vec3, attitude: UnitQuat) -> Vec3 {
    let a_level = world_accel.world_to_level();
    let gravity_level = Vec3::new(0.0, 0.0, GRAVITY);
    attitude.inverse_rotate(a_level - gravity_level)
}

/// World acceleration recovered from a specific-force reading.
pub fn world_accel_from_specific_force(f_body: Vec3, attitude: UnitQuat) -> Vec3 {
    (attitude.rotate(f_body) + Vec3::new(0.0, 0.0, GRAVITY)).level_to_world()
}

/// AR(1) noise source per channel.
#[derive(Debug, Clone)]
struct Ar1 {
    state: [f64; 3],
    sigma: f64,
}

impl Ar1 {
    fn new(sigma: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut state = [0.0; 3];
        for s in &mut state {
            let z: f64 = StandardNormal.sample(rng);
            *s = sigma * z;
        }
        Self { state, sigma }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec3 {
        let innov = self.sigma * (1.0 - AR_COEFF * AR_COEFF).sqrt();
        for s in &mut self.state {
            let z: f64 = StandardNormal.sample(rng);
            *s = AR_COEFF * *s + innov * z;
        }
        Vec3::from_array(self.state)
    }
}

/// Streaming IMU for live sessions: feed truth every 10 ms.
#[derive(Debug, Clone)]
pub struct ImuEmulator {
    noise: NoiseConfig,
    rng: ChaCha8Rng,
    accel: Ar1,
    gyro: Ar1,
}

impl ImuEmulator {
    pub fn new(noise: NoiseConfig) -> Result<Self, SensorError> {
        noise.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ 0x494D_5500);
        let accel = Ar1::new(noise.accel_sigma, &mut rng);
        let gyro = Ar1::new(noise.gyro_sigma, &mut rng);
        Ok(Self { noise, rng, accel, gyro })
    }

    /// One IMU reading from the true state and world acceleration.
    pub fn observe(&mut self, t_ms: f64, attitude: UnitQuat, world_accel: Vec3, body_rates: Vec3) -> ImuSample {
        let mut accel = specific_force(world_accel, attitude);
        let mut gyro = body_rates;
        let mut orientation = attitude;
        if self.noise.accel_sigma > 0.0 {
            accel += self.accel.next(&mut self.rng);
        }
        if self.noise.gyro_sigma > 0.0 {
            gyro += self.gyro.next(&mut self.rng);
        }
        if self.noise.orientation_sigma_deg > 0.0 {
            let per_axis = self.noise.orientation_sigma_deg.to_radians() / 3f64.sqrt();
            let n = Normal::new(0.0, per_axis).expect("finite σ");
            let rv = Vec3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng));
            orientation = attitude.mul(UnitQuat::from_rotation_vector(rv)).renormalize();
        }
        ImuSample { t_ms, accel, gyro, orientation }
    }
}

fn check_truth(truth: &[TruthSample]) -> Result<f64, SensorError> {
    if truth.len() < 2 {
        return Err(SensorError::Truth);
    }
    let dt = truth[1].t_ms - truth[0].t_ms;
    if !(dt > 0.0 && dt <= 1.0 + 1e-9) {
        return Err(SensorError::Truth);
    }
    Ok(dt)
}

/// World acceleration at each truth sample, by forward difference of
/// velocity (exact for the semi-implicit integrator); the last sample
/// repeats the previous value.
pub fn truth_accelerations(truth: &[TruthSample]) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = truth
        .windows(2)
        .map(|w| (w[1].velocity - w[0].velocity) * (1000.0 / (w[1].t_ms - w[0].t_ms)))
        .collect();
    if let Some(&last) = out.last() {
        out.push(last);
    }
    out
}

/// Body rate carrying attitude `a` to `b` over `dt_ms`, deg/s.
pub fn body_rate_between(a: UnitQuat, b: UnitQuat, dt_ms: f64) -> Vec3 {
    let dq = a.conjugate().mul(b);
    let dq = if dq.w < 0.0 { UnitQuat { w: -dq.w, x: -dq.x, y: -dq.y, z: -dq.z } } else { dq };
    let v = Vec3::new(dq.x, dq.y, dq.z);
    let s = v.norm();
    let angle = 2.0 * s.atan2(dq.w);
    let axis = if s > 1e-15 { v * (1.0 / s) } else { Vec3::ZERO };
    axis * (angle.to_degrees() * 1000.0 / dt_ms)
}

/// Body rates at each truth sample from consecutive attitudes (deg/s).
fn truth_body_rates(truth: &[TruthSample]) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = truth
        .windows(2)
        .map(|w| body_rate_between(w[0].attitude, w[1].attitude, w[1].t_ms - w[0].t_ms))
        .collect();
    if let Some(&last) = out.last() {
        out.push(last);
    }
    out
}

/// IMU series at 100 Hz from a ≥ 1 kHz truth series.
pub fn sample_imu(truth: &[TruthSample], noise: &NoiseConfig) -> Result<Vec<ImuSample>, SensorError> {
    let dt = check_truth(truth)?;
    let stride = (IMU_PERIOD_MS / dt).round() as usize;
    let accel = truth_accelerations(truth);
    let rates = truth_body_rates(truth);
    let mut emu = ImuEmulator::new(*noise)?;
    Ok((0..truth.len())
        .step_by(stride)
        .map(|i| emu.observe(truth[i].t_ms, truth[i].attitude, accel[i], rates[i]))
        .collect())
}

/// Motion-capture positions at `rate_hz`, linearly interpolated from truth.
pub fn sample_mocap(truth: &[TruthSample], noise: &NoiseConfig, rate_hz: f64) -> Result<Vec<MocapSample>, SensorError> {
    let dt = check_truth(truth)?;
    if !(rate_hz > 0.0) {
        return Err(SensorError::BadRate);
    }
    let available = 1000.0 / dt;
    if rate_hz > available + 1e-9 {
        return Err(SensorError::RateTooHigh { requested: rate_hz, available });
    }
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ 0x4D4F_4341);
    let n = Normal::new(0.0, noise.mocap_sigma).expect("finite σ");
    let period = 1000.0 / rate_hz;
    let (t0, t_end) = (truth[0].t_ms, truth[truth.len() - 1].t_ms);
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t = t0 + k as f64 * period;
        if t > t_end + 1e-9 {
            break;
        }
        let x = (t - t0) / dt;
        let i = (x.floor() as usize).min(truth.len() - 2);
        let frac = x - i as f64;
        let (a, b) = (truth[i].position, truth[i + 1].position);
        let mut p = a + (b - a) * frac;
        if noise.mocap_sigma > 0.0 {
            p += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
        }
        out.push(MocapSample { t_ms: t, position: p });
        k += 1;
    }
    Ok(out)
}

pub fn write_imu_csv<W: Write>(samples: &[ImuSample], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_ms", "ax", "ay", "az", "gx", "gy", "gz", "qw", "qx", "qy", "qz"])?;
    for s in samples {
        let q = s.orientation;
        let row = [s.t_ms, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z, q.w, q.x, q.y, q.z];
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mocap_csv<W: Write>(samples: &[MocapSample], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_ms", "px", "py", "pz"])?;
    for s in samples {
        let row = [s.t_ms, s.position.x, s.position.y, s.position.z];
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_rows<R: std::io::Read>(input: R, width: usize) -> Result<Vec<Vec<f64>>, String> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.len() != width {
            return Err(format!("expected {width} columns, got {}", rec.len()));
        }
        let row: Result<Vec<f64>, _> = rec.iter().map(|v| v.parse::<f64>()).collect();
        rows.push(row.map_err(|e| e.to_string())?);
    }
    Ok(rows)
}

pub fn read_imu_csv<R: std::io::Read>(input: R) -> Result<Vec<ImuSample>, String> {
    parse_rows(input, 11)?
        .into_iter()
        .map(|r| {
            Ok(ImuSample {
                t_ms: r[0],
                accel: Vec3::new(r[1], r[2], r[3]),
                gyro: Vec3::new(r[4], r[5], r[6]),
                orientation: UnitQuat::new_normalize(r[7], r[8], r[9], r[10])
                    .ok_or_else(|| "degenerate quaternion".to_string())?,
            })
        })
        .collect()
}

pub fn read_mocap_csv<R: std::io::Read>(input: R) -> Result<Vec<MocapSample>, String> {
    Ok(parse_rows(input, 4)?
        .into_iter()
        .map(|r| MocapSample { t_ms: r[0], position: Vec3::new(r[1], r[2], r[3]) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{euler_to_quat, EulerBody};

    fn hover(n: usize) -> Vec<TruthSample> {
        (0..n)
            .map(|i| TruthSample {
                t_ms: i as f64,
                position: Vec3::new(1.0, 2.0, 3.0),
                velocity: Vec3::ZERO,
                attitude: UnitQuat::IDENTITY,
                act_l: 0.0,
                act_r: 0.0,
                stim_on: false,
            })
            .collect()
    }

    #[test]
    fn hovering_reads_minus_g() {
        let imu = sample_imu(&hover(101), &NoiseConfig::off()).unwrap();
        assert_eq!(imu.len(), 11);
        for s in &imu {
            assert!((s.accel - Vec3::new(0.0, 0.0, -GRAVITY)).norm() < 1e-12);
            assert_eq!(s.gyro, Vec3::ZERO);
            assert_eq!(s.orientation, UnitQuat::IDENTITY);
        }
        for w in imu.windows(2) {
            assert_eq!(w[1].t_ms - w[0].t_ms, 10.0);
        }
    }

    #[test]
    fn constant_acceleration_matches_rotation_oracle() {
        let att = euler_to_quat(EulerBody::new(30.0, 12.0, -8.0));
        let a = Vec3::new(0.4, -1.1, 0.7);
        let truth: Vec<TruthSample> = (0..50)
            .map(|i| TruthSample {
                t_ms: i as f64,
                position: Vec3::ZERO,
                velocity: a * (i as f64 / 1000.0),
                attitude: att,
                act_l: 0.0,
                act_r: 0.0,
                stim_on: false,
            })
            .collect();
        let imu = sample_imu(&truth, &NoiseConfig::off()).unwrap();
        // oracle: R^T (a_level − g_level) with an explicit matrix
        let m = att.to_matrix();
        let d = Vec3::new(a.x, -a.y, -a.z - GRAVITY);
        let expect = Vec3::new(
            m[0][0] * d.x + m[1][0] * d.y + m[2][0] * d.z,
            m[0][1] * d.x + m[1][1] * d.y + m[2][1] * d.z,
            m[0][2] * d.x + m[1][2] * d.y + m[2][2] * d.z,
        );
        for s in &imu {
            assert!((s.accel - expect).norm() < 1e-9);
            assert!((world_accel_from_specific_force(s.accel, att) - a).norm() < 1e-9);
        }
    }

    #[test]
    fn imu_noise_is_seeded_and_ar1() {
        let noise = NoiseConfig { accel_sigma: 0.2, gyro_sigma: 0.0, orientation_sigma_deg: 0.0, mocap_sigma: 0.0, seed: 9 };
        let truth = hover(200_001);
        let a = sample_imu(&truth, &noise).unwrap();
        assert_eq!(a, sample_imu(&truth, &noise).unwrap());
        let x: Vec<f64> = a.iter().map(|s| s.accel.x).collect();
        let n = x.len() as f64;
        let var = x.iter().map(|v| v * v).sum::<f64>() / n;
        let lag1 = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 0.2).abs() < 0.01);
        assert!((lag1 / var - 0.5).abs() < 0.03);
    }

    #[test]
    fn orientation_noise_magnitude() {
        let noise = NoiseConfig { accel_sigma: 0.0, gyro_sigma: 0.0, orientation_sigma_deg: 1.0, mocap_sigma: 0.0, seed: 4 };
        let imu = sample_imu(&hover(100_001), &noise).unwrap();
        let ms = imu.iter().map(|s| s.orientation.angle_to_deg(UnitQuat::IDENTITY).powi(2)).sum::<f64>() / imu.len() as f64;
        assert!((ms.sqrt() - 1.0).abs() < 0.05, "rms {}", ms.sqrt());
    }

    #[test]
    fn mocap_exact_decimation_and_noise_level() {
        let mut truth = hover(10_001);
        for (i, s) in truth.iter_mut().enumerate() {
            s.position = Vec3::new(i as f64 * 0.002, 1.0, 2.0);
        }
        let m = sample_mocap(&truth, &NoiseConfig::off(), 200.0).unwrap();
        assert_eq!(m.len(), 2001);
        for s in &m {
            assert_eq!(s.position, truth[s.t_ms as usize].position);
        }
        let noisy = NoiseConfig { mocap_sigma: 0.001, seed: 2, ..NoiseConfig::off() };
        let m = sample_mocap(&truth, &noisy, 1000.0).unwrap();
        let err: Vec<f64> = m.iter().map(|s| s.position.y - 1.0).collect();
        let sd = (err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64).sqrt();
        assert!((0.0009..=0.0011).contains(&sd), "{sd}");
        assert!(matches!(sample_mocap(&truth, &noisy, 2000.0), Err(SensorError::RateTooHigh { .. })));
    }

    #[test]
    fn dead_reckoning_recovers_truth() {
        use crate::dose::DoseAnchorTable;
        use crate::dynamics::*;
        use crate::stimulus::{StimCommand, Target};
        let rec = run_trial(
            &TrimConfig::default(),
            &TrialProtocol::new(StimCommand::standard(Target::Left, 90.0), 1),
            &DoseAnchorTable::default(),
            &TrialNoise::OFF,
            LaunchState::default(),
            None,
        )
        .unwrap();
        let truth = &rec.truth[100..400];
        let imu = sample_imu(truth, &NoiseConfig::off()).unwrap();
        let mut v = truth[0].velocity;
        let mut p = truth[0].position;
        for s in &imu {
            let a = world_accel_from_specific_force(s.accel, s.orientation);
            v += a * 0.01;
            p += v * 0.01;
        }
        let end = truth.last().unwrap();
        assert!((v - end.velocity).norm() < 0.02, "{:?} vs {:?}", v, end.velocity);
        assert!((p - end.position).norm() < 0.01);
    }
}
