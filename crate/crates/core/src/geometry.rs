//! Frames, vectors, quaternions and angle conventions.
//!
//! World frame: X east, Y north, Z up (arena coordinates).
//! Body frame: X forward (head), Y right, Z down.
//!
//! Attitude quaternions map body vectors into the *level frame*, a Z-down
//! companion of the world frame with axes (east, south, down). Under this
//! convention positive yaw turns the nose to the right, positive pitch
//! raises the nose and positive roll lowers the right wing. Converting a
//! level-frame vector to world coordinates flips the Y and Z components.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Arena dimensions in metres (X, Y, Z).
pub const ARENA_SIZE_M: [f64; 3] = [12.0, 8.0, 4.0];

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.80665;

/// Pitch within this distance of ±90° is treated as gimbal lock.
pub const GIMBAL_MARGIN_DEG: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 1e-12 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    /// Level frame (east, south, down) to world (east, north, up).
    pub fn level_to_world(self) -> Vec3 {
        Vec3::new(self.x, -self.y, -self.z)
    }

    /// World (east, north, up) to level frame (east, south, down).
    pub fn world_to_level(self) -> Vec3 {
        // the flip is an involution
        self.level_to_world()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Unit quaternion, scalar first. Kept normalized at every constructor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes the raw components. Returns `None` for a zero or non-finite input.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 1e-12) {
            return None;
        }
        Some(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    /// Rotation of `angle_rad` about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle_rad: f64) -> Self {
        match axis.normalized() {
            Some(a) => {
                let (s, c) = (angle_rad * 0.5).sin_cos();
                Self { w: c, x: a.x * s, y: a.y * s, z: a.z * s }
            }
            None => Self::IDENTITY,
        }
    }

    /// Rotation vector (axis times angle, radians) to quaternion.
    pub fn from_rotation_vector(v: Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-15 {
            return Self::IDENTITY;
        }
        Self::from_axis_angle(v, angle)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn renormalize(self) -> Self {
        Self::new_normalize(self.w, self.x, self.y, self.z).unwrap_or(Self::IDENTITY)
    }

    pub fn conjugate(self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Hamilton product `self ⊗ o` (apply `o` first, then `self`).
    pub fn mul(self, o: UnitQuat) -> UnitQuat {
        UnitQuat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    /// Rotates `v` by this quaternion (body → level frame for attitudes).
    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    /// Inverse rotation (level frame → body for attitudes).
    pub fn inverse_rotate(self, v: Vec3) -> Vec3 {
        self.conjugate().rotate(v)
    }

    /// Row-major rotation matrix.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Angle of the rotation taking `self` to `o`, in degrees.
    pub fn angle_to_deg(self, o: UnitQuat) -> f64 {
        let d = (self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z).abs().min(1.0);
        2.0 * d.acos().to_degrees()
    }
}

/// Body attitude as Z-Y-X intrinsic Euler angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerBody {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerBody {
    pub const fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }
}

/// Result of a quaternion decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerDecomposition {
    pub angles: EulerBody,
    /// Pitch is within [`GIMBAL_MARGIN_DEG`] of ±90°; roll was set to 0
    /// and the whole heading attributed to yaw.
    pub gimbal_degenerate: bool,
}

/// Wraps an angle in degrees into (−180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let mut r = a % 360.0;
    if r > 180.0 {
        r -= 360.0;
    } else if r <= -180.0 {
        r += 360.0;
    }
    r
}

/// Z-Y-X decomposition of an attitude quaternion.
pub fn quat_to_euler(q: UnitQuat) -> EulerDecomposition {
    let q = q.renormalize();
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let sin_pitch = (2.0 * (w * y - x * z)).clamp(-1.0, 1.0);
    let pitch = sin_pitch.asin().to_degrees();
    if 90.0 - pitch.abs() < GIMBAL_MARGIN_DEG {
        // only yaw ∓ roll is observable; attribute it to yaw
        let yaw = if pitch > 0.0 {
            -2.0 * x.atan2(w)
        } else {
            2.0 * x.atan2(w)
        };
        return EulerDecomposition {
            angles: EulerBody::new(wrap_deg(yaw.to_degrees()), pitch, 0.0),
            gimbal_degenerate: true,
        };
    }
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    EulerDecomposition {
        angles: EulerBody::new(wrap_deg(yaw.to_degrees()), pitch, wrap_deg(roll.to_degrees())),
        gimbal_degenerate: false,
    }
}

/// Builds `Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn euler_to_quat(e: EulerBody) -> UnitQuat {
    let (sy, cy) = (e.yaw.to_radians() * 0.5).sin_cos();
    let (sp, cp) = (e.pitch.to_radians() * 0.5).sin_cos();
    let (sr, cr) = (e.roll.to_radians() * 0.5).sin_cos();
    UnitQuat {
        w: cr * cp * cy + sr * sp * sy,
        x: sr * cp * cy - cr * sp * sy,
        y: cr * sp * cy + sr * cp * sy,
        z: cr * cp * sy - sr * sp * cy,
    }
    .renormalize()
}

/// Body angular rates (p, q, r) in deg/s from Euler angles and their rates.
pub fn euler_rates_to_body(e: EulerBody, rates: EulerBody) -> Vec3 {
    let (sp, cp) = e.pitch.to_radians().sin_cos();
    let (sr, cr) = e.roll.to_radians().sin_cos();
    Vec3::new(
        rates.roll - rates.yaw * sp,
        rates.pitch * cr + rates.yaw * cp * sr,
        -rates.pitch * sr + rates.yaw * cp * cr,
    )
}

/// Unwraps a sequence of wrapped angles (degrees) into a continuous series.
pub fn unwrap_deg(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &a in series {
        if let Some(p) = prev {
            let d = a - p;
            if d > 180.0 {
                offset -= 360.0;
            } else if d < -180.0 {
                offset += 360.0;
            }
        }
        prev = Some(a);
        out.push(a + offset);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent decomposition straight from the rotation matrix entries.
    fn matrix_oracle(q: UnitQuat) -> EulerBody {
        let m = q.to_matrix();
        let pitch = (-m[2][0]).clamp(-1.0, 1.0).asin();
        let yaw = m[1][0].atan2(m[0][0]);
        let roll = m[2][1].atan2(m[2][2]);
        EulerBody::new(yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees())
    }

    fn random_quat(rng: &mut ChaCha8Rng) -> UnitQuat {
        loop {
            let c: [f64; 4] = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            if let Some(q) = UnitQuat::new_normalize(c[0], c[1], c[2], c[3]) {
                return q;
            }
        }
    }

    fn ang_diff(a: f64, b: f64) -> f64 {
        wrap_deg(a - b).abs()
    }

    #[test]
    fn identity_is_zero_angles() {
        let d = quat_to_euler(UnitQuat::IDENTITY);
        assert_eq!(d.angles, EulerBody::new(0.0, 0.0, 0.0));
        assert!(!d.gimbal_degenerate);
        assert_eq!(euler_to_quat(EulerBody::default()), UnitQuat::IDENTITY);
    }

    #[test]
    fn quarter_turn_about_body_z_is_yaw() {
        let q = UnitQuat::from_axis_angle(Vec3::Z, 90f64.to_radians());
        let e = quat_to_euler(q).angles;
        assert_abs_diff_eq!(e.yaw, 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.pitch, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.roll, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn half_turn_yaw() {
        let q = euler_to_quat(EulerBody::new(180.0, 0.0, 0.0));
        assert_abs_diff_eq!(q.w, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_rotation_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let q = random_quat(&mut rng);
            let d = quat_to_euler(q);
            if d.gimbal_degenerate {
                continue;
            }
            let o = matrix_oracle(q);
            assert!(ang_diff(d.angles.yaw, o.yaw) < 1e-9, "{d:?} {o:?}");
            assert!((d.angles.pitch - o.pitch).abs() < 1e-9);
            assert!(ang_diff(d.angles.roll, o.roll) < 1e-9);
        }
    }

    #[test]
    fn round_trip_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let e = EulerBody::new(
                rng.random_range(-179.9..180.0),
                rng.random_range(-89.0..89.0),
                rng.random_range(-179.9..180.0),
            );
            let back = quat_to_euler(euler_to_quat(e)).angles;
            worst = worst
                .max(ang_diff(back.yaw, e.yaw))
                .max((back.pitch - e.pitch).abs())
                .max(ang_diff(back.roll, e.roll));
        }
        assert!(worst < 1e-8, "worst {worst}");
    }

    #[test]
    fn gimbal_lock_is_flagged() {
        let q = euler_to_quat(EulerBody::new(30.0, 90.0, 0.0));
        let d = quat_to_euler(q);
        assert!(d.gimbal_degenerate);
        assert_eq!(d.angles.roll, 0.0);
        assert_abs_diff_eq!(d.angles.yaw, 30.0, epsilon = 1e-6);
    }

    #[test]
    fn rotation_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            let v = Vec3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let r = q.rotate(v);
            assert!((r.norm() - v.norm()).abs() <= 1e-12 * v.norm().max(1.0));
            let back = q.inverse_rotate(r);
            assert!((back - v).norm() < 1e-12 * v.norm().max(1.0));
        }
    }

    #[test]
    fn sign_conventions() {
        // positive pitch raises the nose: body X gains an upward world component
        let q = euler_to_quat(EulerBody::new(0.0, 20.0, 0.0));
        let nose = q.rotate(Vec3::X).level_to_world();
        assert!(nose.z > 0.0);
        // positive yaw turns the nose right (from east toward south)
        let q = euler_to_quat(EulerBody::new(20.0, 0.0, 0.0));
        let nose = q.rotate(Vec3::X).level_to_world();
        assert!(nose.y < 0.0);
        // positive roll lowers the right wing
        let q = euler_to_quat(EulerBody::new(0.0, 0.0, 20.0));
        let right = q.rotate(Vec3::Y).level_to_world();
        assert!(right.z < 0.0);
    }

    #[test]
    fn unwrap_removes_jumps() {
        let s = [170.0, 179.0, -179.0, -170.0];
        let u = unwrap_deg(&s);
        assert_abs_diff_eq!(u[2], 181.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u[3], 190.0, epsilon = 1e-12);
    }

    #[test]
    fn euler_rates_pure_yaw_level() {
        let w = euler_rates_to_body(EulerBody::default(), EulerBody::new(10.0, 0.0, 0.0));
        assert_abs_diff_eq!(w.z, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.x, 0.0, epsilon = 1e-12);
    }
}
