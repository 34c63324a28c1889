//! Simplified strapdown mechanization in a local NED frame.
//!
//! Earth rate and transport rate are ignored. Each step updates attitude
//! first, then velocity with the new attitude, then position with the new
//! velocity.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::linalg::{nearest_rotation, rotation_from_euler, skew};

/// Standard gravity, NED (down positive).
pub const GRAVITY_NED: Vector3<f64> = Vector3::new(0.0, 0.0, 9.80665);

/// Per-axis accelerometer variance (m²/s⁴) above which the alignment window is
/// treated as moving.
pub const ALIGN_MOTION_VARIANCE: f64 = 1e-2;

/// Minimum alignment window length (s).
pub const ALIGN_MIN_DURATION: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrapdownError {
    #[error("IMU timestamp {sample} does not advance past state time {state}")]
    NonIncreasingTime { state: f64, sample: f64 },
    #[error("alignment window spans {0:.3} s, need at least 1 s of static data")]
    ShortAlignment(f64),
    #[error("motion detected during alignment (accel variance {0:.3e} m²/s⁴)")]
    MotionDuringAlignment(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Angular rate, rad/s, body frame.
    pub gyro: Vector3<f64>,
    /// Specific force, m/s², body frame.
    pub accel: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub t: f64,
    pub r_n: Vector3<f64>,
    pub v_n: Vector3<f64>,
    /// Body-to-navigation rotation.
    pub c_bn: Matrix3<f64>,
    pub bg: Vector3<f64>,
    pub ba: Vector3<f64>,
}

impl NavState {
    pub fn at_rest(t: f64, c_bn: Matrix3<f64>) -> Self {
        Self {
            t,
            r_n: Vector3::zeros(),
            v_n: Vector3::zeros(),
            c_bn,
            bg: Vector3::zeros(),
            ba: Vector3::zeros(),
        }
    }

    /// Bias-corrected specific force in the navigation frame.
    pub fn specific_force_n(&self, sample: &ImuSample) -> Vector3<f64> {
        self.c_bn * (sample.accel - self.ba)
    }
}

/// One mechanization step from `state.t` to `sample.t`.
pub fn mechanize_step(
    state: &NavState,
    sample: &ImuSample,
    gravity_n: &Vector3<f64>,
) -> Result<NavState, StrapdownError> {
    let dt = sample.t - state.t;
    if !(dt > 0.0) {
        return Err(StrapdownError::NonIncreasingTime {
            state: state.t,
            sample: sample.t,
        });
    }
    let omega = sample.gyro - state.bg;
    let c_first_order = state.c_bn + state.c_bn * skew(&omega) * dt;
    let c_bn = nearest_rotation(&c_first_order);
    let v_n = state.v_n + (c_bn * (sample.accel - state.ba) + gravity_n) * dt;
    let r_n = state.r_n + v_n * dt;
    Ok(NavState {
        t: sample.t,
        r_n,
        v_n,
        c_bn,
        bg: state.bg,
        ba: state.ba,
    })
}

fn mean_and_max_variance(values: impl Iterator<Item = Vector3<f64>> + Clone) -> (Vector3<f64>, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<Vector3<f64>>() / n;
    let var = values
        .map(|v| (v - mean).component_mul(&(v - mean)))
        .sum::<Vector3<f64>>()
        / n;
    (mean, var.max())
}

/// Level the platform from static accelerometer data. Heading is set to zero.
pub fn coarse_align(static_samples: &[ImuSample]) -> Result<Matrix3<f64>, StrapdownError> {
    let span = match (static_samples.first(), static_samples.last()) {
        (Some(a), Some(b)) => b.t - a.t,
        _ => 0.0,
    };
    if span < ALIGN_MIN_DURATION - 1e-9 {
        return Err(StrapdownError::ShortAlignment(span));
    }
    let (f, var) = mean_and_max_variance(static_samples.iter().map(|s| s.accel));
    if var > ALIGN_MOTION_VARIANCE {
        return Err(StrapdownError::MotionDuringAlignment(var));
    }
    let roll = (-f.y).atan2(-f.z);
    let pitch = f.x.atan2((f.y * f.y + f.z * f.z).sqrt());
    Ok(rotation_from_euler(roll, pitch, 0.0))
}

/// Mean gyro output over a static window; an estimate of the turn-on gyro bias
/// when Earth rate is neglected.
pub fn static_gyro_bias(static_samples: &[ImuSample]) -> Vector3<f64> {
    if static_samples.is_empty() {
        return Vector3::zeros();
    }
    static_samples.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / static_samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthonormality_error, yaw_of};

    fn sample(t: f64, gyro: [f64; 3], accel: [f64; 3]) -> ImuSample {
        ImuSample {
            t,
            gyro: Vector3::from(gyro),
            accel: Vector3::from(accel),
        }
    }

    #[test]
    fn stationary_is_fixed_point() {
        let g = Vector3::new(0.0, 0.0, 9.81);
        let s0 = NavState::at_rest(0.0, Matrix3::identity());
        let s1 = mechanize_step(&s0, &sample(0.01, [0.0; 3], [0.0, 0.0, -9.81]), &g).unwrap();
        assert_eq!(s1.r_n, s0.r_n);
        assert_eq!(s1.v_n, s0.v_n);
        assert!((s1.c_bn - s0.c_bn).abs().max() < 1e-15);
    }

    #[test]
    fn free_fall_uses_updated_velocity() {
        let g = Vector3::new(0.0, 0.0, 9.81);
        let s0 = NavState::at_rest(0.0, Matrix3::identity());
        let s1 = mechanize_step(&s0, &sample(0.01, [0.0; 3], [0.0; 3]), &g).unwrap();
        assert!((s1.v_n - Vector3::new(0.0, 0.0, 0.0981)).norm() < 1e-15);
        assert!((s1.r_n - Vector3::new(0.0, 0.0, 0.000981)).norm() < 1e-15);
    }

    #[test]
    fn quarter_turn_heading() {
        let g = GRAVITY_NED;
        let mut s = NavState::at_rest(0.0, Matrix3::identity());
        let rate = std::f64::consts::FRAC_PI_2;
        for k in 1..=1000 {
            s = mechanize_step(&s, &sample(k as f64 * 1e-3, [0.0, 0.0, rate], [0.0, 0.0, -g.z]), &g).unwrap();
        }
        // closed-form: exp([ω×]·1 s) has yaw π/2
        let yaw = yaw_of(&s.c_bn).to_degrees();
        assert!((yaw - 90.0).abs() < 0.1, "yaw {yaw}");
        assert!(orthonormality_error(&s.c_bn) < 1e-12);
    }

    #[test]
    fn rejects_non_increasing_time() {
        let s0 = NavState::at_rest(1.0, Matrix3::identity());
        assert!(matches!(
            mechanize_step(&s0, &sample(1.0, [0.0; 3], [0.0; 3]), &GRAVITY_NED),
            Err(StrapdownError::NonIncreasingTime { .. })
        ));
    }

    fn static_window(accel: [f64; 3]) -> Vec<ImuSample> {
        (0..=100).map(|k| sample(k as f64 * 0.01, [0.0; 3], accel)).collect()
    }

    #[test]
    fn align_level() {
        let c = coarse_align(&static_window([0.0, 0.0, -9.81])).unwrap();
        assert!((c - Matrix3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn align_rolled() {
        let a = 10f64.to_radians();
        let c = coarse_align(&static_window([0.0, -9.81 * a.sin(), -9.81 * a.cos()])).unwrap();
        let (r, p, y) = nalgebra::Rotation3::from_matrix_unchecked(c).euler_angles();
        assert!((r - a).abs() < 1e-12 && p.abs() < 1e-12 && y.abs() < 1e-12);
    }

    #[test]
    fn align_upside_down() {
        let c = coarse_align(&static_window([0.0, 0.0, 9.81])).unwrap();
        let (r, p, _) = nalgebra::Rotation3::from_matrix_unchecked(c).euler_angles();
        assert!((r.abs() - std::f64::consts::PI).abs() < 1e-12);
        assert!(p.abs() < 1e-12);
    }

    #[test]
    fn align_errors() {
        let short: Vec<_> = static_window([0.0, 0.0, -9.81]).into_iter().take(50).collect();
        assert!(matches!(coarse_align(&short), Err(StrapdownError::ShortAlignment(_))));
        let shaking: Vec<_> = (0..=100)
            .map(|k| {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                sample(k as f64 * 0.01, [0.0; 3], [s, 0.0, -9.81])
            })
            .collect();
        assert!(matches!(
            coarse_align(&shaking),
            Err(StrapdownError::MotionDuringAlignment(_))
        ));
    }
}
