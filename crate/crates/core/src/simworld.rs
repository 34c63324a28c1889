//! Synthetic magnetic environment, trajectories and sensor streams used as
//! ground truth by the tests and the `simulate`/`sweep` commands.
//!
//! Coordinates are NED with the floor at `z = 0`; a platform at height `h`
//! flies at `z = −h` and floor sources sit at positive `z`.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::rotation_from_euler;
use crate::magmodel::{ArrayEpoch, LeverArmSet};
use crate::msckf::NoiseConfig;
use crate::strapdown::{ImuSample, GRAVITY_NED};

/// μ0/4π in µT·m/A.
const MU0_OVER_4PI_UT: f64 = 0.1;

/// Minimum distance between a query point and any dipole (m).
pub const DIPOLE_CLEARANCE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("query point is {distance:.3} m from dipole {index}, inside the {DIPOLE_CLEARANCE} m clearance")]
    Clearance { index: usize, distance: f64 },
    #[error("invalid trajectory spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dipole {
    pub position: Vector3<f64>,
    /// Magnetic moment, A·m².
    pub moment: Vector3<f64>,
}

impl Dipole {
    fn field(&self, r: &Vector3<f64>) -> Vector3<f64> {
        let d = r - self.position;
        let n2 = d.norm_squared();
        let n = n2.sqrt();
        let md = self.moment.dot(&d);
        MU0_OVER_4PI_UT * (3.0 * md * d / (n2 * n2 * n) - self.moment / (n2 * n))
    }

    fn jacobian(&self, r: &Vector3<f64>) -> Matrix3<f64> {
        let d = r - self.position;
        let n2 = d.norm_squared();
        let n5 = n2 * n2 * n2.sqrt();
        let md = self.moment.dot(&d);
        let outer_md = self.moment * d.transpose() + d * self.moment.transpose();
        let j = (outer_md + Matrix3::identity() * md) * (3.0 / n5) - d * d.transpose() * (15.0 * md / (n5 * n2));
        j * MU0_OVER_4PI_UT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    /// Background field, µT (NED).
    pub uniform_field: Vector3<f64>,
    pub dipoles: Vec<Dipole>,
}

impl WorldModel {
    pub fn uniform(field: Vector3<f64>) -> Self {
        Self {
            uniform_field: field,
            dipoles: Vec::new(),
        }
    }

    fn check_clearance(&self, r: &Vector3<f64>) -> Result<(), SimError> {
        for (index, d) in self.dipoles.iter().enumerate() {
            let distance = (r - d.position).norm();
            if distance < DIPOLE_CLEARANCE {
                return Err(SimError::Clearance { index, distance });
            }
        }
        Ok(())
    }

    /// Field (µT, NED) at `r`.
    pub fn field_at(&self, r: &Vector3<f64>) -> Result<Vector3<f64>, SimError> {
        self.check_clearance(r)?;
        Ok(self.dipoles.iter().fold(self.uniform_field, |acc, d| acc + d.field(r)))
    }

    /// Spatial Jacobian ∂M/∂r (µT/m).
    pub fn jacobian_at(&self, r: &Vector3<f64>) -> Result<Matrix3<f64>, SimError> {
        self.check_clearance(r)?;
        Ok(self.dipoles.iter().fold(Matrix3::zeros(), |acc, d| acc + d.jacobian(r)))
    }
}

/// Randomized floor layer of dipoles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloorPreset {
    /// Background field, µT (NED).
    pub uniform_field: [f64; 3],
    /// Depth of the dipole layer below the floor (m).
    pub depth: f64,
    pub spacing: f64,
    /// Uniform horizontal jitter of each grid node (m).
    pub jitter: f64,
    /// Area covered: `[x_min, x_max, y_min, y_max]`.
    pub area: [f64; 4],
    /// Largest anomaly magnitude over the area at `reference_height`, µT.
    pub anomaly: f64,
    pub reference_height: f64,
}

impl Default for FloorPreset {
    fn default() -> Self {
        Self {
            uniform_field: [22.0, -2.0, 42.0],
            depth: 0.1,
            spacing: 1.0,
            jitter: 0.3,
            area: [-4.0, 10.0, -4.0, 7.0],
            anomaly: 20.0,
            reference_height: 0.4,
        }
    }
}

impl FloorPreset {
    pub fn build(&self, seed: u64) -> WorldModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f100_u64);
        let [x0, x1, y0, y1] = self.area;
        let nx = ((x1 - x0) / self.spacing).floor() as usize + 1;
        let ny = ((y1 - y0) / self.spacing).floor() as usize + 1;
        let mut dipoles = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                let jx = self.jitter * (2.0 * rng.random::<f64>() - 1.0);
                let jy = self.jitter * (2.0 * rng.random::<f64>() - 1.0);
                let dir = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                )
                .normalize();
                let strength = 0.3 + rng.random::<f64>();
                dipoles.push(Dipole {
                    position: Vector3::new(
                        x0 + i as f64 * self.spacing + jx,
                        y0 + j as f64 * self.spacing + jy,
                        self.depth,
                    ),
                    moment: dir * strength,
                });
            }
        }
        let mut world = WorldModel {
            uniform_field: Vector3::from(self.uniform_field),
            dipoles,
        };
        // scale moments to the requested anomaly at the reference height,
        // sampled over the interior so edge effects do not dominate
        let anomaly_only = WorldModel {
            uniform_field: Vector3::zeros(),
            dipoles: world.dipoles.clone(),
        };
        let mut peak: f64 = 0.0;
        let margin = 2.0 * self.spacing;
        let steps = 60;
        for a in 0..=steps {
            for b in 0..=steps {
                let x = x0 + margin + (x1 - x0 - 2.0 * margin) * a as f64 / steps as f64;
                let y = y0 + margin + (y1 - y0 - 2.0 * margin) * b as f64 / steps as f64;
                if let Ok(f) = anomaly_only.field_at(&Vector3::new(x, y, -self.reference_height)) {
                    peak = peak.max(f.norm());
                }
            }
        }
        if peak > 0.0 {
            let s = self.anomaly / peak;
            for d in &mut world.dipoles {
                d.moment *= s;
            }
        }
        world
    }
}

/// Closed C² loop through planar waypoints (periodic cubic spline, uniform knots).
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSpline {
    points: Vec<Vector2<f64>>,
    second: Vec<Vector2<f64>>,
}

impl LoopSpline {
    pub fn new(points: Vec<Vector2<f64>>) -> Result<Self, SimError> {
        let n = points.len();
        if n < 3 {
            return Err(SimError::InvalidSpec("loop needs at least 3 waypoints".into()));
        }
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 4.0;
            a[(i, (i + 1) % n)] += 1.0;
            a[(i, (i + n - 1) % n)] += 1.0;
        }
        let lu = a.lu();
        let mut second = vec![Vector2::zeros(); n];
        for c in 0..2 {
            let rhs = DVector::from_fn(n, |i, _| {
                6.0 * (points[(i + 1) % n][c] - 2.0 * points[i][c] + points[(i + n - 1) % n][c])
            });
            let m = lu
                .solve(&rhs)
                .ok_or_else(|| SimError::InvalidSpec("singular spline system".into()))?;
            for i in 0..n {
                second[i][c] = m[i];
            }
        }
        Ok(Self { points, second })
    }

    pub fn segments(&self) -> usize {
        self.points.len()
    }

    fn locate(&self, u: f64) -> (usize, f64) {
        let n = self.points.len() as f64;
        let w = u.rem_euclid(n);
        let i = (w.floor() as usize).min(self.points.len() - 1);
        (i, w - i as f64)
    }

    pub fn position(&self, u: f64) -> Vector2<f64> {
        let (i, t) = self.locate(u);
        let j = (i + 1) % self.points.len();
        let s = 1.0 - t;
        self.points[i] * s
            + self.points[j] * t
            + self.second[i] * ((s * s * s - s) / 6.0)
            + self.second[j] * ((t * t * t - t) / 6.0)
    }

    pub fn tangent(&self, u: f64) -> Vector2<f64> {
        let (i, t) = self.locate(u);
        let j = (i + 1) % self.points.len();
        let s = 1.0 - t;
        self.points[j] - self.points[i] - self.second[i] * ((3.0 * s * s - 1.0) / 6.0)
            + self.second[j] * ((3.0 * t * t - 1.0) / 6.0)
    }

    pub fn length(&self) -> f64 {
        let steps = 200 * self.points.len();
        let du = self.points.len() as f64 / steps as f64;
        (0..steps)
            .map(|k| self.tangent((k as f64 + 0.5) * du).norm() * du)
            .sum()
    }
}

/// Motion of the platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Closed loop waypoints `[x, y]` (m), traversed repeatedly.
    pub waypoints: Vec<[f64; 2]>,
    /// Cruise speed (m/s); zero gives a static run.
    pub speed: f64,
    /// Duration of each speed ramp (s).
    pub ramp_s: f64,
    /// Static lead-in before moving (s).
    pub static_s: f64,
    pub height: f64,
    pub imu_rate: f64,
    pub mag_rate: f64,
    pub duration: f64,
    /// Roll/pitch sway amplitude (deg) and frequency (Hz) while walking.
    pub sway_deg: f64,
    pub sway_hz: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            waypoints: vec![
                [0.0, 0.0],
                [3.0, -0.3],
                [6.0, 0.0],
                [7.0, 1.5],
                [6.0, 3.0],
                [3.0, 3.3],
                [0.0, 3.0],
                [-1.0, 1.5],
            ],
            speed: 1.05,
            ramp_s: 2.0,
            static_s: 2.0,
            height: 0.4,
            imu_rate: 100.0,
            mag_rate: 50.0,
            duration: 150.0,
            sway_deg: 2.0,
            sway_hz: 0.9,
        }
    }
}

impl TrajectorySpec {
    pub fn stationary(duration: f64) -> Self {
        Self {
            speed: 0.0,
            duration,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<usize, SimError> {
        let positive = [
            ("imu_rate", self.imu_rate),
            ("mag_rate", self.mag_rate),
            ("duration", self.duration),
            ("height", self.height),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidSpec(format!("{name} must be positive")));
            }
        }
        if self.speed < 0.0 || self.ramp_s <= 0.0 || self.static_s < 0.0 {
            return Err(SimError::InvalidSpec(
                "speed, ramp and static lead must be non-negative".into(),
            ));
        }
        let ratio = self.imu_rate / self.mag_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(SimError::InvalidSpec(
                "imu_rate must be an integer multiple of mag_rate".into(),
            ));
        }
        Ok(ratio.round() as usize)
    }

    /// Along-track speed at time `t`: zero, raised-cosine ramp up, cruise,
    /// ramp down to zero at `duration`.
    pub fn speed_at(&self, t: f64) -> f64 {
        let start = self.static_s;
        let end = self.duration;
        if t <= start || t >= end {
            return 0.0;
        }
        let ramp = |x: f64| 0.5 - 0.5 * (std::f64::consts::PI * x.clamp(0.0, 1.0)).cos();
        let up = ramp((t - start) / self.ramp_s);
        let down = ramp((end - t) / self.ramp_s);
        self.speed * up.min(down)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub r_n: Vector3<f64>,
    pub v_n: Vector3<f64>,
    pub c_bn: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub truth: Vec<TruthSample>,
    pub imu: Vec<ImuSample>,
    pub mag: Vec<ArrayEpoch>,
}

/// Truth poses at the IMU rate, starting at `t = 0`.
pub fn truth_trajectory(spec: &TrajectorySpec) -> Result<Vec<TruthSample>, SimError> {
    spec.validate()?;
    let spline = LoopSpline::new(spec.waypoints.iter().map(|p| Vector2::new(p[0], p[1])).collect())?;
    let dt = 1.0 / spec.imu_rate;
    let steps = (spec.duration * spec.imu_rate).round() as usize;
    let substeps = 8;
    let h = dt / substeps as f64;
    let du_dt = |t: f64, u: f64| spec.speed_at(t) / spline.tangent(u).norm();

    let sway = spec.sway_deg.to_radians();
    let mut out = Vec::with_capacity(steps + 1);
    let mut u = 0.0;
    for k in 0..=steps {
        let t = k as f64 * dt;
        if k > 0 {
            // RK4 on du/dt over the preceding interval
            let t0 = t - dt;
            for s in 0..substeps {
                let ts = t0 + s as f64 * h;
                let k1 = du_dt(ts, u);
                let k2 = du_dt(ts + 0.5 * h, u + 0.5 * h * k1);
                let k3 = du_dt(ts + 0.5 * h, u + 0.5 * h * k2);
                let k4 = du_dt(ts + h, u + h * k3);
                u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        let p = spline.position(u);
        let tan = spline.tangent(u);
        let speed = spec.speed_at(t);
        let dir = tan / tan.norm();
        let yaw = tan.y.atan2(tan.x);
        let walk = if spec.speed > 0.0 { speed / spec.speed } else { 0.0 };
        let phase = 2.0 * std::f64::consts::PI * spec.sway_hz * t;
        let roll = sway * walk * phase.sin();
        let pitch = 0.5 * sway * walk * (0.5 * phase + 0.7).sin();
        out.push(TruthSample {
            t,
            r_n: Vector3::new(p.x, p.y, -spec.height),
            v_n: Vector3::new(dir.x * speed, dir.y * speed, 0.0),
            c_bn: rotation_from_euler(roll, pitch, yaw),
        });
    }
    Ok(out)
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Synthesizes IMU and magnetometer-array streams along a trajectory.
///
/// IMU samples at `t_k` carry the mean angular rate and the mean specific
/// force over `(t_{k-1}, t_k]`, the latter resolved with the attitude at
/// `t_k`. `noise = None` gives perfect sensors (no bias, no noise).
pub fn generate_run(
    world: &WorldModel,
    spec: &TrajectorySpec,
    noise: Option<&NoiseConfig>,
    arms: &LeverArmSet,
    seed: u64,
) -> Result<SimRun, SimError> {
    let mag_every = spec.validate()?;
    let truth = truth_trajectory(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / spec.imu_rate;

    let (mut bg, mut ba) = match noise {
        Some(n) => (
            gaussian3(&mut rng) * n.init_gyro_bias_std,
            gaussian3(&mut rng) * n.init_accel_bias_std,
        ),
        None => (Vector3::zeros(), Vector3::zeros()),
    };

    let mut imu = Vec::with_capacity(truth.len());
    for w in truth.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let rel = Rotation3::from_matrix_unchecked(a.c_bn.transpose() * b.c_bn);
        let mut gyro = rel.scaled_axis() / dt;
        let mut accel = b.c_bn.transpose() * ((b.v_n - a.v_n) / dt - GRAVITY_NED);
        if let Some(n) = noise {
            bg += gaussian3(&mut rng) * (n.gyro_bias_rw * dt.sqrt());
            ba += gaussian3(&mut rng) * (n.accel_bias_rw * dt.sqrt());
            gyro += bg + gaussian3(&mut rng) * (n.gyro_arw / dt.sqrt());
            accel += ba + gaussian3(&mut rng) * (n.accel_vrw / dt.sqrt());
        }
        imu.push(ImuSample { t: b.t, gyro, accel });
    }

    let mut mag = Vec::with_capacity(truth.len() / mag_every + 1);
    for s in truth.iter().step_by(mag_every) {
        let c_nb = s.c_bn.transpose();
        let mut readings = Vec::with_capacity(arms.len());
        for l in arms.arms() {
            let mut m = c_nb * world.field_at(&(s.r_n + s.c_bn * l))?;
            if let Some(n) = noise {
                m += gaussian3(&mut rng) * n.sigma_mag;
            }
            readings.push(m);
        }
        mag.push(ArrayEpoch { t: s.t, readings });
    }
    Ok(SimRun { truth, imu, mag })
}

/// Five-sensor planar cross, 0.1 m half-width.
pub fn default_arms() -> LeverArmSet {
    LeverArmSet::new(vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(0.1, 0.1, 0.0),
        Vector3::new(-0.1, 0.1, 0.0),
        Vector3::new(-0.1, -0.1, 0.0),
        Vector3::new(0.1, -0.1, 0.0),
    ])
    .expect("default arms are well posed")
}

/// Mean Frobenius norm of the world Jacobian along the truth trajectory.
pub fn mean_gradient_norm(world: &WorldModel, truth: &[TruthSample]) -> Result<f64, SimError> {
    let mut acc = 0.0;
    for s in truth {
        acc += world.jacobian_at(&s.r_n)?.norm();
    }
    Ok(acc / truth.len().max(1) as f64)
}
