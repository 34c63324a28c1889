//! Error-state covariance with a sliding window of cloned positions.
//!
//! Error state, in order: `[δr, δv, φ, δbg, δba, δr_{k-m} … δr_{k-1}]`, each
//! block three wide. Sign conventions:
//!
//! * `δr = r̂ − r`, `δv = v̂ − v` (estimate minus truth);
//! * `Ĉ_b^n = exp(−[φ×]) C_b^n`, φ resolved in the navigation frame;
//! * `δbg = bg − b̂g`, `δba = ba − b̂a` (residual sensor bias).
//!
//! With these, the first-order transition matrix has `(fⁿ×)Δt` coupling
//! velocity to attitude, `C_b^n Δt` velocity to accelerometer bias and
//! `−C_b^n Δt` attitude to gyro bias.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::linalg::{exp_so3, skew, symmetrize};
use crate::strapdown::{ImuSample, NavState};

pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const ATT: usize = 6;
pub const BG: usize = 9;
pub const BA: usize = 12;
pub const CORE_DIM: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("measurement dimensions disagree: H is {h_rows}x{h_cols}, dz has {dz}, R is {r}x{r}, state has {state}")]
    Dimension {
        h_rows: usize,
        h_cols: usize,
        dz: usize,
        r: usize,
        state: usize,
    },
    #[error("noise parameter `{0}` must be strictly positive and finite")]
    NonPositiveNoise(&'static str),
}

/// Block layout of the error state for a given number of live clones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorStateLayout {
    pub clones: usize,
}

impl ErrorStateLayout {
    pub fn new(clones: usize) -> Self {
        Self { clones }
    }

    pub fn dim(&self) -> usize {
        CORE_DIM + 3 * self.clones
    }

    /// Offset of clone `k`, 0 being the oldest.
    pub fn clone_offset(&self, k: usize) -> usize {
        assert!(k < self.clones, "clone {k} out of range");
        CORE_DIM + 3 * k
    }
}

/// IMU and magnetometer noise densities plus initial uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Gyro angle random walk, rad/√s.
    pub gyro_arw: f64,
    /// Accelerometer velocity random walk, m/s/√s.
    pub accel_vrw: f64,
    /// Gyro bias random-walk density, rad/s/√s.
    pub gyro_bias_rw: f64,
    /// Accelerometer bias random-walk density, m/s²/√s.
    pub accel_bias_rw: f64,
    /// Magnetometer white noise, µT per axis.
    pub sigma_mag: f64,
    pub init_pos_std: f64,
    pub init_vel_std: f64,
    /// Roll/pitch, rad.
    pub init_att_std: f64,
    pub init_heading_std: f64,
    pub init_gyro_bias_std: f64,
    pub init_accel_bias_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gyro_arw: 3.0e-4,
            accel_vrw: 2.0e-3,
            gyro_bias_rw: 2.0e-5,
            accel_bias_rw: 2.0e-4,
            sigma_mag: 0.1,
            init_pos_std: 1e-3,
            init_vel_std: 0.01,
            init_att_std: 1e-2,
            init_heading_std: 1e-3,
            init_gyro_bias_std: 5e-3,
            init_accel_bias_std: 0.03,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let fields = [
            ("gyro_arw", self.gyro_arw),
            ("accel_vrw", self.accel_vrw),
            ("gyro_bias_rw", self.gyro_bias_rw),
            ("accel_bias_rw", self.accel_bias_rw),
            ("sigma_mag", self.sigma_mag),
            ("init_pos_std", self.init_pos_std),
            ("init_vel_std", self.init_vel_std),
            ("init_att_std", self.init_att_std),
            ("init_heading_std", self.init_heading_std),
            ("init_gyro_bias_std", self.init_gyro_bias_std),
            ("init_accel_bias_std", self.init_accel_bias_std),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FilterError::NonPositiveNoise(name));
            }
        }
        Ok(())
    }
}

/// Snapshot of the navigation state at a cloned epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloneSnapshot {
    pub t: f64,
    pub r_n: Vector3<f64>,
    pub c_bn: Matrix3<f64>,
}

/// Result of a measurement update.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    Accepted {
        correction: DVector<f64>,
        nis: f64,
    },
    /// Failed the χ² innovation gate; covariance untouched.
    Rejected {
        nis: f64,
        threshold: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub layout: ErrorStateLayout,
    pub p: DMatrix<f64>,
    pub clones: VecDeque<CloneSnapshot>,
    /// Maximum number of clones kept.
    pub window: usize,
}

/// χ² quantile for `dof` degrees of freedom.
pub fn chi2_quantile(q: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("positive dof").inverse_cdf(q)
}

/// The 15×15 transition matrix of the core error state.
pub fn core_transition(c_bn: &Matrix3<f64>, f_n: &Vector3<f64>, dt: f64) -> DMatrix<f64> {
    let mut f = DMatrix::identity(CORE_DIM, CORE_DIM);
    let i3 = Matrix3::identity();
    f.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(i3 * dt));
    f.fixed_view_mut::<3, 3>(VEL, ATT).copy_from(&(skew(f_n) * dt));
    f.fixed_view_mut::<3, 3>(VEL, BA).copy_from(&(c_bn * dt));
    f.fixed_view_mut::<3, 3>(ATT, BG).copy_from(&(-c_bn * dt));
    f
}

/// First-order discrete process noise `G·PSD·Gᵀ·Δt` of the core state.
pub fn core_process_noise(c_bn: &Matrix3<f64>, noise: &NoiseConfig, dt: f64) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(CORE_DIM, CORE_DIM);
    let vel = c_bn * Matrix3::from_diagonal_element(noise.accel_vrw.powi(2)) * c_bn.transpose();
    let att = c_bn * Matrix3::from_diagonal_element(noise.gyro_arw.powi(2)) * c_bn.transpose();
    q.fixed_view_mut::<3, 3>(VEL, VEL).copy_from(&(vel * dt));
    q.fixed_view_mut::<3, 3>(ATT, ATT).copy_from(&(att * dt));
    q.fixed_view_mut::<3, 3>(BG, BG)
        .copy_from(&Matrix3::from_diagonal_element(noise.gyro_bias_rw.powi(2) * dt));
    q.fixed_view_mut::<3, 3>(BA, BA)
        .copy_from(&Matrix3::from_diagonal_element(noise.accel_bias_rw.powi(2) * dt));
    q
}

impl FilterState {
    /// Core-only filter with the initial uncertainties from `noise`.
    pub fn new(window: usize, noise: &NoiseConfig) -> Self {
        let mut d = DVector::zeros(CORE_DIM);
        for k in 0..3 {
            d[POS + k] = noise.init_pos_std.powi(2);
            d[VEL + k] = noise.init_vel_std.powi(2);
            d[BG + k] = noise.init_gyro_bias_std.powi(2);
            d[BA + k] = noise.init_accel_bias_std.powi(2);
        }
        d[ATT] = noise.init_att_std.powi(2);
        d[ATT + 1] = noise.init_att_std.powi(2);
        d[ATT + 2] = noise.init_heading_std.powi(2);
        Self::with_covariance(window, DMatrix::from_diagonal(&d))
    }

    pub fn with_covariance(window: usize, p: DMatrix<f64>) -> Self {
        assert_eq!(p.nrows(), CORE_DIM);
        Self {
            layout: ErrorStateLayout::new(0),
            p,
            clones: VecDeque::new(),
            window,
        }
    }

    fn transform_left(&mut self, core: &DMatrix<f64>) {
        // P ← Φ P Φᵀ with Φ = diag(core, I)
        let n = self.layout.dim();
        let top = core * self.p.rows(0, CORE_DIM);
        self.p.rows_mut(0, CORE_DIM).copy_from(&top);
        let left = self.p.columns(0, CORE_DIM) * core.transpose();
        self.p.columns_mut(0, CORE_DIM).copy_from(&left);
        debug_assert_eq!(self.p.nrows(), n);
    }

    /// Covariance prediction over one IMU interval. `nav` is the state after
    /// mechanizing `sample`.
    pub fn propagate(&mut self, nav: &NavState, sample: &ImuSample, dt: f64, noise: &NoiseConfig) {
        if dt <= 0.0 {
            return;
        }
        let f_n = nav.specific_force_n(sample);
        let phi = core_transition(&nav.c_bn, &f_n, dt);
        self.transform_left(&phi);
        let q = core_process_noise(&nav.c_bn, noise, dt);
        let mut core = self.p.view_mut((0, 0), (CORE_DIM, CORE_DIM));
        core += q;
        symmetrize(&mut self.p);
    }

    /// Kalman update in Joseph form with optional χ² gating at quantile `gate`.
    pub fn update(
        &mut self,
        h: &DMatrix<f64>,
        dz: &DVector<f64>,
        r: &DMatrix<f64>,
        gate: Option<f64>,
    ) -> Result<UpdateOutcome, FilterError> {
        let n = self.layout.dim();
        if h.ncols() != n || h.nrows() != dz.len() || r.nrows() != dz.len() || r.ncols() != dz.len() {
            return Err(FilterError::Dimension {
                h_rows: h.nrows(),
                h_cols: h.ncols(),
                dz: dz.len(),
                r: r.nrows(),
                state: n,
            });
        }
        let pht = &self.p * h.transpose();
        let mut s = h * &pht + r;
        symmetrize(&mut s);
        let chol = s.clone().cholesky().ok_or(FilterError::SingularInnovation)?;
        let s_inv_dz = chol.solve(dz);
        let nis = dz.dot(&s_inv_dz);
        if let Some(q) = gate {
            let threshold = chi2_quantile(q, dz.len());
            if !(nis <= threshold) {
                return Ok(UpdateOutcome::Rejected { nis, threshold });
            }
        }
        // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ
        let k = chol.solve(&pht.transpose()).transpose();
        let correction = &k * dz;
        let i_kh = DMatrix::identity(n, n) - &k * h;
        let mut p = &i_kh * &self.p * i_kh.transpose() + &k * r * k.transpose();
        symmetrize(&mut p);
        self.p = p;
        Ok(UpdateOutcome::Accepted { correction, nis })
    }

    /// Index map of the clone remapping: entry `a` of the new state copies
    /// entry `map[a]` of the old one.
    fn augmentation_map(&self) -> Vec<usize> {
        let old = self.layout;
        let drop_oldest = self.window > 0 && old.clones >= self.window;
        let keep_from = if drop_oldest { 1 } else { 0 };
        let mut map: Vec<usize> = (0..CORE_DIM).collect();
        for k in keep_from..old.clones {
            map.extend(old.clone_offset(k)..old.clone_offset(k) + 3);
        }
        if self.window > 0 {
            map.extend(POS..POS + 3);
        }
        map
    }

    /// Selection matrix `H_clone` taking the current covariance to the
    /// augmented one, `P_new = H_clone P H_cloneᵀ`.
    pub fn clone_matrix(&self) -> DMatrix<f64> {
        let map = self.augmentation_map();
        let mut h = DMatrix::zeros(map.len(), self.layout.dim());
        for (a, &b) in map.iter().enumerate() {
            h[(a, b)] = 1.0;
        }
        h
    }

    /// Clones the current position into the window, dropping the oldest
    /// clone once the window is full.
    pub fn augment_clone(&mut self, nav: &NavState) {
        if self.window == 0 {
            return;
        }
        if let Some(last) = self.clones.back() {
            if !(nav.t > last.t) {
                log::warn!("clone at t={} does not follow t={}; skipped", nav.t, last.t);
                return;
            }
        }
        let map = self.augmentation_map();
        let p = DMatrix::from_fn(map.len(), map.len(), |a, b| self.p[(map[a], map[b])]);
        if self.clones.len() >= self.window {
            self.clones.pop_front();
        }
        self.clones.push_back(CloneSnapshot {
            t: nav.t,
            r_n: nav.r_n,
            c_bn: nav.c_bn,
        });
        self.p = p;
        self.layout = ErrorStateLayout::new(self.clones.len());
    }

    /// Feeds an error-state estimate back into the nominal navigation state
    /// and the clone positions.
    pub fn apply_correction(&mut self, nav: &mut NavState, dx: &DVector<f64>) {
        let block = |o: usize| Vector3::new(dx[o], dx[o + 1], dx[o + 2]);
        nav.r_n -= block(POS);
        nav.v_n -= block(VEL);
        nav.c_bn = crate::linalg::nearest_rotation(&(exp_so3(&block(ATT)) * nav.c_bn));
        nav.bg += block(BG);
        nav.ba += block(BA);
        for k in 0..self.layout.clones {
            let o = self.layout.clone_offset(k);
            self.clones[k].r_n -= block(o);
        }
    }

    /// Smallest eigenvalue of P.
    pub fn min_eigenvalue(&self) -> f64 {
        self.p.clone().symmetric_eigenvalues().min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nav_at(t: f64) -> NavState {
        NavState::at_rest(t, Matrix3::identity())
    }

    fn imu(t: f64, accel: Vector3<f64>) -> ImuSample {
        ImuSample {
            t,
            gyro: Vector3::zeros(),
            accel,
        }
    }

    #[test]
    fn zero_dt_leaves_p_unchanged() {
        let noise = NoiseConfig::default();
        let mut fs = FilterState::new(2, &noise);
        let p0 = fs.p.clone();
        fs.propagate(&nav_at(0.0), &imu(0.0, Vector3::zeros()), 0.0, &noise);
        assert_eq!(fs.p, p0);
    }

    #[test]
    fn position_velocity_cross_covariance() {
        let noise = NoiseConfig {
            gyro_arw: 1e-300,
            accel_vrw: 1e-300,
            gyro_bias_rw: 1e-300,
            accel_bias_rw: 1e-300,
            ..NoiseConfig::default()
        };
        let mut fs = FilterState::with_covariance(2, DMatrix::identity(15, 15));
        let dt = 0.01;
        fs.propagate(&nav_at(dt), &imu(dt, Vector3::zeros()), dt, &noise);
        for k in 0..3 {
            assert!((fs.p[(POS + k, VEL + k)] - dt).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_like_update() {
        // one-dimensional check embedded in the 15-state: P=1, H=1, R=1, dz=1
        let mut fs = FilterState::with_covariance(0, DMatrix::identity(15, 15));
        let mut h = DMatrix::zeros(1, 15);
        h[(0, 0)] = 1.0;
        let out = fs
            .update(&h, &DVector::from_element(1, 1.0), &DMatrix::identity(1, 1), None)
            .unwrap();
        match out {
            UpdateOutcome::Accepted { correction, .. } => {
                assert!((correction[0] - 0.5).abs() < 1e-15);
            }
            _ => panic!("rejected"),
        }
        assert!((fs.p[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_h_is_uninformative() {
        let mut fs = FilterState::new(2, &NoiseConfig::default());
        let p0 = fs.p.clone();
        let out = fs
            .update(
                &DMatrix::zeros(3, 15),
                &DVector::from_element(3, 2.0),
                &DMatrix::identity(3, 3),
                None,
            )
            .unwrap();
        match out {
            UpdateOutcome::Accepted { correction, .. } => assert_eq!(correction.norm(), 0.0),
            _ => panic!(),
        }
        assert!((&fs.p - p0).abs().max() < 1e-15);
    }

    #[test]
    fn singular_innovation_errors() {
        let mut fs = FilterState::with_covariance(0, DMatrix::zeros(15, 15));
        let h = DMatrix::zeros(2, 15);
        assert_eq!(
            fs.update(&h, &DVector::zeros(2), &DMatrix::zeros(2, 2), None),
            Err(FilterError::SingularInnovation)
        );
    }

    #[test]
    fn dimension_mismatch_errors() {
        let mut fs = FilterState::new(2, &NoiseConfig::default());
        assert!(matches!(
            fs.update(
                &DMatrix::zeros(3, 21),
                &DVector::zeros(3),
                &DMatrix::identity(3, 3),
                None
            ),
            Err(FilterError::Dimension { .. })
        ));
    }

    #[test]
    fn gate_rejects_outliers() {
        let mut fs = FilterState::with_covariance(0, DMatrix::identity(15, 15));
        let mut h = DMatrix::zeros(1, 15);
        h[(0, 0)] = 1.0;
        let p0 = fs.p.clone();
        let out = fs
            .update(
                &h,
                &DVector::from_element(1, 10.0),
                &DMatrix::identity(1, 1),
                Some(0.99),
            )
            .unwrap();
        assert!(matches!(out, UpdateOutcome::Rejected { .. }));
        assert_eq!(fs.p, p0);
    }

    #[test]
    fn clone_is_a_copy_of_position() {
        let noise = NoiseConfig::default();
        let mut fs = FilterState::new(2, &noise);
        fs.p[(POS, VEL)] = 1e-4;
        fs.p[(VEL, POS)] = 1e-4;
        for k in 1..=3 {
            fs.augment_clone(&nav_at(k as f64));
            let l = fs.layout;
            let c = l.clone_offset(l.clones - 1);
            let pos = fs.p.view((POS, POS), (3, 3)).clone_owned();
            assert_eq!(fs.p.view((c, c), (3, 3)).clone_owned(), pos);
            assert_eq!(fs.p.view((c, POS), (3, 3)).clone_owned(), pos);
            assert!(fs.clones.len() <= 2);
        }
        assert_eq!(fs.layout.dim(), 21);
        let ts: Vec<f64> = fs.clones.iter().map(|c| c.t).collect();
        assert_eq!(ts, vec![2.0, 3.0]);
    }

    #[test]
    fn non_increasing_clone_is_skipped() {
        let mut fs = FilterState::new(2, &NoiseConfig::default());
        fs.augment_clone(&nav_at(1.0));
        fs.augment_clone(&nav_at(1.0));
        assert_eq!(fs.clones.len(), 1);
    }

    #[test]
    fn correction_feedback_signs() {
        let mut fs = FilterState::new(1, &NoiseConfig::default());
        let mut nav = nav_at(0.0);
        fs.augment_clone(&nav);
        let mut dx = DVector::zeros(18);
        dx[POS] = 1.0;
        dx[VEL + 1] = 2.0;
        dx[ATT + 2] = 0.1;
        dx[BG] = 0.01;
        dx[BA + 2] = 0.02;
        dx[15] = 0.5;
        fs.apply_correction(&mut nav, &dx);
        assert_eq!(nav.r_n, Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(nav.v_n, Vector3::new(0.0, -2.0, 0.0));
        assert!((crate::linalg::yaw_of(&nav.c_bn) - 0.1).abs() < 1e-12);
        assert_eq!(nav.bg, Vector3::new(0.01, 0.0, 0.0));
        assert_eq!(nav.ba, Vector3::new(0.0, 0.0, 0.02));
        assert_eq!(fs.clones[0].r_n, Vector3::new(-0.5, 0.0, 0.0));
    }

    #[test]
    fn chi2_quantiles() {
        assert!((chi2_quantile(0.99, 1) - 6.634896601).abs() < 1e-6);
        assert!((chi2_quantile(0.99, 3) - 11.344866730).abs() < 1e-6);
    }

    #[test]
    fn noise_validation() {
        let mut n = NoiseConfig::default();
        assert!(n.validate().is_ok());
        n.sigma_mag = 0.0;
        assert_eq!(n.validate(), Err(FilterError::NonPositiveNoise("sigma_mag")));
    }
}
