//! Measurement models: magnetometer-array field prediction across epochs and
//! the navigation-frame magnetic-vector attitude constraint.
//!
//! Both produce `(H, dz, R)` with `dz = predicted − observed ≈ H δx + noise`
//! in the error-state conventions of [`crate::msckf`].

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::linalg::{orthonormality_error, skew};
use crate::magmodel::{build_phi, ArrayEpoch, FieldModel, LeverArmSet, MagModelError};
use crate::msckf::{ErrorStateLayout, ATT, BG, VEL};

/// Below this change of the reference reading (µT) the attitude constraint
/// carries no information and is skipped.
pub const ATTITUDE_MIN_CHANGE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasError {
    #[error("previous epoch has {got} readings, array has {expected}")]
    ReadingCount { expected: usize, got: usize },
    #[error("epoch interval must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("relative rotation is not orthonormal (|CᵀC - I| = {0:.3e})")]
    NotOrthonormal(f64),
    #[error(transparent)]
    Model(#[from] MagModelError),
}

/// Which gyro-bias Jacobian to use for the array update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GyroBiasJacobian {
    /// Lever-arm term plus the field-rotation term `[M×]`.
    #[default]
    Full,
    /// Lever-arm term only.
    LeverArmOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub h: DMatrix<f64>,
    pub dz: DVector<f64>,
    pub r: DMatrix<f64>,
}

/// Everything needed to predict the previous array epoch from the current model.
#[derive(Debug, Clone)]
pub struct MagUpdateContext<'a> {
    /// Model fitted at the current epoch, in current-body coordinates.
    pub model: &'a FieldModel,
    pub arms: &'a LeverArmSet,
    pub readings_prev: &'a ArrayEpoch,
    /// `C_j^i`: previous body frame to current body frame.
    pub c_j_i: Matrix3<f64>,
    /// Current-to-previous displacement in current-body axes.
    pub delta_r_bi: Vector3<f64>,
    /// Current body-to-navigation rotation estimate.
    pub c_bn: Matrix3<f64>,
    pub dt: f64,
    pub sigma_mag: f64,
}

impl<'a> MagUpdateContext<'a> {
    /// Builds the relative pose from the navigation estimates at both epochs.
    #[allow(clippy::too_many_arguments)]
    pub fn from_poses(
        model: &'a FieldModel,
        arms: &'a LeverArmSet,
        readings_prev: &'a ArrayEpoch,
        r_curr: &Vector3<f64>,
        c_curr: &Matrix3<f64>,
        r_prev: &Vector3<f64>,
        c_prev: &Matrix3<f64>,
        dt: f64,
        sigma_mag: f64,
    ) -> Self {
        let c_nb = c_curr.transpose();
        Self {
            model,
            arms,
            readings_prev,
            c_j_i: c_nb * c_prev,
            delta_r_bi: c_nb * (r_prev - r_curr),
            c_bn: *c_curr,
            dt,
            sigma_mag,
        }
    }

    /// Model-predicted field at each previous arm position, current-body axes.
    pub fn field_at_previous_arms(&self) -> Vec<Vector3<f64>> {
        crate::magmodel::previous_arm_positions(self.arms, &self.c_j_i, &self.delta_r_bi)
            .iter()
            .map(|p| self.model.eval(p))
            .collect()
    }
}

/// Array update: residual between the predicted and the measured previous-epoch
/// readings, with Jacobians on δv, φ and δbg.
pub fn build_mag_update(
    ctx: &MagUpdateContext<'_>,
    layout: &ErrorStateLayout,
    mode: GyroBiasJacobian,
) -> Result<Measurement, MeasError> {
    let n_arms = ctx.arms.len();
    if ctx.readings_prev.readings.len() != n_arms {
        return Err(MeasError::ReadingCount {
            expected: n_arms,
            got: ctx.readings_prev.readings.len(),
        });
    }
    if !(ctx.dt > 0.0) {
        return Err(MeasError::NonPositiveInterval(ctx.dt));
    }
    let err = orthonormality_error(&ctx.c_j_i);
    if err >= 1e-9 {
        return Err(MeasError::NotOrthonormal(err));
    }

    let rows = 3 * n_arms;
    let c_i_j = ctx.c_j_i.transpose();
    let c_nb = ctx.c_bn.transpose();
    let b = ctx.model.gradient();
    let dt = ctx.dt;

    let h_vel = -c_i_j * b * c_nb * dt;
    let h_att = -c_i_j * b * skew(&ctx.delta_r_bi) * c_nb;

    let mut h = DMatrix::zeros(rows, layout.dim());
    let mut dz = DVector::zeros(rows);
    let mut jac_theta = DMatrix::zeros(rows, ctx.model.theta.len());

    for (k, l) in ctx.arms.arms().iter().enumerate() {
        let rotated_arm = ctx.c_j_i * l;
        let p = rotated_arm + ctx.delta_r_bi;
        let field_bi = ctx.model.eval(&p);
        let predicted = c_i_j * field_bi;
        dz.fixed_rows_mut::<3>(3 * k)
            .copy_from(&(predicted - ctx.readings_prev.readings[k]));

        let lever = b * skew(&rotated_arm);
        let h_bg = match mode {
            GyroBiasJacobian::Full => c_i_j * (lever - skew(&field_bi)) * dt,
            GyroBiasJacobian::LeverArmOnly => c_i_j * lever * dt,
        };
        h.fixed_view_mut::<3, 3>(3 * k, VEL).copy_from(&h_vel);
        h.fixed_view_mut::<3, 3>(3 * k, ATT).copy_from(&h_att);
        h.fixed_view_mut::<3, 3>(3 * k, BG).copy_from(&h_bg);

        let j = c_i_j * build_phi(&p, ctx.model.order)?;
        jac_theta.rows_mut(3 * k, 3).copy_from(&j);
    }

    // new-observation noise: the sensor floor, or the fit's residual variance
    // when the model explains the array worse than that
    let noise = (ctx.sigma_mag * ctx.sigma_mag).max(ctx.model.sigma2);
    let mut r = &jac_theta * &ctx.model.cov_theta * jac_theta.transpose();
    for d in 0..rows {
        r[(d, d)] += noise;
    }
    crate::linalg::symmetrize(&mut r);
    Ok(Measurement { h, dz, r })
}

/// Estimate of how much of the reference reading change is due to motion
/// through the field rather than rotation, from the current field model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialCompensation {
    /// Reading now minus the model field at the sensor's previous position,
    /// current-body axes.
    pub change_b: Vector3<f64>,
    /// Covariance of `change_b` from the model coefficients.
    pub cov_b: Matrix3<f64>,
}

impl SpatialCompensation {
    /// Compensation for arm `index` given the array update context.
    pub fn from_context(ctx: &MagUpdateContext<'_>, index: usize, m_curr_b: &Vector3<f64>) -> Result<Self, MeasError> {
        let l = ctx.arms.arms()[index];
        let p = ctx.c_j_i * l + ctx.delta_r_bi;
        let phi = build_phi(&p, ctx.model.order)?;
        let cov = &phi * &ctx.model.cov_theta * phi.transpose();
        Ok(Self {
            change_b: m_curr_b - ctx.model.eval(&p),
            cov_b: Matrix3::from_fn(|a, b| cov[(a, b)]),
        })
    }
}

/// Inputs of the attitude constraint for the reference magnetometer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeInputs {
    pub m_curr_b: Vector3<f64>,
    pub m_prev_b: Vector3<f64>,
    /// Attitude estimate now, before any update at this epoch.
    pub c_curr: Matrix3<f64>,
    /// Attitude estimate at the previous epoch (clone).
    pub c_prev: Matrix3<f64>,
    pub spatial: Option<SpatialCompensation>,
    pub dt: f64,
    /// Gyro angle random walk, rad/√s.
    pub gyro_arw: f64,
    pub sigma_att: f64,
}

/// Attitude constraint from one magnetometer seen at two epochs: the
/// navigation-frame field at a fixed point does not change.
///
/// `dz = Ĉ_i (M_curr − s) − Ĉ_j M_prev ≈ [m×](φ_i − φ_j)`, `s` being the
/// optional spatial change and `m = Ĉ_i (M_curr − s)`. The attitude error
/// accrued between the epochs is `−Ĉ δbg Δt` plus angle random walk, so the
/// row sits on the gyro-bias block and the random walk goes into `R`.
/// Returns `None` when the raw reading change is below `min_change`.
pub fn build_attitude_update(
    inputs: &AttitudeInputs,
    layout: &ErrorStateLayout,
    min_change: f64,
) -> Result<Option<Measurement>, MeasError> {
    let a = inputs;
    if !(a.dt > 0.0) {
        return Err(MeasError::NonPositiveInterval(a.dt));
    }
    if (a.m_curr_b - a.m_prev_b).norm() < min_change {
        return Ok(None);
    }
    let (m_fixed_b, spatial_cov) = match &a.spatial {
        Some(s) => (a.m_curr_b - s.change_b, a.c_curr * s.cov_b * a.c_curr.transpose()),
        None => (a.m_curr_b, Matrix3::zeros()),
    };
    let m_n = a.c_curr * m_fixed_b;
    let dz = m_n - a.c_prev * a.m_prev_b;
    let m_x = skew(&m_n);

    let mut h = DMatrix::zeros(3, layout.dim());
    h.fixed_view_mut::<3, 3>(0, BG).copy_from(&(-m_x * a.c_curr * a.dt));
    let r3 = Matrix3::from_diagonal_element(2.0 * a.sigma_att * a.sigma_att)
        + spatial_cov
        + m_x * m_x.transpose() * (a.gyro_arw * a.gyro_arw * a.dt);
    let mut r = DMatrix::from_fn(3, 3, |i, j| r3[(i, j)]);
    crate::linalg::symmetrize(&mut r);
    Ok(Some(Measurement {
        h,
        dz: DVector::from_column_slice(dz.as_slice()),
        r,
    }))
}
