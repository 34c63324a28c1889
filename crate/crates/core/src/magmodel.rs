//! Local magnetic-field model built from a magnetometer array.
//!
//! The field around the platform is represented as the gradient of a scalar
//! potential that is a polynomial in the sensor position. Enforcing zero curl
//! (via the potential) and zero divergence leaves, for the first-order model,
//! eight coefficients:
//!
//! ```text
//! M(r) = Φ(r) θ,   Φ(r) = | 1 0 0 y z 0 2x  0  |
//!                         | 0 1 0 x 0 z  0  2y |
//!                         | 0 0 1 0 x y -2z -2z |
//! ```
//!
//! Coefficients are fitted per epoch by least squares over the array and used
//! to predict what each magnetometer read at the previous epoch, given the
//! relative pose between the two epochs.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::linalg::orthonormality_error;

/// Only model order currently supported.
pub const MODEL_ORDER: usize = 1;

/// Reciprocal condition number below which the array geometry is rejected.
pub const RCOND_THRESHOLD: f64 = 1e-10;

/// Distance (m) from the model origin beyond which evaluations are reported as
/// extrapolation.
pub const DEFAULT_VALIDITY_RADIUS: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagModelError {
    #[error("unsupported model order {0} (only order 1 is implemented)")]
    UnsupportedOrder(usize),
    #[error("degenerate array geometry (reciprocal condition {rcond:.3e})")]
    DegenerateGeometry { rcond: f64 },
    #[error("underdetermined fit: {rows} observations for {unknowns} coefficients")]
    Underdetermined { rows: usize, unknowns: usize },
    #[error("need at least 3 magnetometers, got {0}")]
    TooFewSensors(usize),
    #[error("lever arms {0} and {1} coincide")]
    DuplicateArm(usize, usize),
    #[error("epoch has {got} readings but the array has {expected} sensors")]
    ReadingCount { expected: usize, got: usize },
    #[error("relative rotation is not orthonormal (|CᵀC - I| = {0:.3e})")]
    NotOrthonormal(f64),
}

/// Number of free coefficients of an order-`l` curl- and divergence-free model.
pub fn coefficient_count(order: usize) -> usize {
    order * order + 4 * order + 3
}

fn check_order(order: usize) -> Result<(), MagModelError> {
    if order == MODEL_ORDER {
        Ok(())
    } else {
        Err(MagModelError::UnsupportedOrder(order))
    }
}

/// Coefficient matrix Φ(r) (3 × 8 for order 1).
pub fn build_phi(r: &Vector3<f64>, order: usize) -> Result<DMatrix<f64>, MagModelError> {
    check_order(order)?;
    let (x, y, z) = (r.x, r.y, r.z);
    #[rustfmt::skip]
    let phi = DMatrix::from_row_slice(3, 8, &[
        1.0, 0.0, 0.0, y,   z,   0.0, 2.0 * x, 0.0,
        0.0, 1.0, 0.0, x,   0.0, z,   0.0,     2.0 * y,
        0.0, 0.0, 1.0, 0.0, x,   y,   -2.0 * z, -2.0 * z,
    ]);
    Ok(phi)
}

/// Φ stacked over a list of points, 3 rows per point.
pub fn stack_phi(points: &[Vector3<f64>], order: usize) -> Result<DMatrix<f64>, MagModelError> {
    check_order(order)?;
    let cols = coefficient_count(order);
    let mut phi = DMatrix::zeros(3 * points.len(), cols);
    for (k, p) in points.iter().enumerate() {
        phi.view_mut((3 * k, 0), (3, cols)).copy_from(&build_phi(p, order)?);
    }
    Ok(phi)
}

/// Magnetometer positions in the body frame (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct LeverArmSet {
    arms: Vec<Vector3<f64>>,
}

impl LeverArmSet {
    pub fn new(arms: Vec<Vector3<f64>>) -> Result<Self, MagModelError> {
        let unknowns = coefficient_count(MODEL_ORDER);
        if arms.len() < 3 {
            return Err(MagModelError::TooFewSensors(arms.len()));
        }
        for i in 0..arms.len() {
            for j in (i + 1)..arms.len() {
                if (arms[i] - arms[j]).norm() < 1e-9 {
                    return Err(MagModelError::DuplicateArm(i, j));
                }
            }
        }
        if 3 * arms.len() <= unknowns {
            return Err(MagModelError::Underdetermined {
                rows: 3 * arms.len(),
                unknowns,
            });
        }
        let rcond = crate::linalg::reciprocal_condition(&stack_phi(&arms, MODEL_ORDER)?);
        if rcond < RCOND_THRESHOLD {
            return Err(MagModelError::DegenerateGeometry { rcond });
        }
        Ok(Self { arms })
    }

    pub fn arms(&self) -> &[Vector3<f64>] {
        &self.arms
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.arms.iter().sum::<Vector3<f64>>() / self.arms.len() as f64
    }

    /// Index of the arm closest to the array centroid.
    pub fn reference_index(&self) -> usize {
        let c = self.centroid();
        let mut best = 0;
        for (k, a) in self.arms.iter().enumerate() {
            if (a - c).norm() < (self.arms[best] - c).norm() {
                best = k;
            }
        }
        best
    }
}

/// Simultaneous readings of every magnetometer in the array (µT, body frame).
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayEpoch {
    pub t: f64,
    pub readings: Vec<Vector3<f64>>,
}

/// A fitted local field model.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    pub order: usize,
    pub theta: DVector<f64>,
    pub cov_theta: DMatrix<f64>,
    /// Residual variance per scalar observation (µT²).
    pub sigma2: f64,
}

impl FieldModel {
    /// Model with the given coefficients and zero uncertainty.
    pub fn from_theta(theta: DVector<f64>) -> Result<Self, MagModelError> {
        if theta.len() != coefficient_count(MODEL_ORDER) {
            return Err(MagModelError::UnsupportedOrder(theta.len()));
        }
        let n = theta.len();
        Ok(Self {
            order: MODEL_ORDER,
            theta,
            cov_theta: DMatrix::zeros(n, n),
            sigma2: 0.0,
        })
    }

    /// Modeled field at `r` (model frame).
    pub fn eval(&self, r: &Vector3<f64>) -> Vector3<f64> {
        let t = &self.theta;
        Vector3::new(
            t[0] + t[3] * r.y + t[4] * r.z + 2.0 * t[6] * r.x,
            t[1] + t[3] * r.x + t[5] * r.z + 2.0 * t[7] * r.y,
            t[2] + t[4] * r.x + t[5] * r.y - 2.0 * (t[6] + t[7]) * r.z,
        )
    }

    /// Spatial Jacobian of [`FieldModel::eval`]; symmetric and trace-free.
    pub fn gradient(&self) -> Matrix3<f64> {
        let t = &self.theta;
        Matrix3::new(
            2.0 * t[6],
            t[3],
            t[4],
            t[3],
            2.0 * t[7],
            t[5],
            t[4],
            t[5],
            -2.0 * (t[6] + t[7]),
        )
    }
}

/// Least-squares fit of the field model to one array epoch.
///
/// Solved through a QR factorization of the stacked Φ; `cov_theta = σ² (ΦᵀΦ)⁻¹` with
/// `σ² = RSS / (3N − dim θ)`.
pub fn fit_model(arms: &LeverArmSet, epoch: &ArrayEpoch, order: usize) -> Result<FieldModel, MagModelError> {
    check_order(order)?;
    if epoch.readings.len() != arms.len() {
        return Err(MagModelError::ReadingCount {
            expected: arms.len(),
            got: epoch.readings.len(),
        });
    }
    let unknowns = coefficient_count(order);
    let rows = 3 * arms.len();
    if rows <= unknowns {
        return Err(MagModelError::Underdetermined { rows, unknowns });
    }
    let phi = stack_phi(arms.arms(), order)?;
    let m = DVector::from_iterator(rows, epoch.readings.iter().flat_map(|v| v.iter().copied()));

    let sv = phi.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
    if rcond < RCOND_THRESHOLD {
        return Err(MagModelError::DegenerateGeometry { rcond });
    }
    // nalgebra's SVD vectors can lose accuracy on this structure; the
    // triangular factor of a Householder QR is used for the solve
    let qr = phi.clone().qr();
    let r = qr.r();
    let qtm = qr.q().transpose() * &m;
    let theta = r.solve_upper_triangular(&qtm).expect("full rank after rcond check");

    let residual = &m - &phi * &theta;
    let sigma2 = residual.norm_squared() / (rows - unknowns) as f64;

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(unknowns, unknowns))
        .expect("full rank after rcond check");
    let mut cov_theta = &r_inv * r_inv.transpose() * sigma2;
    crate::linalg::symmetrize(&mut cov_theta);

    Ok(FieldModel {
        order,
        theta,
        cov_theta,
        sigma2,
    })
}

/// Φ(r)·θ, warning when `r` lies outside `validity_radius`.
pub fn eval_field_within(model: &FieldModel, r: &Vector3<f64>, validity_radius: f64) -> Vector3<f64> {
    if r.norm() > validity_radius {
        log::warn!(
            "field model evaluated at {:.3} m, outside its {:.2} m validity radius",
            r.norm(),
            validity_radius
        );
    }
    model.eval(r)
}

/// Φ(r)·θ with the default validity radius.
pub fn eval_field(model: &FieldModel, r: &Vector3<f64>) -> Vector3<f64> {
    eval_field_within(model, r, DEFAULT_VALIDITY_RADIUS)
}

/// Field-gradient matrix B(θ) of a first-order model.
pub fn gradient_matrix(model: &FieldModel) -> Result<Matrix3<f64>, MagModelError> {
    check_order(model.order)?;
    Ok(model.gradient())
}

/// Where each magnetometer was at the previous epoch, in current-body coordinates:
/// `C_j^i · l + Δr^{b_i}`.
pub fn previous_arm_positions(
    arms: &LeverArmSet,
    rel_rot: &Matrix3<f64>,
    delta_r_bi: &Vector3<f64>,
) -> Vec<Vector3<f64>> {
    arms.arms().iter().map(|l| rel_rot * l + delta_r_bi).collect()
}

/// Predicts the previous-epoch readings (in the previous body frame) from a
/// model fitted at the current epoch.
///
/// `rel_rot` is `C_j^i` (previous body to current body) and `delta_r_bi` the
/// displacement from current to previous position, in current-body axes.
pub fn predict_previous_epoch(
    model: &FieldModel,
    arms: &LeverArmSet,
    rel_rot: &Matrix3<f64>,
    delta_r_bi: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>, MagModelError> {
    let err = orthonormality_error(rel_rot);
    if err >= 1e-9 {
        return Err(MagModelError::NotOrthonormal(err));
    }
    let back = rel_rot.transpose();
    Ok(previous_arm_positions(arms, rel_rot, delta_r_bi)
        .iter()
        .map(|p| back * model.eval(p))
        .collect())
}
