use magio::linalg::exp_so3;
use magio::magmodel::{fit_model, predict_previous_epoch, ArrayEpoch, FieldModel, LeverArmSet, MODEL_ORDER};
use magio::measmodels::{build_attitude_update, build_mag_update, AttitudeInputs, GyroBiasJacobian, MagUpdateContext};
use magio::msckf::{ErrorStateLayout, FilterState, NoiseConfig, UpdateOutcome, BA, BG, CORE_DIM, POS};
use magio::pipeline::csvio::{parse_imu, parse_trajectory, write_imu, write_trajectory, TrajectoryPoint};
use magio::pipeline::evaluate;
use magio::simworld::{default_arms, mean_gradient_norm, truth_trajectory, FloorPreset, TrajectorySpec};
use magio::strapdown::{mechanize_step, ImuSample, NavState, GRAVITY_NED};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

fn theta() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-30.0..30.0f64, 8).prop_map(DVector::from_vec)
}

/// The default cross with each arm displaced by up to 2 cm.
fn arms() -> impl Strategy<Value = LeverArmSet> {
    prop::collection::vec(vec3(0.02), 5).prop_map(|jitter| {
        let base = default_arms();
        LeverArmSet::new(base.arms().iter().zip(&jitter).map(|(a, j)| a + j).collect()).unwrap()
    })
}

fn sym_psd(p: &DMatrix<f64>) -> bool {
    let asym = (p - p.transpose()).abs().max();
    let min_eig = p.clone().symmetric_eigenvalues().min();
    asym <= 1e-12 * p.abs().max().max(1.0) && min_eig >= -1e-9 * p.trace()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gradient_symmetric_trace_free(t in theta()) {
        let b = FieldModel::from_theta(t).unwrap().gradient();
        prop_assert_eq!(b, b.transpose());
        prop_assert!(b.trace().abs() < 1e-12);
    }

    #[test]
    fn fit_round_trip(t in theta(), arms in arms()) {
        let m = FieldModel::from_theta(t.clone()).unwrap();
        let epoch = ArrayEpoch { t: 0.0, readings: arms.arms().iter().map(|a| m.eval(a)).collect() };
        let fit = fit_model(&arms, &epoch, MODEL_ORDER).unwrap();
        prop_assert!((&fit.theta - &t).norm() <= 1e-9 * t.norm().max(1.0));
        let b = fit.gradient();
        prop_assert!((b - b.transpose()).norm() == 0.0 && b.trace().abs() < 1e-9);
    }

    #[test]
    fn fit_covariance_scaling(t in theta(), noise in prop::collection::vec(vec3(1.0), 5), s in 0.1..10.0f64) {
        let arms = default_arms();
        let m = FieldModel::from_theta(t).unwrap();
        let readings: Vec<Vector3<f64>> = arms.arms().iter().zip(&noise).map(|(a, n)| m.eval(a) + n).collect();
        let fit = fit_model(&arms, &ArrayEpoch { t: 0.0, readings: readings.clone() }, MODEL_ORDER).unwrap();
        let cov = &fit.cov_theta;
        prop_assert!(sym_psd(cov));
        let scaled = fit_model(&arms, &ArrayEpoch { t: 0.0, readings: readings.iter().map(|r| r * s).collect() }, MODEL_ORDER).unwrap();
        prop_assert!((&scaled.theta - &fit.theta * s).norm() <= 1e-9 * (fit.theta.norm() * s));
        prop_assert!((&scaled.cov_theta - cov * (s * s)).norm() <= 1e-9 * (cov.norm() * s * s).max(1e-300));
    }

    #[test]
    fn fit_residual_order_invariant(t in theta(), noise in prop::collection::vec(vec3(1.0), 5), rot in 1usize..5) {
        let base = default_arms();
        let m = FieldModel::from_theta(t).unwrap();
        let readings: Vec<Vector3<f64>> = base.arms().iter().zip(&noise).map(|(a, n)| m.eval(a) + n).collect();
        let fit = fit_model(&base, &ArrayEpoch { t: 0.0, readings: readings.clone() }, MODEL_ORDER).unwrap();
        let mut arms_p = base.arms().to_vec();
        let mut readings_p = readings;
        arms_p.rotate_left(rot);
        readings_p.rotate_left(rot);
        let perm = LeverArmSet::new(arms_p).unwrap();
        let fit_p = fit_model(&perm, &ArrayEpoch { t: 0.0, readings: readings_p }, MODEL_ORDER).unwrap();
        prop_assert!((fit.sigma2 - fit_p.sigma2).abs() <= 1e-9 * fit.sigma2 + 1e-12);
        prop_assert!((&fit.theta - &fit_p.theta).norm() <= 1e-9 * fit.theta.norm() + 1e-12, "{} vs {}", fit.theta, fit_p.theta);
    }

    #[test]
    fn identity_prediction_reproduces_eval(t in theta(), arms in arms()) {
        let m = FieldModel::from_theta(t).unwrap();
        let pred = predict_previous_epoch(&m, &arms, &Matrix3::identity(), &Vector3::zeros()).unwrap();
        for (p, a) in pred.iter().zip(arms.arms()) {
            prop_assert_eq!(*p, m.eval(a));
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Propagate { gyro: Vector3<f64>, accel: Vector3<f64> },
    Update { rows: usize, seed: u64 },
    Augment,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (vec3(1.0), vec3(3.0)).prop_map(|(gyro, a)| Op::Propagate { gyro, accel: a + Vector3::new(0.0, 0.0, -9.8) }),
        2 => (1usize..7, any::<u64>()).prop_map(|(rows, seed)| Op::Update { rows, seed }),
        1 => Just(Op::Augment),
    ]
}

fn lcg(seed: &mut u64) -> f64 {
    *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn covariance_stays_symmetric_psd(ops in prop::collection::vec(op(), 1..250), window in 1usize..4) {
        let noise = NoiseConfig::default();
        let mut filter = FilterState::new(window, &noise);
        let mut nav = NavState::at_rest(0.0, Matrix3::identity());
        for o in ops {
            match o {
                Op::Propagate { gyro, accel } => {
                    let sample = ImuSample { t: nav.t + 0.01, gyro, accel };
                    nav = mechanize_step(&nav, &sample, &GRAVITY_NED).unwrap();
                    filter.propagate(&nav, &sample, 0.01, &noise);
                }
                Op::Update { rows, mut seed } => {
                    let n = filter.layout.dim();
                    let h = DMatrix::from_fn(rows, n, |_, _| lcg(&mut seed));
                    let dz = DVector::from_fn(rows, |_, _| 0.1 * lcg(&mut seed));
                    let r = DMatrix::from_diagonal_element(rows, rows, 0.05 + lcg(&mut seed).abs());
                    let before = filter.p.diagonal();
                    if let UpdateOutcome::Accepted { .. } = filter.update(&h, &dz, &r, None).unwrap() {
                        let after = filter.p.diagonal();
                        for k in 0..n {
                            prop_assert!(after[k] <= before[k] + 1e-12 * before[k].max(1.0));
                        }
                    }
                }
                Op::Augment => {
                    let core = filter.p.view((0, 0), (CORE_DIM, CORE_DIM)).clone_owned();
                    let h = filter.clone_matrix();
                    let fresh = filter.clones.back().is_none_or(|c| nav.t > c.t);
                    let expect = if fresh { &h * &filter.p * h.transpose() } else { filter.p.clone() };
                    filter.augment_clone(&nav);
                    prop_assert_eq!(filter.p.view((0, 0), (CORE_DIM, CORE_DIM)).clone_owned(), core);
                    prop_assert!((&filter.p - &expect).abs().max() <= 1e-12 * expect.abs().max());
                    prop_assert!(filter.clones.len() <= window);
                    prop_assert!(filter.clones.iter().zip(filter.clones.iter().skip(1)).all(|(a, b)| a.t < b.t));
                }
            }
            prop_assert!(sym_psd(&filter.p));
        }
    }
}

type Context = (DVector<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>);

fn context_inputs() -> impl Strategy<Value = Context> {
    (theta(), vec3(0.3), vec3(0.1), vec3(0.3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mag_update_structure((t, att_i, dr, att_j) in context_inputs(), sigma in 0.01..1.0f64) {
        let arms = default_arms();
        let model = fit_model(&arms, &ArrayEpoch {
            t: 0.1,
            readings: arms.arms().iter().map(|a| FieldModel::from_theta(t.clone()).unwrap().eval(a)).collect(),
        }, MODEL_ORDER).unwrap();
        let prev = ArrayEpoch { t: 0.0, readings: arms.arms().iter().map(|a| model.eval(a)).collect() };
        let (c_i, c_j) = (exp_so3(&att_i), exp_so3(&att_j));
        let r_i = Vector3::new(1.0, 2.0, -0.4);
        let ctx = MagUpdateContext::from_poses(&model, &arms, &prev, &r_i, &c_i, &(r_i + dr), &c_j, 0.1, sigma);
        let layout = ErrorStateLayout::new(2);
        for mode in [GyroBiasJacobian::Full, GyroBiasJacobian::LeverArmOnly] {
            let m = build_mag_update(&ctx, &layout, mode).unwrap();
            prop_assert_eq!(m.h.nrows(), 15);
            let zero_cols: Vec<usize> = (POS..POS + 3).chain(BA..BA + 3).chain(CORE_DIM..layout.dim()).collect();
            for c in zero_cols {
                prop_assert!(m.h.column(c).iter().all(|&x| x == 0.0));
            }
            prop_assert_eq!(m.r.clone(), m.r.transpose());
            prop_assert!(m.r.clone().cholesky().is_some());
        }

        let inputs = AttitudeInputs {
            m_curr_b: prev.readings[0] + Vector3::new(1.0, 0.0, 0.0),
            m_prev_b: prev.readings[0],
            c_curr: c_i,
            c_prev: c_j,
            spatial: None,
            dt: 0.1,
            gyro_arw: 3e-4,
            sigma_att: 3.0 * sigma,
        };
        let a = build_attitude_update(&inputs, &layout, 0.5).unwrap().unwrap();
        for c in (0..layout.dim()).filter(|c| !(BG..BG + 3).contains(c)) {
            prop_assert!(a.h.column(c).iter().all(|&x| x == 0.0));
        }
        prop_assert!(a.r.clone().cholesky().is_some());
    }
}

fn trajectory(seed: u64) -> Vec<TrajectoryPoint> {
    let spec = TrajectorySpec {
        duration: 30.0,
        imu_rate: 10.0,
        mag_rate: 10.0,
        ..TrajectorySpec::default()
    };
    let _ = seed;
    truth_trajectory(&spec)
        .unwrap()
        .iter()
        .map(|s| TrajectoryPoint {
            t: s.t,
            r_n: s.r_n,
            c_bn: s.c_bn,
            v_n: Some(s.v_n),
        })
        .collect()
}

fn rigid(points: &[TrajectoryPoint], yaw: f64, shift: Vector3<f64>) -> Vec<TrajectoryPoint> {
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    points
        .iter()
        .map(|p| TrajectoryPoint {
            t: p.t,
            r_n: rot * p.r_n + shift,
            c_bn: rot * p.c_bn,
            v_n: p.v_n.map(|v| rot * v),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluate_rigid_invariance(yaw in -3.1..3.1f64, sx in -50.0..50.0f64, sy in -50.0..50.0f64,
                                 drift in vec3(0.05), spin in -0.02..0.02f64) {
        let reference = trajectory(0);
        // estimate: reference with a growing position and heading error
        let estimate: Vec<TrajectoryPoint> = reference
            .iter()
            .map(|p| TrajectoryPoint {
                t: p.t,
                r_n: p.r_n + drift * p.t,
                c_bn: Rotation3::from_axis_angle(&Vector3::z_axis(), spin * p.t).matrix() * p.c_bn,
                v_n: p.v_n.map(|v| v + drift),
            })
            .collect();
        let shift = Vector3::new(sx, sy, 0.0);
        let a = evaluate(&estimate, &reference).unwrap();
        let b = evaluate(&rigid(&estimate, yaw, shift), &rigid(&reference, yaw, shift)).unwrap();
        let tol = 1e-9;
        prop_assert!((a.rms_h_m - b.rms_h_m).abs() < tol);
        prop_assert!((a.cdf68_m - b.cdf68_m).abs() < tol);
        prop_assert!((a.rms_v_mps - b.rms_v_mps).abs() < tol);
        prop_assert!((a.rms_heading_deg - b.rms_heading_deg).abs() < 1e-7);
    }

    #[test]
    fn imu_csv_round_trip(rows in prop::collection::vec((vec3(10.0), vec3(100.0)), 1..40)) {
        let samples: Vec<ImuSample> = rows
            .iter()
            .enumerate()
            .map(|(k, (g, a))| ImuSample { t: 0.01 * (k + 1) as f64 + 1e-7, gyro: *g, accel: *a })
            .collect();
        let mut buf = Vec::new();
        write_imu(&mut buf, &samples).unwrap();
        prop_assert_eq!(parse_imu(buf.as_slice(), "imu.csv").unwrap(), samples);
    }

    #[test]
    fn trajectory_csv_round_trip(yaw in -3.1..3.1f64, shift in vec3(100.0)) {
        let points = rigid(&trajectory(0)[..20], yaw, shift);
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &points).unwrap();
        let back = parse_trajectory(buf.as_slice(), "ref.csv").unwrap();
        for (p, q) in points.iter().zip(&back) {
            prop_assert_eq!(p.t, q.t);
            prop_assert_eq!(p.r_n, q.r_n);
            prop_assert!((p.c_bn - q.c_bn).norm() < 1e-14);
        }
    }
}

#[test]
fn gradient_falls_with_height() {
    let world = FloorPreset::default().build(4);
    let norms: Vec<f64> = [0.3, 0.4, 0.55, 0.7, 1.0]
        .iter()
        .map(|&height| {
            let spec = TrajectorySpec {
                height,
                duration: 60.0,
                ..TrajectorySpec::default()
            };
            mean_gradient_norm(&world, &truth_trajectory(&spec).unwrap()).unwrap()
        })
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
}
