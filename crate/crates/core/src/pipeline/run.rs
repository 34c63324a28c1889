//! The filter loop: mechanize every IMU sample, and at each (decimated)
//! array epoch fit the field model, constrain against the previous epoch,
//! optionally apply the attitude constraint, feed back and clone.

use super::config::RunConfig;
use super::{PipelineError, MAX_STREAM_GAP};
use crate::magmodel::{fit_model, ArrayEpoch, FieldModel, LeverArmSet, MODEL_ORDER};
use crate::measmodels::{
    build_attitude_update, build_mag_update, AttitudeInputs, MagUpdateContext, Measurement, SpatialCompensation,
    ATTITUDE_MIN_CHANGE,
};
use crate::msckf::{CloneSnapshot, FilterError, FilterState, UpdateOutcome};
use crate::strapdown::{coarse_align, mechanize_step, static_gyro_bias, ImuSample, NavState, GRAVITY_NED};
use crate::Error;

/// Counters for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub epochs_used: usize,
    pub fit_failures: usize,
    pub mag_accepted: usize,
    pub mag_rejected: usize,
    pub att_accepted: usize,
    pub att_rejected: usize,
    pub att_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// One state per IMU sample, starting at the first sample.
    pub states: Vec<NavState>,
    pub stats: RunStats,
}

fn check_gaps(stream: &'static str, times: impl Iterator<Item = f64>) -> Result<(), PipelineError> {
    let mut last: Option<f64> = None;
    for t in times {
        if let Some(p) = last {
            if !(t > p) {
                return Err(PipelineError::Data(format!(
                    "{stream} stream is not time-sorted at t = {t}"
                )));
            }
            if t - p > MAX_STREAM_GAP {
                return Err(PipelineError::Gap {
                    stream,
                    t: p,
                    gap: t - p,
                });
            }
        }
        last = Some(t);
    }
    Ok(())
}

fn numerical(e: FilterError) -> Error {
    match e {
        FilterError::SingularInnovation => PipelineError::Numerical(e.to_string()).into(),
        other => other.into(),
    }
}

struct Loop<'a> {
    cfg: &'a RunConfig,
    arms: LeverArmSet,
    filter: FilterState,
    prev_epoch: Option<ArrayEpoch>,
    last_used: Option<f64>,
    stats: RunStats,
}

impl Loop<'_> {
    fn apply(&mut self, nav: &mut NavState, m: &Measurement) -> Result<bool, Error> {
        match self
            .filter
            .update(&m.h, &m.dz, &m.r, self.cfg.gate())
            .map_err(numerical)?
        {
            UpdateOutcome::Accepted { correction, .. } => {
                self.filter.apply_correction(nav, &correction);
                Ok(true)
            }
            UpdateOutcome::Rejected { nis, threshold } => {
                log::debug!("t={:.3}: update gated out (NIS {nis:.1} > {threshold:.1})", nav.t);
                Ok(false)
            }
        }
    }

    fn context<'m>(
        &'m self,
        model: &'m FieldModel,
        prev: &'m ArrayEpoch,
        nav: &NavState,
        clone: &CloneSnapshot,
    ) -> MagUpdateContext<'m> {
        MagUpdateContext::from_poses(
            model,
            &self.arms,
            prev,
            &nav.r_n,
            &nav.c_bn,
            &clone.r_n,
            &clone.c_bn,
            nav.t - clone.t,
            self.cfg.noise.sigma_mag,
        )
    }

    fn attitude(
        &mut self,
        nav: &mut NavState,
        model: &FieldModel,
        prev: &ArrayEpoch,
        epoch: &ArrayEpoch,
        clone: &CloneSnapshot,
    ) -> Result<(), Error> {
        let k = self.arms.reference_index();
        let spatial = {
            let ctx = self.context(model, prev, nav, clone);
            SpatialCompensation::from_context(&ctx, k, &epoch.readings[k])?
        };
        let inputs = AttitudeInputs {
            m_curr_b: epoch.readings[k],
            m_prev_b: prev.readings[k],
            c_curr: nav.c_bn,
            c_prev: clone.c_bn,
            spatial: Some(spatial),
            dt: nav.t - clone.t,
            gyro_arw: self.cfg.noise.gyro_arw,
            sigma_att: self.cfg.sigma_att(),
        };
        match build_attitude_update(&inputs, &self.filter.layout, ATTITUDE_MIN_CHANGE)? {
            Some(m) => {
                if self.apply(nav, &m)? {
                    self.stats.att_accepted += 1;
                } else {
                    self.stats.att_rejected += 1;
                }
            }
            None => self.stats.att_skipped += 1,
        }
        Ok(())
    }

    fn epoch(&mut self, nav: &mut NavState, epoch: &ArrayEpoch) -> Result<(), Error> {
        if let Some(t) = self.last_used {
            if epoch.t - t < 1.0 / self.cfg.filter.decimate_hz - 1e-6 {
                return Ok(());
            }
        }
        self.last_used = Some(epoch.t);
        self.stats.epochs_used += 1;

        let model = match fit_model(&self.arms, epoch, MODEL_ORDER) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("t={:.3}: field fit failed ({e}); epoch skipped", epoch.t);
                self.stats.fit_failures += 1;
                None
            }
        };
        let clone = self.filter.clones.back().copied();
        if let (Some(model), Some(prev), Some(clone)) = (model, self.prev_epoch.take(), clone) {
            if nav.t > clone.t {
                // the attitude constraint goes first: it relies on the attitude
                // change since the clone being pure propagation
                if self.cfg.filter.attitude_constraint {
                    self.attitude(nav, &model, &prev, epoch, &clone)?;
                }
                let m = {
                    let ctx = self.context(&model, &prev, nav, &clone);
                    build_mag_update(&ctx, &self.filter.layout, self.cfg.gyro_bias_jacobian())?
                };
                if self.apply(nav, &m)? {
                    self.stats.mag_accepted += 1;
                } else {
                    self.stats.mag_rejected += 1;
                }
            }
        }
        self.filter.augment_clone(nav);
        self.prev_epoch = Some(epoch.clone());
        Ok(())
    }
}

fn finite(nav: &NavState) -> bool {
    nav.r_n
        .iter()
        .chain(nav.v_n.iter())
        .chain(nav.c_bn.iter())
        .all(|x| x.is_finite())
}

/// Initial covariance. The gyro bias has been estimated from the static
/// window, so its prior shrinks to the uncertainty of that mean.
fn initial_filter(cfg: &RunConfig, window: &[ImuSample]) -> FilterState {
    let mut noise = cfg.noise;
    let span = window[window.len() - 1].t - window[0].t;
    noise.init_gyro_bias_std = noise.init_gyro_bias_std.min(noise.gyro_arw / span.sqrt());
    FilterState::new(cfg.filter.window, &noise)
}

/// Runs the filter over time-sorted IMU and array streams.
pub fn run_filter(cfg: &RunConfig, imu: &[ImuSample], mag: &[ArrayEpoch]) -> Result<RunOutput, Error> {
    cfg.validate()?;
    let arms = cfg.lever_arms()?;
    if imu.len() < 2 {
        return Err(PipelineError::Data("IMU stream needs at least two samples".into()).into());
    }
    check_gaps("IMU", imu.iter().map(|s| s.t))?;
    check_gaps("magnetometer", mag.iter().map(|e| e.t))?;
    if let Some(e) = mag.iter().find(|e| e.readings.len() != arms.len()) {
        return Err(PipelineError::Data(format!(
            "array epoch at t = {} has {} readings, geometry has {}",
            e.t,
            e.readings.len(),
            arms.len()
        ))
        .into());
    }
    if cfg.filter.magnetic_updates {
        let overlap = mag
            .first()
            .zip(mag.last())
            .map(|(a, b)| a.t <= imu[imu.len() - 1].t && b.t >= imu[0].t);
        if overlap != Some(true) {
            return Err(PipelineError::Data("IMU and magnetometer streams do not overlap".into()).into());
        }
    }

    let t0 = imu[0].t;
    let window: Vec<ImuSample> = imu
        .iter()
        .take_while(|s| s.t - t0 <= cfg.filter.align_duration + 1e-9)
        .copied()
        .collect();
    let c_bn = coarse_align(&window)?;
    let mut nav = NavState::at_rest(t0, c_bn);
    nav.bg = static_gyro_bias(&window);

    let mut lp = Loop {
        cfg,
        arms,
        filter: initial_filter(cfg, &window),
        prev_epoch: None,
        last_used: None,
        stats: RunStats::default(),
    };

    let mut states = Vec::with_capacity(imu.len());
    states.push(nav);
    let mut cursor = 0;
    let mut half_dt = 0.5 * (imu[1].t - imu[0].t);
    while cursor < mag.len() && mag[cursor].t < t0 - half_dt {
        cursor += 1;
    }
    for sample in &imu[1..] {
        let dt = sample.t - nav.t;
        half_dt = 0.5 * dt;
        nav = mechanize_step(&nav, sample, &GRAVITY_NED)?;
        lp.filter.propagate(&nav, sample, dt, &cfg.noise);
        while cursor < mag.len() && mag[cursor].t <= nav.t + half_dt {
            if cfg.filter.magnetic_updates {
                lp.epoch(&mut nav, &mag[cursor])?;
            }
            cursor += 1;
        }
        if !finite(&nav) {
            return Err(PipelineError::Numerical(format!("navigation state diverged at t = {:.3}", nav.t)).into());
        }
        states.push(nav);
    }
    Ok(RunOutput {
        states,
        stats: lp.stats,
    })
}

/// Plain strapdown integration from the same alignment, for comparison.
pub fn dead_reckoning(cfg: &RunConfig, imu: &[ImuSample]) -> Result<Vec<NavState>, Error> {
    let mut dr = cfg.clone();
    dr.filter.magnetic_updates = false;
    Ok(run_filter(&dr, imu, &[])?.states)
}
