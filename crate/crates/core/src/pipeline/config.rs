//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//!
//! [geometry]
//! arms = [[0.0, 0.0, 0.0], [0.1, 0.1, 0.0], [-0.1, 0.1, 0.0], [-0.1, -0.1, 0.0], [0.1, -0.1, 0.0]]
//!
//! [rates]
//! imu_hz = 100.0
//! mag_hz = 50.0
//!
//! [filter]
//! window = 2
//! decimate_hz = 10.0
//! gate_quantile = 0.99
//! attitude_constraint = true
//! strict_gyro_bias_jacobian = false
//! align_duration = 1.0
//! # optional: sigma_att (default 3 × sigma_mag), magnetic_updates (default true)
//!
//! [noise]
//! gyro_arw = 3e-4
//! # ... every NoiseConfig field
//!
//! [output]          # optional
//! estimate = "estimate.csv"
//! metrics = "metrics.json"
//! ```
//!
//! Every key outside `[output]`, `sigma_att` and `magnetic_updates` is
//! required; unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::magmodel::LeverArmSet;
use crate::measmodels::GyroBiasJacobian;
use crate::msckf::NoiseConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    /// Lever arms in the body frame (m), one per magnetometer, in column order.
    pub arms: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub imu_hz: f64,
    pub mag_hz: f64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Number of cloned poses kept.
    pub window: usize,
    /// Magnetic update rate (Hz).
    pub decimate_hz: f64,
    /// χ² gate quantile; 1.0 disables gating.
    pub gate_quantile: f64,
    pub attitude_constraint: bool,
    /// Drop the field-rotation term from the gyro-bias Jacobian.
    pub strict_gyro_bias_jacobian: bool,
    /// Static window used for leveling (s).
    pub align_duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_att: Option<f64>,
    /// Off turns the run into plain dead reckoning.
    #[serde(default = "yes")]
    pub magnetic_updates: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: Geometry,
    pub rates: Rates,
    pub filter: FilterConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub output: OutputPaths,
}

impl RunConfig {
    /// Defaults for a given array geometry.
    pub fn with_arms(arms: &LeverArmSet) -> Self {
        Self {
            seed: 0,
            geometry: Geometry {
                arms: arms.arms().iter().map(|a| [a.x, a.y, a.z]).collect(),
            },
            rates: Rates {
                imu_hz: 100.0,
                mag_hz: 50.0,
            },
            filter: FilterConfig {
                window: 2,
                decimate_hz: 10.0,
                gate_quantile: 0.99,
                attitude_constraint: true,
                strict_gyro_bias_jacobian: false,
                align_duration: 1.0,
                sigma_att: None,
                magnetic_updates: true,
            },
            noise: NoiseConfig::default(),
            output: OutputPaths::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            PipelineError::Config(msg) => PipelineError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        self.lever_arms()?;
        if !(self.rates.imu_hz > 0.0 && self.rates.mag_hz > 0.0) {
            return bad("rates must be positive");
        }
        let f = &self.filter;
        if f.window == 0 {
            return bad("filter.window must be at least 1");
        }
        if !(f.decimate_hz > 0.0) {
            return bad("filter.decimate_hz must be positive");
        }
        if !(f.gate_quantile > 0.0 && f.gate_quantile <= 1.0) {
            return bad("filter.gate_quantile must lie in (0, 1]");
        }
        if !(f.align_duration > 0.0) {
            return bad("filter.align_duration must be positive");
        }
        if let Some(s) = f.sigma_att {
            if !(s > 0.0 && s.is_finite()) {
                return bad("filter.sigma_att must be positive");
            }
        }
        self.noise
            .validate()
            .map_err(|e| PipelineError::Config(format!("noise: {e}")))
    }

    pub fn lever_arms(&self) -> Result<LeverArmSet, PipelineError> {
        LeverArmSet::new(self.geometry.arms.iter().map(|a| Vector3::from(*a)).collect())
            .map_err(|e| PipelineError::Config(format!("geometry.arms: {e}")))
    }

    pub fn sigma_att(&self) -> f64 {
        self.filter.sigma_att.unwrap_or(3.0 * self.noise.sigma_mag)
    }

    pub fn gate(&self) -> Option<f64> {
        (self.filter.gate_quantile < 1.0).then_some(self.filter.gate_quantile)
    }

    pub fn gyro_bias_jacobian(&self) -> GyroBiasJacobian {
        if self.filter.strict_gyro_bias_jacobian {
            GyroBiasJacobian::LeverArmOnly
        } else {
            GyroBiasJacobian::Full
        }
    }
}
