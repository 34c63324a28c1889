//! Simulated Monte-Carlo runs over platform heights and seeds.

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::csvio::TrajectoryPoint;
use super::evaluate::{evaluate, MetricsReport};
use super::run::{run_filter, RunStats};
use crate::simworld::{generate_run, FloorPreset, SimRun, TrajectorySpec};
use crate::Error;

/// Reference trajectory of a simulated run.
pub fn truth_points(run: &SimRun) -> Vec<TrajectoryPoint> {
    run.truth
        .iter()
        .map(|s| TrajectoryPoint {
            t: s.t,
            r_n: s.r_n,
            c_bn: s.c_bn,
            v_n: Some(s.v_n),
        })
        .collect()
}

/// Simulates one run with the filter's own noise model and evaluates it.
/// The world layout and the sensor noise are both drawn from `seed`.
pub fn simulate_and_evaluate(
    preset: &FloorPreset,
    spec: &TrajectorySpec,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(MetricsReport, RunStats), Error> {
    let world = preset.build(seed);
    let arms = cfg.lever_arms()?;
    let run = generate_run(&world, spec, Some(&cfg.noise), &arms, seed)?;
    let out = run_filter(cfg, &run.imu, &run.mag)?;
    let est: Vec<TrajectoryPoint> = out.states.iter().map(TrajectoryPoint::from).collect();
    Ok((evaluate(&est, &truth_points(&run))?, out.stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub height_m: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

/// Every (height, seed) combination, in parallel. Rows are ordered by height
/// then seed regardless of scheduling.
pub fn sweep(
    preset: &FloorPreset,
    base: &TrajectorySpec,
    cfg: &RunConfig,
    heights: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, Error> {
    let grid: Vec<(f64, u64)> = heights
        .iter()
        .flat_map(|&h| seeds.iter().map(move |&s| (h, s)))
        .collect();
    grid.par_iter()
        .map(|&(height, seed)| {
            let spec = TrajectorySpec { height, ..base.clone() };
            let (metrics, _) = simulate_and_evaluate(preset, &spec, cfg, seed)?;
            Ok(SweepRow {
                height_m: height,
                seed,
                metrics,
            })
        })
        .collect()
}

/// Mean of `f` over the rows of each height, in the order heights first appear.
pub fn mean_by_height(rows: &[SweepRow], f: impl Fn(&MetricsReport) -> f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(h, _, _)| *h == r.height_m) {
            Some(e) => {
                e.1 += f(&r.metrics);
                e.2 += 1;
            }
            None => out.push((r.height_m, f(&r.metrics), 1)),
        }
    }
    out.into_iter().map(|(h, s, n)| (h, s / n as f64)).collect()
}
