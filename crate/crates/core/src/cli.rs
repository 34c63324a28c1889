//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numerical.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::magmodel::MagModelError;
use crate::measmodels::MeasError;
use crate::msckf::FilterError;
use crate::pipeline::csvio::{self, TrajectoryPoint};
use crate::pipeline::evaluate::error_series;
use crate::pipeline::run::run_filter;
use crate::pipeline::sweep::{mean_by_height, sweep, truth_points};
use crate::pipeline::{evaluate, PipelineError, RunConfig};
use crate::simworld::{default_arms, generate_run, FloorPreset, SimError, TrajectorySpec};
use crate::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "magio", version, about = "Magnetometer-array aided inertial odometry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset: imu.csv, mag.csv, ref.csv and a matching config.toml.
    Simulate(SimulateArgs),
    /// Run the filter over a dataset and write the estimated trajectory.
    Run(RunArgs),
    /// Compare an estimate with a reference and print the metrics as JSON.
    Evaluate(EvaluateArgs),
    /// Write aligned estimate/reference/error time series for plotting.
    ExportPlot(EvaluateArgs),
    /// Monte-Carlo over platform heights and seeds.
    Sweep(SweepArgs),
}

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct FilterFlags {
    /// Disable the attitude constraint.
    #[arg(long)]
    pub no_att_constraint: bool,
    /// Drop the field-rotation term from the gyro-bias Jacobian.
    #[arg(long = "strict-eq39")]
    pub strict_eq39: bool,
    /// Magnetic update rate (Hz).
    #[arg(long, value_name = "HZ")]
    pub decimate: Option<f64>,
}

impl FilterFlags {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), PipelineError> {
        if self.no_att_constraint {
            cfg.filter.attitude_constraint = false;
        }
        if self.strict_eq39 {
            cfg.filter.strict_gyro_bias_jacobian = true;
        }
        if let Some(hz) = self.decimate {
            cfg.filter.decimate_hz = hz;
        }
        cfg.validate()
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Run config supplying geometry and noise; defaults otherwise.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Scenario file with `[floor]` and `[trajectory]` tables.
    #[arg(long, value_name = "PATH")]
    pub scenario: Option<PathBuf>,
    /// World and noise seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Platform height (m), overriding the scenario.
    #[arg(long)]
    pub height: Option<f64>,
    /// Perfect sensors.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub imu: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub mag: PathBuf,
    /// Estimate CSV; falls back to `output.estimate` in the config.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Reference trajectory; when given, metrics are printed as well.
    #[arg(long = "ref", value_name = "PATH")]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FilterFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimated trajectory CSV.
    #[arg(long = "est", value_name = "PATH")]
    pub estimate: PathBuf,
    #[arg(long = "ref", value_name = "PATH")]
    pub reference: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub scenario: Option<PathBuf>,
    /// Platform heights (m).
    #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.55, 0.7])]
    pub heights: Vec<f64>,
    /// Number of seeds per height.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics table CSV; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FilterFlags,
}

pub const SWEEP_HEADER: [&str; 8] = [
    "height_m",
    "seed",
    "rms_h_m",
    "cdf68_m",
    "rms_v_mps",
    "rms_heading_deg",
    "max_h_m",
    "length_m",
];

/// Simulation scenario file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub floor: FloorPreset,
    pub trajectory: TrajectorySpec,
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {}", path.display(), e.message())))
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    use MagModelError as M;
    match err {
        Error::Pipeline(e) => match e {
            PipelineError::Config(_) => EXIT_USAGE,
            PipelineError::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        },
        Error::Model(
            M::DegenerateGeometry { .. } | M::TooFewSensors(_) | M::DuplicateArm(..) | M::UnsupportedOrder(_),
        ) => EXIT_USAGE,
        Error::Model(M::ReadingCount { .. }) | Error::Measurement(MeasError::ReadingCount { .. }) => EXIT_DATA,
        Error::Model(_) | Error::Measurement(_) => EXIT_NUMERICAL,
        Error::Filter(FilterError::NonPositiveNoise(_)) => EXIT_USAGE,
        Error::Filter(_) => EXIT_NUMERICAL,
        Error::Strapdown(_) => EXIT_DATA,
        Error::Sim(SimError::InvalidSpec(_)) => EXIT_USAGE,
        Error::Sim(_) => EXIT_DATA,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, PipelineError> {
    match path {
        Some(p) => RunConfig::from_path(p),
        None => Ok(RunConfig::with_arms(&default_arms())),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), PipelineError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| PipelineError::io(p, e)),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}").and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(PipelineError::io("<stdout>", e)),
                _ => Ok(()),
            }
        }
    }
}

fn simulate(a: &SimulateArgs) -> Result<(), Error> {
    let mut cfg = load_config(a.config.as_deref())?;
    let mut scenario = match &a.scenario {
        Some(p) => Scenario::from_path(p)?,
        None => Scenario::default(),
    };
    if let Some(h) = a.height {
        scenario.trajectory.height = h;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.rates.imu_hz = scenario.trajectory.imu_rate;
    cfg.rates.mag_hz = scenario.trajectory.mag_rate;

    let arms = cfg.lever_arms()?;
    let world = scenario.floor.build(cfg.seed);
    let noise = (!a.noiseless).then_some(&cfg.noise);
    let run = generate_run(&world, &scenario.trajectory, noise, &arms, cfg.seed)?;

    std::fs::create_dir_all(&a.out).map_err(|e| PipelineError::io(&a.out, e))?;
    csvio::write_file(&a.out.join("imu.csv"), |w| csvio::write_imu(w, &run.imu))?;
    csvio::write_file(&a.out.join("mag.csv"), |w| csvio::write_mag(w, &run.mag, arms.len()))?;
    csvio::write_file(&a.out.join("ref.csv"), |w| {
        csvio::write_trajectory(w, &truth_points(&run))
    })?;
    let cfg_path = a.out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| PipelineError::io(&cfg_path, e))?;
    log::info!(
        "{} IMU samples, {} array epochs written to {}",
        run.imu.len(),
        run.mag.len(),
        a.out.display()
    );
    Ok(())
}

fn run(a: &RunArgs) -> Result<(), Error> {
    let mut cfg = RunConfig::from_path(&a.config)?;
    a.flags.apply(&mut cfg)?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.output.estimate.clone())
        .ok_or_else(|| PipelineError::Config("no output path: pass --out or set output.estimate".into()))?;
    let arms = cfg.lever_arms()?;
    let imu = csvio::read_imu(&a.imu)?;
    let mag = csvio::read_mag(&a.mag, arms.len())?;
    let result = run_filter(&cfg, &imu, &mag)?;
    log::info!("{:?}", result.stats);
    csvio::write_file(&out, |w| csvio::write_estimate(w, &result.states))?;

    if let Some(r) = &a.reference {
        let est: Vec<TrajectoryPoint> = result.states.iter().map(TrajectoryPoint::from).collect();
        let m = evaluate(&est, &csvio::read_trajectory(r)?)?;
        let text = serde_json::to_string_pretty(&m).expect("metrics serialize");
        emit(cfg.output.metrics.as_deref(), &text)?;
    }
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), Error> {
    let est = csvio::read_trajectory(&a.estimate)?;
    let reference = csvio::read_trajectory(&a.reference)?;
    let m = evaluate(&est, &reference)?;
    emit(
        a.out.as_deref(),
        &serde_json::to_string_pretty(&m).expect("metrics serialize"),
    )?;
    Ok(())
}

fn export_plot(a: &EvaluateArgs) -> Result<(), Error> {
    let est = csvio::read_trajectory(&a.estimate)?;
    let reference = csvio::read_trajectory(&a.reference)?;
    let series = error_series(&est, &reference)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| PipelineError::Data(e.to_string());
    w.write_record([
        "t",
        "est_x",
        "est_y",
        "est_z",
        "ref_x",
        "ref_y",
        "ref_z",
        "err_h_m",
        "err_v_mps",
        "err_heading_deg",
    ])
    .map_err(io)?;
    for s in &series {
        let row = [
            s.t,
            s.est.x,
            s.est.y,
            s.est.z,
            s.reference.x,
            s.reference.y,
            s.reference.z,
            s.horizontal_m,
            s.velocity_mps,
            s.heading_deg,
        ];
        w.write_record(row.iter().map(|x| x.to_string())).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Data(e.to_string()))?;
    emit(
        a.out.as_deref(),
        String::from_utf8(bytes).expect("csv is utf-8").trim_end(),
    )?;
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> Result<(), Error> {
    let mut cfg = load_config(a.config.as_deref())?;
    a.flags.apply(&mut cfg)?;
    let scenario = match &a.scenario {
        Some(p) => Scenario::from_path(p)?,
        None => Scenario::default(),
    };
    if a.heights.is_empty() || a.seeds == 0 {
        return Err(PipelineError::Config("sweep needs at least one height and one seed".into()).into());
    }
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let rows = sweep(&scenario.floor, &scenario.trajectory, &cfg, &a.heights, &seeds)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| PipelineError::Data(e.to_string());
    w.write_record(SWEEP_HEADER).map_err(io)?;
    for r in &rows {
        let m = &r.metrics;
        let mut rec: Vec<String> = [
            r.height_m,
            m.rms_h_m,
            m.cdf68_m,
            m.rms_v_mps,
            m.rms_heading_deg,
            m.max_h_m,
            m.length_m,
        ]
        .iter()
        .map(|x| x.to_string())
        .collect();
        rec.insert(1, r.seed.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Data(e.to_string()))?;
    emit(
        a.out.as_deref(),
        String::from_utf8(bytes).expect("csv is utf-8").trim_end(),
    )?;
    for (h, v) in mean_by_height(&rows, |m| m.rms_v_mps) {
        eprintln!("height {h:.3} m: mean velocity RMS {v:.4} m/s");
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::ExportPlot(a) => export_plot(a),
        Command::Sweep(a) => sweep_cmd(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
