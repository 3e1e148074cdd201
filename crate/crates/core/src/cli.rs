//! Command-line runs: configuration loading, dispatch over seeds and
//! artifact writing.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::channel::{sample_measurements, FieldSynthesizer, GroundTruthField};
use crate::dynamics::{
    terminal_penalty, write_trajectory_csv, ControlTrajectory, MotionWeights, RobotState,
    StateTrajectory, TrajectoryMeta,
};
use crate::error::Error;
use crate::planner::{plan_offline_on, plan_online_on, OnlineSchedule, Scenario};
use crate::predict::{build_cost_grid, prediction_error, Predictor};
use crate::solver::Solution;

pub const THREADS_ENV: &str = "COMMAWARE_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SimulateChannel,
    Predict,
    PlanOffline,
    PlanOnline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SimulateChannel => "simulate-channel",
            Mode::Predict => "predict",
            Mode::PlanOffline => "plan-offline",
            Mode::PlanOnline => "plan-online",
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_offline_samples() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub schedule: OnlineSchedule,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Each seed sets both the field and the measurement seed. Empty runs
    /// the scenario's own seeds once.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Measurements used by the predict and plan-offline modes.
    #[serde(default = "default_offline_samples")]
    pub offline_samples: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(e) if e.is_numerical() => 3,
            CliError::Run(Error::InvalidParameter { .. }) => 2,
            CliError::Run(_) => 1,
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("field `{path}`: {}", e.into_inner()))
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

#[derive(Debug, Parser)]
#[command(name = "commaware", version, about = "Communication-aware motion planning runs")]
pub struct Args {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Args {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = load_config(&self.config)?;
        if let Some(mode) = self.mode {
            cfg.mode = Some(mode);
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

/// Thread count requested through the environment, if any.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

/// Runs every seed of `cfg`, writes all artifacts and returns the top-level
/// summary.
pub fn run(cfg: &RunConfig, threads: Option<usize>) -> Result<Value, CliError> {
    let mode = cfg
        .mode
        .ok_or_else(|| CliError::Config("field `mode`: missing (set it in the config or pass --mode)".into()))?;
    cfg.scenario.validate()?;
    if mode == Mode::PlanOnline {
        cfg.schedule.step_indices(&cfg.scenario.problem_spec())?;
    }
    if matches!(mode, Mode::Predict | Mode::PlanOffline) && cfg.offline_samples < 2 {
        return Err(Error::invalid("offline_samples", "must be >= 2").into());
    }

    fs::create_dir_all(&cfg.output_dir).map_err(Error::from)?;
    let resolved = RunConfig {
        mode: Some(mode),
        ..cfg.clone()
    };
    write_json(&cfg.output_dir.join("manifest.json"), &serde_json::to_value(&resolved).expect("config serializes"))?;

    let scenarios: Vec<(u64, Scenario)> = if cfg.seeds.is_empty() {
        vec![(cfg.scenario.field_seed, cfg.scenario.clone())]
    } else {
        cfg.seeds
            .iter()
            .map(|&seed| {
                (
                    seed,
                    Scenario {
                        field_seed: seed,
                        measurement_seed: seed,
                        ..cfg.scenario.clone()
                    },
                )
            })
            .collect()
    };

    let synth = cfg.scenario.synthesizer()?;
    let work = |(seed, sc): &(u64, Scenario)| run_seed(cfg, mode, &synth, *seed, sc);
    let results: Vec<Result<Value, CliError>> = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("{THREADS_ENV}: {e}")))?
            .install(|| scenarios.par_iter().map(work).collect()),
        None => scenarios.par_iter().map(work).collect(),
    };
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = json!({
        "mode": mode.name(),
        "seeds": scenarios.iter().map(|(s, _)| *s).collect::<Vec<_>>(),
        "runs": runs,
    });
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &Value) -> Result<(), Error> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(std::io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn state_json(x: &RobotState) -> Value {
    json!({ "x1": x.x1, "x2": x.x2, "x3": x.x3 })
}

fn write_trajectory(
    path: &Path,
    states: &StateTrajectory,
    controls: &ControlTrajectory,
    w: &MotionWeights,
    k_mqam: f64,
    meta: &TrajectoryMeta,
) -> Result<(), Error> {
    let mut out = create(path)?;
    write_trajectory_csv(&mut out, states, controls, w, k_mqam, meta)?;
    out.flush()?;
    Ok(())
}

fn write_iterations(path: &Path, sol: &Solution) -> Result<(), Error> {
    let mut out = create(path)?;
    sol.write_log_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn cycle_json(t0: f64, m: usize, sol: &Solution) -> Value {
    json!({
        "t0": t0,
        "m": m,
        "iterations": sol.iterations,
        "termination": sol.termination,
        "J": sol.cost.j,
        "J_bar": sol.cost.j_bar,
    })
}

fn run_seed(
    cfg: &RunConfig,
    mode: Mode,
    synth: &FieldSynthesizer,
    seed: u64,
    sc: &Scenario,
) -> Result<Value, CliError> {
    let dir = cfg.output_dir.join(format!("seed-{seed}"));
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let field = synth.draw(sc.field_seed);
    log::info!("{} seed {seed}", mode.name());
    let summary = match mode {
        Mode::SimulateChannel => simulate_channel(&dir, &field)?,
        Mode::Predict => predict(&dir, cfg, sc, &field)?,
        Mode::PlanOffline => plan_offline(&dir, cfg, sc, &field)?,
        Mode::PlanOnline => plan_online(&dir, cfg, sc, &field)?,
    };
    let mut summary = summary;
    summary["mode"] = json!(mode.name());
    summary["seeds"] = json!([seed]);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn simulate_channel(dir: &Path, field: &GroundTruthField) -> Result<Value, Error> {
    let mut out = create(&dir.join("field.csv"))?;
    field.write_csv(&mut out)?;
    out.flush()?;
    let values = field.grid.values();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(json!({
        "nodes": values.len(),
        "mean_db": mean,
        "min_db": values.iter().copied().fold(f64::INFINITY, f64::min),
        "max_db": values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }))
}

fn predict(dir: &Path, cfg: &RunConfig, sc: &Scenario, field: &GroundTruthField) -> Result<Value, Error> {
    let meas = sample_measurements(field, cfg.offline_samples, sc.measurement_seed)?;
    let mut out = create(&dir.join("measurements.csv"))?;
    meas.write_csv(&mut out)?;
    out.flush()?;
    let predictor = Predictor::build(&meas, sc.workspace.base_station, sc.kriging_params())?
        .with_noise_floor(sc.channel.noise_floor_dbm);
    let grid = build_cost_grid(&predictor, &sc.workspace, sc.resolution)?;
    let mut out = create(&dir.join("cost_grid.csv"))?;
    grid.write_csv(&mut out)?;
    out.flush()?;
    let err = prediction_error(&predictor, field);
    write_json(&dir.join("prediction_error.json"), &json!(err))?;
    Ok(json!({
        "m": meas.len(),
        "path_loss_fit": predictor.fit(),
        "prediction_error": err,
    }))
}

fn plan_offline(dir: &Path, cfg: &RunConfig, sc: &Scenario, field: &GroundTruthField) -> Result<Value, Error> {
    let plan = plan_offline_on(sc, field, cfg.offline_samples)?;
    let sol = &plan.solution;
    let mut out = create(&dir.join("cost_grid.csv"))?;
    plan.cost_grid.write_csv(&mut out)?;
    out.flush()?;
    let meta = TrajectoryMeta {
        seed: sc.field_seed,
        t0: 0.0,
        j: sol.cost.j,
        j_bar: sol.cost.j_bar,
    };
    write_trajectory(&dir.join("trajectory.csv"), &sol.states, &sol.controls, &sc.weights, plan.problem.k_mqam, &meta)?;
    write_iterations(&dir.join("iterations.csv"), sol)?;
    Ok(json!({
        "J": sol.cost.j,
        "J_bar": sol.cost.j_bar,
        "J_bar_true": plan.j_bar_true,
        "k_mqam": plan.problem.k_mqam,
        "final_state": state_json(sol.states.last()),
        "iterations": sol.iterations,
        "termination": sol.termination,
        "per_cycle": [cycle_json(0.0, cfg.offline_samples, sol)],
    }))
}

fn plan_online(dir: &Path, cfg: &RunConfig, sc: &Scenario, field: &GroundTruthField) -> Result<Value, Error> {
    let res = plan_online_on(sc, field, &cfg.schedule)?;
    let k_mqam = res.problem.k_mqam;
    for (i, c) in res.per_cycle.iter().enumerate() {
        let sol = &c.solution;
        let meta = TrajectoryMeta {
            seed: sc.field_seed,
            t0: c.t0,
            j: sol.cost.j,
            j_bar: sol.cost.j_bar,
        };
        write_trajectory(&dir.join(format!("cycle-{i}.csv")), &sol.states, &sol.controls, &sc.weights, k_mqam, &meta)?;
        write_iterations(&dir.join(format!("iterations-cycle-{i}.csv")), sol)?;
    }
    let last = res.states.last();
    let j = res.j_bar_executed + terminal_penalty(last, &res.problem, res.problem.c);
    let meta = TrajectoryMeta {
        seed: sc.field_seed,
        t0: 0.0,
        j,
        j_bar: res.j_bar_executed,
    };
    write_trajectory(&dir.join("executed.csv"), &res.states, &res.controls, &sc.weights, k_mqam, &meta)?;
    Ok(json!({
        "J": j,
        "J_bar": res.j_bar_executed,
        "J_bar_predicted": res.j_bar_predicted,
        "k_mqam": k_mqam,
        "final_state": state_json(last),
        "per_cycle": res
            .per_cycle
            .iter()
            .map(|c| cycle_json(c.t0, c.measurement_count, &c.solution))
            .collect::<Vec<_>>(),
    }))
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with(args: &Args) -> i32 {
    let outcome = args
        .resolve()
        .and_then(|cfg| threads_from_env().map(|t| (cfg, t)))
        .and_then(|(cfg, threads)| run(&cfg, threads));
    match outcome {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("commaware: {e}");
            e.exit_code()
        }
    }
}
