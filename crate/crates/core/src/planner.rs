//! Offline planning on a single predictor and online replanning that folds in
//! new measurements every cycle and re-solves the cost-to-go.

use serde::{Deserialize, Serialize};

use crate::channel::{
    sample_measurements, sample_measurements_in, ChannelParams, FieldSynthesizer,
    GroundTruthField, MeasurementSet,
};
use crate::dynamics::{
    running_power, ControlTrajectory, MotionWeights, ProblemSpec, RobotState,
    StateTrajectory,
};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::Workspace;
use crate::predict::{build_cost_grid, CostGrid, KrigingParams, Predictor};
use crate::solver::{solve, Problem, Solution, SolverParams, TerminationReason};

/// Seed offset between replanning cycles' measurement draws.
const CYCLE_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub problem: ProblemSpec,
    pub weights: MotionWeights,
    pub channel: ChannelParams,
    pub workspace: Workspace,
    /// Grid spacing of the synthesized field and the cost grid (m).
    pub resolution: f64,
    pub initial_measurement_count: usize,
    pub field_seed: u64,
    pub measurement_seed: u64,
    /// Predictor hyper-parameters; the channel's true values when absent.
    pub kriging: Option<KrigingParams>,
    pub solver: SolverParams,
    /// Restrict online measurement draws to this radius around the robot.
    pub sample_radius: Option<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            problem: ProblemSpec::default(),
            weights: MotionWeights::default(),
            channel: ChannelParams::default(),
            workspace: Workspace::default(),
            resolution: 0.5,
            initial_measurement_count: 100,
            field_seed: 0,
            measurement_seed: 0,
            kriging: None,
            solver: SolverParams::default(),
            sample_radius: None,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.weights.validate()?;
        self.channel.validate()?;
        self.workspace.validate()?;
        self.solver.validate()?;
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::invalid("resolution", "must be finite and > 0"));
        }
        if self.initial_measurement_count < 2 {
            return Err(Error::invalid("initial_measurement_count", "must be >= 2"));
        }
        for (name, p) in [("problem.source", self.problem.source), ("problem.destination", self.problem.destination)] {
            if !self.workspace.contains(p) {
                return Err(Error::invalid(name, "must lie inside the workspace"));
            }
        }
        if let Some(r) = self.sample_radius {
            if !(r > 0.0) {
                return Err(Error::invalid("sample_radius", "must be > 0"));
            }
        }
        Ok(())
    }

    /// Problem data with `K` taken from the channel's BER target.
    pub fn problem_spec(&self) -> ProblemSpec {
        ProblemSpec {
            k_mqam: self.channel.mqam_constant(),
            ..self.problem
        }
    }

    pub fn kriging_params(&self) -> KrigingParams {
        self.kriging.unwrap_or(KrigingParams {
            xi_db: self.channel.xi_db,
            eta: self.channel.eta,
            rho_db: self.channel.rho_db,
        })
    }

    pub fn synthesizer(&self) -> Result<FieldSynthesizer> {
        self.validate()?;
        FieldSynthesizer::new(self.channel, self.workspace, self.resolution)
    }

    fn predict(&self, meas: &MeasurementSet) -> Result<(Predictor, CostGrid)> {
        let predictor = Predictor::build(meas, self.workspace.base_station, self.kriging_params())?
            .with_noise_floor(self.channel.noise_floor_dbm);
        let grid = build_cost_grid(&predictor, &self.workspace, self.resolution)?;
        Ok((predictor, grid))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineSchedule {
    pub replan_times: Vec<f64>,
    pub new_measurements_per_cycle: usize,
}

impl Default for OnlineSchedule {
    fn default() -> Self {
        OnlineSchedule {
            replan_times: vec![0.0, 10.0, 20.0, 30.0],
            new_measurements_per_cycle: 100,
        }
    }
}

impl OnlineSchedule {
    /// Step index of every replanning time.
    pub fn step_indices(&self, spec: &ProblemSpec) -> Result<Vec<usize>> {
        let times = &self.replan_times;
        if times.first() != Some(&0.0) {
            return Err(Error::invalid("schedule.replan_times", "must start at 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("schedule.replan_times", "must be strictly increasing"));
        }
        let total = spec.steps_from(0.0)?;
        times
            .iter()
            .map(|&t| {
                let ratio = t / spec.dt;
                let k = ratio.round();
                if (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
                    return Err(Error::invalid(
                        "schedule.replan_times",
                        format!("{t} is not a multiple of dt"),
                    ));
                }
                let k = k as usize;
                if k >= total {
                    return Err(Error::invalid(
                        "schedule.replan_times",
                        format!("{t} is not before t_f"),
                    ));
                }
                Ok(k)
            })
            .collect()
    }
}

/// `J̄` of a trajectory evaluated with a given `s` per step.
pub fn running_energy(
    states: &[RobotState],
    controls: &ControlTrajectory,
    s: &[f64],
    w: &MotionWeights,
    k_mqam: f64,
) -> f64 {
    (0..controls.len())
        .map(|k| {
            controls.dt * running_power(controls.r[k], s[k], controls.u[k], states[k].x2, w, k_mqam)
        })
        .sum()
}

/// `1/Υ` of the realized channel along the trajectory (no posterior
/// correction); positions outside the workspace are clamped onto it.
pub fn true_inverse_cnr(field: &GroundTruthField, states: &[RobotState]) -> Vec<f64> {
    states
        .iter()
        .map(|x| {
            let gain = field.grid.bilinear(field.workspace.clamp(x.x1));
            10f64.powf(-(gain - field.params.noise_floor_dbm) / 10.0)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct OfflinePlan {
    pub solution: Solution,
    pub predictor: Predictor,
    pub cost_grid: CostGrid,
    pub problem: ProblemSpec,
    /// Running energy of the planned trajectory under the realized channel.
    pub j_bar_true: f64,
}

/// Draws the field for `sc.field_seed` and plans on it; see [`plan_offline_on`].
pub fn plan_offline(sc: &Scenario, n_samples: usize) -> Result<OfflinePlan> {
    let field = sc.synthesizer()?.draw(sc.field_seed);
    plan_offline_on(sc, &field, n_samples)
}

/// Samples `n_samples` measurements, builds the predictor and cost grid and
/// solves from rest at the source with zero initial controls.
pub fn plan_offline_on(sc: &Scenario, field: &GroundTruthField, n_samples: usize) -> Result<OfflinePlan> {
    sc.validate()?;
    if n_samples < 2 {
        return Err(Error::invalid("n_samples", "must be >= 2"));
    }
    let meas = sample_measurements(field, n_samples, sc.measurement_seed)?;
    let (predictor, cost_grid) = sc.predict(&meas)?;
    let spec = sc.problem_spec();
    let problem = Problem::offline(&spec, &sc.weights, &cost_grid);
    let init = ControlTrajectory::zeros(problem.steps()?, spec.dt, 0.0);
    let solution = solve(&problem, &init, &sc.solver)?;
    let s_true = true_inverse_cnr(field, &solution.states.states);
    let j_bar_true = running_energy(
        &solution.states.states,
        &solution.controls,
        &s_true,
        &sc.weights,
        spec.k_mqam,
    );
    Ok(OfflinePlan {
        solution,
        predictor,
        cost_grid,
        problem: spec,
        j_bar_true,
    })
}

#[derive(Clone, Debug)]
pub struct CycleResult {
    pub t0: f64,
    pub measurement_count: usize,
    /// Bits per Hz this cycle's cost-to-go had to deliver.
    pub c_bar: f64,
    pub x0: RobotState,
    pub solution: Solution,
    /// Steps of this cycle's solution that were executed.
    pub executed_steps: usize,
    pub cost_grid: CostGrid,
}

#[derive(Clone, Debug)]
pub struct OnlineResult {
    /// Executed states with `x3` accumulated across cycles; `s` holds the
    /// prediction each step was planned with.
    pub states: StateTrajectory,
    pub controls: ControlTrajectory,
    pub per_cycle: Vec<CycleResult>,
    /// Running energy of the executed trajectory under the realized channel.
    pub j_bar_executed: f64,
    /// The same energy under the prediction each step was planned with.
    pub j_bar_predicted: f64,
    pub problem: ProblemSpec,
}

pub fn plan_online(sc: &Scenario, sched: &OnlineSchedule) -> Result<OnlineResult> {
    let field = sc.synthesizer()?.draw(sc.field_seed);
    plan_online_on(sc, &field, sched)
}

/// Replans at every scheduled time from the exact handed-off state, with
/// `x3` reset to zero and the remaining bits as the new target.
pub fn plan_online_on(sc: &Scenario, field: &GroundTruthField, sched: &OnlineSchedule) -> Result<OnlineResult> {
    sc.validate()?;
    let spec = sc.problem_spec();
    let starts = sched.step_indices(&spec)?;
    let total = spec.steps_from(0.0)?;
    if starts.len() > 1 && sched.new_measurements_per_cycle == 0 {
        return Err(Error::invalid("schedule.new_measurements_per_cycle", "must be >= 1"));
    }

    let mut meas = sample_measurements(field, sc.initial_measurement_count, sc.measurement_seed)?;
    let mut x0 = spec.initial_state();
    let mut c_bar = spec.c;
    let mut warm: Option<ControlTrajectory> = None;
    let mut bits_sent = 0.0;

    let mut states = Vec::with_capacity(total + 1);
    let mut s = Vec::with_capacity(total + 1);
    let mut grad_s = Vec::with_capacity(total + 1);
    let mut clamped_steps = 0;
    let mut controls = ControlTrajectory::zeros(0, spec.dt, 0.0);
    let mut per_cycle = Vec::with_capacity(starts.len());

    for (i, &k0) in starts.iter().enumerate() {
        let t0 = k0 as f64 * spec.dt;
        if i > 0 {
            let seed = sc.measurement_seed ^ (i as u64).wrapping_mul(CYCLE_SEED_STRIDE);
            let disk = sc.sample_radius.map(|r| (x0.x1, r));
            let fresh = match disk {
                Some(_) => sample_measurements_in(field, sched.new_measurements_per_cycle, seed, disk)?,
                None => sample_measurements(field, sched.new_measurements_per_cycle, seed)?,
            };
            meas.extend(&fresh);
        }
        let (_, cost_grid) = sc.predict(&meas)?;
        let problem = Problem {
            spec: &spec,
            weights: &sc.weights,
            grid: &cost_grid,
            x0,
            c_bar,
            t0,
        };
        let n = problem.steps()?;
        let init = match warm.take() {
            Some(w) => w,
            None => ControlTrajectory::zeros(n, spec.dt, t0),
        };
        let solution = solve(&problem, &init, &sc.solver)?;
        if solution.termination == TerminationReason::MaxIters {
            log::info!("cycle at t0 = {t0} hit max_iters; using its last iterate");
        }
        let k1 = starts.get(i + 1).copied().unwrap_or(total);
        let executed = k1 - k0;

        let traj = &solution.states;
        for k in 0..executed {
            let mut x = traj.states[k];
            x.x3 += bits_sent;
            states.push(x);
            s.push(traj.s[k]);
            grad_s.push(traj.grad_s[k]);
            clamped_steps += usize::from(!cost_grid.geometry().contains(traj.states[k].x1));
            controls.u.push(solution.controls.u[k]);
            controls.r.push(solution.controls.r[k]);
        }
        let handoff = traj.states[executed];
        let cycle_bits = handoff.x3;
        if k1 == total {
            let mut x = handoff;
            x.x3 += bits_sent;
            states.push(x);
            s.push(traj.s[executed]);
            grad_s.push(traj.grad_s[executed]);
        } else {
            warm = Some(solution.controls.tail(executed));
        }
        per_cycle.push(CycleResult {
            t0,
            measurement_count: meas.len(),
            c_bar,
            x0,
            solution,
            executed_steps: executed,
            cost_grid,
        });
        bits_sent += cycle_bits;
        c_bar -= cycle_bits;
        x0 = RobotState {
            x1: handoff.x1,
            x2: handoff.x2,
            x3: 0.0,
        };
    }

    let k_mqam = spec.k_mqam;
    let j_bar_predicted = running_energy(&states, &controls, &s, &sc.weights, k_mqam);
    let s_true = true_inverse_cnr(field, &states);
    let j_bar_executed = running_energy(&states, &controls, &s_true, &sc.weights, k_mqam);
    Ok(OnlineResult {
        states: StateTrajectory {
            states,
            s,
            grad_s,
            clamped_steps,
            dt: spec.dt,
            t0: 0.0,
        },
        controls,
        per_cycle,
        j_bar_executed,
        j_bar_predicted,
        problem: spec,
    })
}

/// Smallest distance from any sampled position to `q`.
pub fn min_distance_to(states: &[RobotState], q: Vec2) -> f64 {
    states
        .iter()
        .map(|x| x.x1.distance(q))
        .fold(f64::INFINITY, f64::min)
}
