//! Hamiltonian-based descent for the penalized co-optimization problem.
//!
//! Each iteration integrates the state forward, the costate backward, takes
//! the pointwise minimizer `(u*, R*)` of the Hamiltonian at every step as the
//! target, and moves toward it with an Armijo step `λ = βʲ` that must achieve
//! `J(u + λd) − J(u) ≤ αλθ(u)`, where `θ` is the integrated Hamiltonian gap.
//!
//! Discretization: the costate is the exact adjoint of the Euler-discretized
//! cost, so control step `k` pairs the state at `k` with the costate at
//! `k + 1`, and `dt·∂H/∂(u_k, R_k)` is exactly `∂J/∂(u_k, R_k)`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    integrate_forward, motion_power, total_cost, ControlTrajectory, CostBreakdown, MotionWeights,
    ProblemSpec, RobotState, StateTrajectory,
};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::predict::CostGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub alpha: f64,
    pub beta: f64,
    pub max_iters: usize,
    /// Largest Armijo exponent tried before declaring a local minimum.
    pub armijo_cap: u32,
    /// Speeds at or below this are treated as zero in `x2/‖x2‖`.
    pub eps_v: f64,
    pub theta_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            alpha: 0.1,
            beta: 0.5,
            max_iters: 500,
            armijo_cap: 50,
            eps_v: 1e-9,
            theta_tol: 1e-9,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("solver.alpha", "must lie in (0, 1)"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid("solver.beta", "must lie in (0, 1)"));
        }
        if self.armijo_cap < 1 {
            return Err(Error::invalid("solver.armijo_cap", "must be >= 1"));
        }
        if !(self.eps_v >= 0.0) || !(self.theta_tol >= 0.0) {
            return Err(Error::invalid("solver.eps_v/theta_tol", "must be >= 0"));
        }
        Ok(())
    }
}

/// Everything the solver needs besides the controls.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub spec: &'a ProblemSpec,
    pub weights: &'a MotionWeights,
    pub grid: &'a CostGrid,
    pub x0: RobotState,
    /// Bits per Hz still to deliver on this horizon.
    pub c_bar: f64,
    pub t0: f64,
}

impl<'a> Problem<'a> {
    pub fn offline(spec: &'a ProblemSpec, weights: &'a MotionWeights, grid: &'a CostGrid) -> Self {
        Problem {
            spec,
            weights,
            grid,
            x0: spec.initial_state(),
            c_bar: spec.c,
            t0: 0.0,
        }
    }

    pub fn steps(&self) -> Result<usize> {
        self.spec.steps_from(self.t0)
    }

    pub fn forward(&self, ctrl: &ControlTrajectory) -> StateTrajectory {
        integrate_forward(self.x0, ctrl, self.grid)
    }

    pub fn cost(&self, traj: &StateTrajectory, ctrl: &ControlTrajectory) -> CostBreakdown {
        total_cost(traj, ctrl, self.weights, self.spec, self.c_bar)
    }

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.weights.validate()?;
        if self.weights.k5 != 0.0 || self.weights.k6 != 0.0 {
            return Err(Error::invalid(
                "weights.k5/k6",
                "the closed-form Hamiltonian minimizer requires k5 = k6 = 0",
            ));
        }
        if self.weights.k1 <= 0.0 {
            return Err(Error::invalid("weights.k1", "must be > 0 for a unique minimizer"));
        }
        Ok(())
    }
}

/// Costates on the state grid (`N + 1` samples); `p3` is constant in time.
#[derive(Clone, Debug, PartialEq)]
pub struct CostateTrajectory {
    pub p1: Vec<Vec2>,
    pub p2: Vec<Vec2>,
    pub p3: f64,
}

fn unit_or_zero(v: Vec2, eps: f64) -> Vec2 {
    let n = v.norm();
    if n <= eps {
        Vec2::ZERO
    } else {
        v * (1.0 / n)
    }
}

/// Backward recursion from the terminal-penalty gradients:
///
/// ```text
/// p1_k = p1_{k+1} + dt · c_s (2^{R_k} − 1)/K · ∇s(x1_k)
/// p2_k = p2_{k+1} + dt · (p1_{k+1} + m_s (2 k2 x2_k + (k3 + k6‖u_k‖) x2_k/‖x2_k‖))
/// ```
///
/// where `m_s`, `c_s` are the motion and communication scales.
pub fn integrate_costate(
    traj: &StateTrajectory,
    ctrl: &ControlTrajectory,
    w: &MotionWeights,
    spec: &ProblemSpec,
    c_bar: f64,
    eps_v: f64,
) -> Result<CostateTrajectory> {
    let n = ctrl.len();
    let dt = ctrl.dt;
    let [c1, c2, c3] = spec.penalties;
    let last = traj.last();
    let p3 = 2.0 * c3 * (last.x3 - c_bar);
    let mut p1 = vec![Vec2::ZERO; n + 1];
    let mut p2 = vec![Vec2::ZERO; n + 1];
    p1[n] = 2.0 * c1 * (last.x1 - spec.destination);
    p2[n] = 2.0 * c2 * last.x2;
    if !(p1[n].is_finite() && p2[n].is_finite() && p3.is_finite()) {
        return Err(Error::NonFinite {
            module: "solver::integrate_costate",
            step: n,
        });
    }
    let (ms, cs) = (w.motion_scale(), w.comm_scale());
    for k in (0..n).rev() {
        let x2 = traj.states[k].x2;
        let rate_factor = cs * (ctrl.r[k].exp2() - 1.0) / spec.k_mqam;
        p1[k] = p1[k + 1] + (dt * rate_factor) * traj.grad_s[k];
        let drag = 2.0 * w.k2 * x2
            + (w.k3 + w.k6 * ctrl.u[k].norm()) * unit_or_zero(x2, eps_v);
        p2[k] = p2[k + 1] + dt * (p1[k + 1] + ms * drag);
        if !(p1[k].is_finite() && p2[k].is_finite()) {
            return Err(Error::NonFinite {
                module: "solver::integrate_costate",
                step: k,
            });
        }
    }
    Ok(CostateTrajectory { p1, p2, p3 })
}

/// Minimizer of `p2·u + m_s k1 ‖u‖²` over `‖u‖ ≤ u_max`.
pub fn pointwise_min_u(p2: Vec2, w: &MotionWeights, u_max: f64) -> Vec2 {
    let curvature = 2.0 * w.motion_scale() * w.k1;
    let n = p2.norm();
    if n == 0.0 {
        Vec2::ZERO
    } else if n / curvature <= u_max {
        p2 * (-1.0 / curvature)
    } else {
        p2 * (-u_max / n)
    }
}

/// Minimizer of `p3 R + (2^R − 1) s/K` over `0 ≤ R ≤ r_max`.
pub fn pointwise_min_r(p3: f64, s: f64, k_mqam: f64, r_max: f64) -> f64 {
    let threshold = -LN_2 * s / k_mqam;
    if p3 <= threshold {
        ((-p3 * k_mqam / (LN_2 * s)).log2()).clamp(0.0, r_max)
    } else {
        0.0
    }
}

/// Hamiltonian at one time step (the costate is the one paired with the step).
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian(
    x2: Vec2,
    u: Vec2,
    r: f64,
    p1: Vec2,
    p2: Vec2,
    p3: f64,
    s: f64,
    w: &MotionWeights,
    k_mqam: f64,
) -> f64 {
    p1.dot(x2)
        + p2.dot(u)
        + p3 * r
        + w.comm_scale() * (r.exp2() - 1.0) * s / k_mqam
        + w.motion_scale() * motion_power(u, x2, w)
}

/// Pointwise Hamiltonian minimizers along the trajectory.
pub fn minimizers(
    traj: &StateTrajectory,
    costate: &CostateTrajectory,
    w: &MotionWeights,
    spec: &ProblemSpec,
    t0: f64,
) -> ControlTrajectory {
    let n = traj.steps();
    let cs = w.comm_scale();
    let mut out = ControlTrajectory::zeros(n, traj.dt, t0);
    for k in 0..n {
        out.u[k] = pointwise_min_u(costate.p2[k + 1], w, spec.u_max);
        out.r[k] = pointwise_min_r(costate.p3, cs * traj.s[k], spec.k_mqam, spec.r_max);
    }
    out
}

/// `θ = Σ_k dt (H(x_k, u*_k, p_{k+1}) − H(x_k, u_k, p_{k+1}))`, evaluated
/// term by term so that state-only terms cancel exactly.
pub fn theta(
    traj: &StateTrajectory,
    costate: &CostateTrajectory,
    ctrl: &ControlTrajectory,
    ctrl_star: &ControlTrajectory,
    w: &MotionWeights,
    k_mqam: f64,
) -> f64 {
    let (ms, cs) = (w.motion_scale(), w.comm_scale());
    (0..ctrl.len())
        .map(|k| {
            let (u, us) = (ctrl.u[k], ctrl_star.u[k]);
            let (r, rs) = (ctrl.r[k], ctrl_star.r[k]);
            if u == us && r == rs {
                return 0.0;
            }
            let x2n = traj.states[k].x2.norm();
            let (un, usn) = (u.norm(), us.norm());
            let p2 = costate.p2[k + 1];
            let motion = w.k1 * (usn * usn - un * un) + (w.k5 + w.k6 * x2n) * (usn - un);
            let comm = cs * traj.s[k] / k_mqam * (rs.exp2() - r.exp2());
            ctrl.dt * (p2.dot(us - u) + costate.p3 * (rs - r) + comm + ms * motion)
        })
        .sum()
}

/// Signals that no `j ≤ armijo_cap` gave sufficient decrease.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArmijoCapReached;

#[derive(Clone, Debug)]
pub struct ArmijoStep {
    pub lambda: f64,
    pub j: u32,
    pub candidate: ControlTrajectory,
    pub cost: f64,
}

/// Smallest `j ≤ armijo_cap` with `J(u + βʲd) − J(u) ≤ αβʲθ`. Candidates are
/// projected onto the feasible set before evaluation.
#[allow(clippy::too_many_arguments)]
pub fn armijo(
    mut cost_of: impl FnMut(&ControlTrajectory) -> f64,
    ctrl: &ControlTrajectory,
    current_cost: f64,
    direction: &ControlTrajectory,
    theta_val: f64,
    params: &SolverParams,
    u_max: f64,
    r_max: f64,
) -> std::result::Result<ArmijoStep, ArmijoCapReached> {
    let mut lambda = 1.0;
    for j in 0..=params.armijo_cap {
        let mut candidate = ControlTrajectory {
            u: ctrl
                .u
                .iter()
                .zip(&direction.u)
                .map(|(u, d)| *u + lambda * *d)
                .collect(),
            r: ctrl
                .r
                .iter()
                .zip(&direction.r)
                .map(|(r, d)| r + lambda * d)
                .collect(),
            dt: ctrl.dt,
            t0: ctrl.t0,
        };
        candidate.clip(u_max, r_max);
        let cost = cost_of(&candidate);
        if cost - current_cost <= params.alpha * lambda * theta_val {
            return Ok(ArmijoStep {
                lambda,
                j,
                candidate,
                cost,
            });
        }
        lambda *= params.beta;
    }
    Err(ArmijoCapReached)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    ArmijoCap,
    MaxIters,
    ThetaTol,
}

/// One accepted update. `cost` is `J` after the update; `theta` belongs to
/// the iterate the step started from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub cost_bar: f64,
    pub theta: f64,
    pub lambda: f64,
    pub armijo_j: u32,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub controls: ControlTrajectory,
    pub states: StateTrajectory,
    pub cost: CostBreakdown,
    pub initial_cost: CostBreakdown,
    /// Direction computations performed, including the terminating one.
    pub iterations: usize,
    pub log: Vec<IterationRecord>,
    pub termination: TerminationReason,
    /// `θ` at the returned controls when the run stopped on the Armijo cap or
    /// the θ tolerance; `None` after `max_iters`.
    pub final_theta: Option<f64>,
}

impl Solution {
    /// `J` before the first update followed by `J` after every update.
    pub fn cost_history(&self) -> Vec<f64> {
        std::iter::once(self.initial_cost.j)
            .chain(self.log.iter().map(|r| r.cost))
            .collect()
    }

    pub fn write_log_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,J,J_bar,theta,lambda,armijo_j")?;
        writeln!(
            out,
            "0,{:?},{:?},,,",
            self.initial_cost.j, self.initial_cost.j_bar
        )?;
        for r in &self.log {
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{}",
                r.iter, r.cost, r.cost_bar, r.theta, r.lambda, r.armijo_j
            )?;
        }
        Ok(())
    }
}

/// Adjoint-assembled gradient of `J` with respect to every control
/// coordinate: `dt (p2_{k+1} + ∂(m_s P_m)/∂u_k)` and
/// `dt (p3 + c_s ln2 2^{R_k} s_k / K)`.
pub fn control_gradient(
    problem: &Problem<'_>,
    ctrl: &ControlTrajectory,
    eps_v: f64,
) -> Result<(Vec<Vec2>, Vec<f64>)> {
    let traj = problem.forward(ctrl);
    let w = problem.weights;
    let costate = integrate_costate(&traj, ctrl, w, problem.spec, problem.c_bar, eps_v)?;
    let (ms, cs) = (w.motion_scale(), w.comm_scale());
    let dt = ctrl.dt;
    let gu = (0..ctrl.len())
        .map(|k| {
            let u = ctrl.u[k];
            let x2n = traj.states[k].x2.norm();
            let motion = 2.0 * w.k1 * u + (w.k5 + w.k6 * x2n) * unit_or_zero(u, 0.0);
            dt * (costate.p2[k + 1] + ms * motion)
        })
        .collect();
    let gr = (0..ctrl.len())
        .map(|k| {
            dt * (costate.p3 + cs * LN_2 * ctrl.r[k].exp2() * traj.s[k] / problem.spec.k_mqam)
        })
        .collect();
    Ok((gu, gr))
}

/// Runs the descent from `init` until the Armijo cap, the θ tolerance or
/// `max_iters`.
pub fn solve(
    problem: &Problem<'_>,
    init: &ControlTrajectory,
    params: &SolverParams,
) -> Result<Solution> {
    problem.validate()?;
    params.validate()?;
    let n = problem.steps()?;
    init.check_shape(n)?;
    let spec = problem.spec;
    if !init.is_feasible(spec.u_max, spec.r_max, 1e-9) {
        return Err(Error::invalid("initial controls", "must satisfy the input constraints"));
    }
    let mut ctrl = init.clone();
    ctrl.clip(spec.u_max, spec.r_max);
    ctrl.t0 = problem.t0;

    let mut traj = problem.forward(&ctrl);
    let mut cost = problem.cost(&traj, &ctrl);
    let initial_cost = cost;
    let mut log = Vec::new();
    let mut termination = TerminationReason::MaxIters;
    let mut final_theta = None;
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;
        let costate = integrate_costate(&traj, &ctrl, problem.weights, spec, problem.c_bar, params.eps_v)?;
        let star = minimizers(&traj, &costate, problem.weights, spec, problem.t0);
        let th = theta(&traj, &costate, &ctrl, &star, problem.weights, spec.k_mqam);
        if th.abs() <= params.theta_tol {
            termination = TerminationReason::ThetaTol;
            final_theta = Some(th);
            break;
        }
        let direction = ControlTrajectory {
            u: star.u.iter().zip(&ctrl.u).map(|(a, b)| *a - *b).collect(),
            r: star.r.iter().zip(&ctrl.r).map(|(a, b)| a - b).collect(),
            dt: ctrl.dt,
            t0: ctrl.t0,
        };
        let step = armijo(
            |c| problem.cost(&problem.forward(c), c).j,
            &ctrl,
            cost.j,
            &direction,
            th,
            params,
            spec.u_max,
            spec.r_max,
        );
        match step {
            Ok(step) => {
                ctrl = step.candidate;
                traj = problem.forward(&ctrl);
                cost = problem.cost(&traj, &ctrl);
                log.push(IterationRecord {
                    iter: iterations,
                    cost: cost.j,
                    cost_bar: cost.j_bar,
                    theta: th,
                    lambda: step.lambda,
                    armijo_j: step.j,
                });
            }
            Err(ArmijoCapReached) => {
                termination = TerminationReason::ArmijoCap;
                final_theta = Some(th);
                break;
            }
        }
    }
    log::debug!(
        "solver stopped after {iterations} iterations ({termination:?}), J {:.6e} -> {:.6e}",
        initial_cost.j,
        cost.j
    );
    Ok(Solution {
        controls: ctrl,
        states: traj,
        cost,
        initial_cost,
        iterations,
        log,
        termination,
        final_theta,
    })
}
