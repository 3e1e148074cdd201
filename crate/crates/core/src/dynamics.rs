//! Robot dynamics (double integrator plus a transmitted-bits accumulator),
//! motion and communication power, and the penalized cost.
//!
//! Everything is discretized with explicit Euler on a uniform grid and the
//! running cost uses the left-endpoint rectangle rule, so that the adjoint
//! recursion in [`crate::solver`] is the exact gradient of the discrete cost.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::parse_row;
use crate::predict::CostGrid;

/// Which power term the balance factor `gamma` multiplies in the running cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaPlacement {
    /// `P_c + γ P_m` (the optimized objective by default).
    #[default]
    Motion,
    /// `P_m + γ P_c`.
    Communication,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionWeights {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub gamma: f64,
    pub gamma_on: GammaPlacement,
}

impl Default for MotionWeights {
    fn default() -> Self {
        MotionWeights {
            k1: 1.0,
            k2: 1.0,
            k3: 1.0,
            k4: 1.0,
            k5: 0.0,
            k6: 0.0,
            gamma: 0.01,
            gamma_on: GammaPlacement::Motion,
        }
    }
}

impl MotionWeights {
    pub fn validate(&self) -> Result<()> {
        let ks = [self.k1, self.k2, self.k3, self.k4, self.k5, self.k6];
        if ks.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(Error::invalid("weights.k", "all k_i must be finite and >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("weights.gamma", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Factor applied to motion power in the running cost.
    pub fn motion_scale(&self) -> f64 {
        match self.gamma_on {
            GammaPlacement::Motion => self.gamma,
            GammaPlacement::Communication => 1.0,
        }
    }

    /// Factor applied to communication power in the running cost.
    pub fn comm_scale(&self) -> f64 {
        match self.gamma_on {
            GammaPlacement::Motion => 1.0,
            GammaPlacement::Communication => self.gamma,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    pub source: Vec2,
    pub destination: Vec2,
    /// Horizon end (s).
    pub t_f: f64,
    /// Bits per Hz to deliver, `Q/B`.
    pub c: f64,
    pub u_max: f64,
    pub r_max: f64,
    /// Terminal penalties `[C1, C2, C3]` on position, velocity and bits.
    pub penalties: [f64; 3],
    /// MQAM constant `K`. Not read from configs: scenarios derive it from
    /// the channel's BER target.
    #[serde(skip)]
    pub k_mqam: f64,
    pub dt: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            source: Vec2::new(20.0, 40.0),
            destination: Vec2::new(10.0, 5.0),
            t_f: 40.0,
            c: 150.0,
            u_max: 0.5,
            r_max: 6.0,
            penalties: [10.0, 50.0, 10.0],
            k_mqam: -1.5 / (5.0 * 2e-6_f64).ln(),
            dt: 0.1,
        }
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_f > 0.0 && self.t_f.is_finite()) {
            return Err(Error::invalid("problem.t_f", "must be finite and > 0"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("problem.dt", "must be finite and > 0"));
        }
        self.steps_from(0.0)?;
        if !(self.u_max > 0.0 && self.u_max.is_finite()) {
            return Err(Error::invalid("problem.u_max", "must be finite and > 0"));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::invalid("problem.r_max", "must be finite and > 0"));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::invalid("problem.c", "must be finite and >= 0"));
        }
        if self.penalties.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::invalid("problem.penalties", "C1, C2, C3 must be finite and > 0"));
        }
        if !(self.k_mqam > 0.0 && self.k_mqam.is_finite()) {
            return Err(Error::invalid("problem.k_mqam", "must be finite and > 0"));
        }
        if !self.source.is_finite() || !self.destination.is_finite() {
            return Err(Error::invalid("problem.source/destination", "must be finite"));
        }
        Ok(())
    }

    /// Number of Euler steps on `[t0, t_f]`; the span must be an integral
    /// multiple of `dt` within 1e-9.
    pub fn steps_from(&self, t0: f64) -> Result<usize> {
        let ratio = (self.t_f - t0) / self.dt;
        let n = ratio.round();
        if !(ratio > 0.0) || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid(
                "problem.dt",
                format!("(t_f - t0) / dt = {ratio} is not a positive integer"),
            ));
        }
        Ok(n as usize)
    }

    pub fn initial_state(&self) -> RobotState {
        RobotState {
            x1: self.source,
            x2: Vec2::ZERO,
            x3: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// Position (m).
    pub x1: Vec2,
    /// Velocity (m/s).
    pub x2: Vec2,
    /// Transmitted bits per Hz.
    pub x3: f64,
}

/// Piecewise-constant controls on `[t0, t0 + N dt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTrajectory {
    pub u: Vec<Vec2>,
    pub r: Vec<f64>,
    pub dt: f64,
    pub t0: f64,
}

impl ControlTrajectory {
    pub fn zeros(n: usize, dt: f64, t0: f64) -> Self {
        ControlTrajectory {
            u: vec![Vec2::ZERO; n],
            r: vec![0.0; n],
            dt,
            t0,
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn check_shape(&self, n: usize) -> Result<()> {
        if self.u.len() != n || self.r.len() != n {
            return Err(Error::invalid(
                "controls",
                format!(
                    "expected {n} steps, got {} accelerations and {} rates",
                    self.u.len(),
                    self.r.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn is_feasible(&self, u_max: f64, r_max: f64, tol: f64) -> bool {
        self.u.iter().all(|u| u.norm() <= u_max + tol)
            && self.r.iter().all(|r| *r >= -tol && *r <= r_max + tol)
    }

    /// Projects every step onto `‖u‖ ≤ u_max`, `0 ≤ R ≤ r_max`.
    pub fn clip(&mut self, u_max: f64, r_max: f64) {
        for u in &mut self.u {
            *u = u.clamp_norm(u_max);
        }
        for r in &mut self.r {
            *r = r.clamp(0.0, r_max);
        }
    }

    /// Controls from step `from` onwards, re-based to start at that time.
    pub fn tail(&self, from: usize) -> ControlTrajectory {
        ControlTrajectory {
            u: self.u[from..].to_vec(),
            r: self.r[from..].to_vec(),
            dt: self.dt,
            t0: self.t0 + from as f64 * self.dt,
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// States on the time grid together with the cost field sampled along them.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    /// `N + 1` samples.
    pub states: Vec<RobotState>,
    /// `s(x1_k)` for every sample.
    pub s: Vec<f64>,
    /// `∂s/∂x1` at every sample.
    pub grad_s: Vec<Vec2>,
    /// Number of samples whose position fell outside the cost grid.
    pub clamped_steps: usize,
    pub dt: f64,
    pub t0: f64,
}

impl StateTrajectory {
    pub fn last(&self) -> &RobotState {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// `k1‖u‖² + k2‖v‖² + k3‖v‖ + k4 + k5‖u‖ + k6‖u‖‖v‖`.
pub fn motion_power(u: Vec2, v: Vec2, w: &MotionWeights) -> f64 {
    let (un, vn) = (u.norm(), v.norm());
    w.k1 * un * un + w.k2 * vn * vn + w.k3 * vn + w.k4 + w.k5 * un + w.k6 * un * vn
}

/// `(2^R − 1) s / K`.
pub fn comm_power(r: f64, s: f64, k_mqam: f64) -> f64 {
    (r.exp2() - 1.0) * s / k_mqam
}

/// Explicit Euler: `x1 += dt x2`, `x2 += dt u`, `x3 += dt R`.
pub fn integrate_forward(x0: RobotState, ctrl: &ControlTrajectory, grid: &CostGrid) -> StateTrajectory {
    let n = ctrl.len();
    let dt = ctrl.dt;
    let mut states = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let mut grad_s = Vec::with_capacity(n + 1);
    let mut clamped_steps = 0;
    let mut x = x0;
    for k in 0..=n {
        let sample = grid.s_and_grad(x.x1);
        clamped_steps += usize::from(sample.clamped);
        s.push(sample.s);
        grad_s.push(sample.grad);
        states.push(x);
        if k < n {
            x = RobotState {
                x1: x.x1 + dt * x.x2,
                x2: x.x2 + dt * ctrl.u[k],
                x3: x.x3 + dt * ctrl.r[k],
            };
        }
    }
    if clamped_steps > 0 {
        log::debug!("{clamped_steps} trajectory samples left the cost grid and were clamped");
    }
    StateTrajectory {
        states,
        s,
        grad_s,
        clamped_steps,
        dt,
        t0: ctrl.t0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Penalized objective.
    pub j: f64,
    /// Running energy without the terminal penalty.
    pub j_bar: f64,
    pub terminal_penalty: f64,
}

pub fn terminal_penalty(x: &RobotState, spec: &ProblemSpec, c_bar: f64) -> f64 {
    let [c1, c2, c3] = spec.penalties;
    c1 * (x.x1 - spec.destination).norm_squared() + c2 * x.x2.norm_squared() + c3 * (x.x3 - c_bar).powi(2)
}

/// Per-step running power: communication and motion terms with their scales.
pub fn running_power(r: f64, s: f64, u: Vec2, v: Vec2, w: &MotionWeights, k_mqam: f64) -> f64 {
    w.comm_scale() * comm_power(r, s, k_mqam) + w.motion_scale() * motion_power(u, v, w)
}

pub fn total_cost(
    traj: &StateTrajectory,
    ctrl: &ControlTrajectory,
    w: &MotionWeights,
    spec: &ProblemSpec,
    c_bar: f64,
) -> CostBreakdown {
    debug_assert_eq!(traj.states.len(), ctrl.len() + 1);
    let j_bar: f64 = (0..ctrl.len())
        .map(|k| {
            ctrl.dt
                * running_power(ctrl.r[k], traj.s[k], ctrl.u[k], traj.states[k].x2, w, spec.k_mqam)
        })
        .sum();
    let penalty = terminal_penalty(traj.last(), spec, c_bar);
    CostBreakdown {
        j: j_bar + penalty,
        j_bar,
        terminal_penalty: penalty,
    }
}

/// Metadata line written above the trajectory CSV columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub t0: f64,
    pub j: f64,
    pub j_bar: f64,
}

const TRAJECTORY_COLUMNS: &str = "t,x,y,vx,vy,x3,ux,uy,R,s,P_m,P_c";

/// One row per time sample; the final (terminal) row leaves the control and
/// power columns empty.
pub fn write_trajectory_csv<W: Write>(
    mut out: W,
    traj: &StateTrajectory,
    ctrl: &ControlTrajectory,
    w: &MotionWeights,
    k_mqam: f64,
    meta: &TrajectoryMeta,
) -> Result<()> {
    writeln!(
        out,
        "# seed={} t0={:?} J={:?} J_bar={:?}",
        meta.seed, meta.t0, meta.j, meta.j_bar
    )?;
    writeln!(out, "{TRAJECTORY_COLUMNS}")?;
    for (k, x) in traj.states.iter().enumerate() {
        let t = traj.t0 + k as f64 * traj.dt;
        write!(
            out,
            "{t:?},{:?},{:?},{:?},{:?},{:?}",
            x.x1.x, x.x1.y, x.x2.x, x.x2.y, x.x3
        )?;
        if k < ctrl.len() {
            let (u, r, s) = (ctrl.u[k], ctrl.r[k], traj.s[k]);
            writeln!(
                out,
                ",{:?},{:?},{r:?},{s:?},{:?},{:?}",
                u.x,
                u.y,
                motion_power(u, x.x2, w),
                comm_power(r, s, k_mqam)
            )?;
        } else {
            writeln!(out, ",,,,{:?},,", traj.s[k])?;
        }
    }
    Ok(())
}

/// Parses a trajectory CSV back into states and controls. Gradients of `s`
/// are not stored and come back as zero.
pub fn read_trajectory_csv<R: BufRead>(
    input: R,
    dt: f64,
) -> Result<(StateTrajectory, ControlTrajectory, TrajectoryMeta)> {
    let perr = |line: usize, reason: String| Error::Parse {
        what: "trajectory CSV",
        line,
        reason,
    };
    let mut lines = input.lines();
    let meta_line = lines.next().ok_or_else(|| perr(1, "empty file".into()))??;
    let meta = parse_meta(&meta_line).map_err(|e| perr(1, e))?;
    let header = lines.next().ok_or_else(|| perr(2, "missing header".into()))??;
    if header.trim() != TRAJECTORY_COLUMNS {
        return Err(perr(2, format!("unexpected header `{header}`")));
    }
    let mut states = Vec::new();
    let mut s = Vec::new();
    let mut ctrl = ControlTrajectory::zeros(0, dt, meta.t0);
    let mut terminal_seen = false;
    for (i, line) in lines.enumerate() {
        let n = i + 3;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if terminal_seen {
            return Err(perr(n, "row after the terminal row".into()));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 12 {
            return Err(perr(n, format!("expected 12 columns, got {}", cells.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            cells[idx]
                .trim()
                .parse::<f64>()
                .map_err(|e| perr(n, format!("column {idx}: {e}")))
        };
        states.push(RobotState {
            x1: Vec2::new(num(1)?, num(2)?),
            x2: Vec2::new(num(3)?, num(4)?),
            x3: num(5)?,
        });
        s.push(num(9)?);
        if cells[6].trim().is_empty() {
            terminal_seen = true;
        } else {
            ctrl.u.push(Vec2::new(num(6)?, num(7)?));
            ctrl.r.push(num(8)?);
        }
    }
    if !terminal_seen {
        return Err(perr(0, "missing terminal row".into()));
    }
    let grad_s = vec![Vec2::ZERO; states.len()];
    Ok((
        StateTrajectory {
            states,
            s,
            grad_s,
            clamped_steps: 0,
            dt,
            t0: meta.t0,
        },
        ctrl,
        meta,
    ))
}

fn parse_meta(line: &str) -> std::result::Result<TrajectoryMeta, String> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| format!("expected a `#` metadata line, got `{line}`"))?;
    let mut meta = TrajectoryMeta {
        seed: 0,
        t0: 0.0,
        j: f64::NAN,
        j_bar: f64::NAN,
    };
    for kv in body.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad field `{kv}`"))?;
        let f = || parse_row(v).map(|r| r[0]);
        match k {
            "seed" => meta.seed = v.parse().map_err(|e| format!("seed: {e}"))?,
            "t0" => meta.t0 = f()?,
            "J" => meta.j = f()?,
            "J_bar" => meta.j_bar = f()?,
            _ => return Err(format!("unknown field `{k}`")),
        }
    }
    Ok(meta)
}
