mod common;

use proptest::prelude::*;

use commaware_core::channel::MeasurementSet;
use commaware_core::dynamics::{
    integrate_forward, read_trajectory_csv, total_cost, write_trajectory_csv, ControlTrajectory,
    MotionWeights, ProblemSpec, RobotState, TrajectoryMeta,
};
use commaware_core::predict::{KrigingParams, Predictor};
use commaware_core::solver::{
    hamiltonian, integrate_costate, minimizers, pointwise_min_r, pointwise_min_u, solve, theta,
    Problem, SolverParams,
};
use commaware_core::Vec2;

use common::{dense_posterior, flat_cost_grid, linear_cost_grid};

const QB: Vec2 = Vec2 { x: 5.0, y: 5.0 };

fn point() -> impl Strategy<Value = Vec2> {
    (0.0..50.0f64, 0.0..50.0f64)
        .prop_map(|(x, y)| Vec2::new(x, y))
        .prop_filter("away from the base station", |p| p.distance(QB) > 1.0)
}

fn separated(pts: &[Vec2], min: f64) -> bool {
    pts.iter()
        .enumerate()
        .all(|(i, a)| pts[i + 1..].iter().all(|b| a.distance(*b) >= min))
}

fn measurements(m: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<Vec2>, Vec<f64>)> {
    prop::collection::vec((point(), -100.0..-40.0f64), m)
        .prop_map(|v| v.into_iter().unzip())
        .prop_filter("well separated", |(p, _): &(Vec<Vec2>, Vec<f64>)| separated(p, 0.5))
}

fn reference_hyper() -> KrigingParams {
    KrigingParams {
        xi_db: 3.2,
        eta: 3.09,
        rho_db: 1.64,
    }
}

fn control(n: usize) -> impl Strategy<Value = ControlTrajectory> {
    (
        prop::collection::vec((0.0..0.5f64, 0.0..std::f64::consts::TAU), n),
        prop::collection::vec(0.0..6.0f64, n),
    )
        .prop_map(|(u, r)| ControlTrajectory {
            u: u.into_iter()
                .map(|(m, a)| Vec2::new(m * a.cos(), m * a.sin()))
                .collect(),
            r,
            dt: 0.1,
            t0: 0.0,
        })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_variance_is_bounded_by_prior((pos, y) in measurements(2..=20), q in point()) {
        let meas = MeasurementSet::new(pos, y).unwrap();
        let hyper = reference_hyper();
        let pred = Predictor::build(&meas, QB, hyper).unwrap();
        let (_, var) = pred.posterior(q).unwrap();
        prop_assert!(var >= 0.0 && var <= hyper.prior_variance() + 1e-12);
    }

    #[test]
    fn extra_measurement_never_raises_variance(
        (pos, y) in measurements(3..=6),
        q in point(),
    ) {
        let m = pos.len();
        let hyper = reference_hyper();
        let small = MeasurementSet::new(pos[..m - 1].to_vec(), y[..m - 1].to_vec()).unwrap();
        let large = MeasurementSet::new(pos, y).unwrap();
        let (_, v_small) = Predictor::build(&small, QB, hyper).unwrap().posterior(q).unwrap();
        let (_, v_large) = Predictor::build(&large, QB, hyper).unwrap().posterior(q).unwrap();
        prop_assert!(v_large <= v_small + 1e-10, "{} > {}", v_large, v_small);
    }

    #[test]
    fn noiseless_kriging_interpolates((pos, y) in measurements(2..=20)) {
        let meas = MeasurementSet::new(pos.clone(), y.clone()).unwrap();
        let hyper = KrigingParams { rho_db: 0.0, ..reference_hyper() };
        let pred = Predictor::build(&meas, QB, hyper).unwrap();
        for (p, yi) in pos.iter().zip(&y) {
            let (mean, var) = pred.posterior(*p).unwrap();
            prop_assert!((mean - yi).abs() <= 1e-8, "{} vs {}", mean, yi);
            prop_assert!(var <= 1e-8);
        }
    }

    #[test]
    fn posterior_matches_dense_oracle((pos, y) in measurements(2..=20), q in point()) {
        let meas = MeasurementSet::new(pos.clone(), y.clone()).unwrap();
        let h = reference_hyper();
        let pred = Predictor::build(&meas, QB, h).unwrap();
        let (mean, var) = pred.posterior(q).unwrap();
        let (om, ov) = dense_posterior(&pos, &y, QB, h.xi_db, h.eta, h.rho_db, q);
        prop_assert!(close(mean, om, 1e-10), "{} vs {}", mean, om);
        prop_assert!(close(var, ov, 1e-10), "{} vs {}", var, ov);
    }

    #[test]
    fn bit_accounting_is_exact(ctrl in control(40)) {
        let grid = flat_cost_grid(0.2);
        let traj = integrate_forward(ProblemSpec::default().initial_state(), &ctrl, &grid);
        let sequential = ctrl.r.iter().fold(0.0, |acc, r| acc + 0.1 * r);
        prop_assert_eq!(traj.last().x3, sequential);
        let total: f64 = ctrl.r.iter().sum();
        prop_assert!(close(traj.last().x3, 0.1 * total, 1e-12));
    }

    #[test]
    fn cost_never_below_idle_floor(ctrl in control(40), c_bar in 0.0..30.0f64) {
        let grid = linear_cost_grid();
        let spec = ProblemSpec { t_f: 4.0, ..ProblemSpec::default() };
        let w = MotionWeights::default();
        let traj = integrate_forward(spec.initial_state(), &ctrl, &grid);
        let cost = total_cost(&traj, &ctrl, &w, &spec, c_bar);
        prop_assert!(cost.j_bar >= w.gamma * w.k4 * spec.t_f - 1e-12);
        prop_assert!(cost.j >= cost.j_bar);
    }

    #[test]
    fn cost_survives_csv_round_trip(ctrl in control(30), c_bar in 0.0..30.0f64) {
        let grid = linear_cost_grid();
        let spec = ProblemSpec { t_f: 3.0, ..ProblemSpec::default() };
        let w = MotionWeights::default();
        let traj = integrate_forward(spec.initial_state(), &ctrl, &grid);
        let cost = total_cost(&traj, &ctrl, &w, &spec, c_bar);
        let meta = TrajectoryMeta { seed: 1, t0: 0.0, j: cost.j, j_bar: cost.j_bar };
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, &ctrl, &w, spec.k_mqam, &meta).unwrap();
        let (t2, c2, m2) = read_trajectory_csv(buf.as_slice(), 0.1).unwrap();
        let again = total_cost(&t2, &c2, &w, &spec, c_bar);
        prop_assert!(close(again.j, cost.j, 1e-9));
        prop_assert_eq!(m2, meta);
    }

    #[test]
    fn pointwise_minimizers_beat_a_grid(
        x2 in (-1.0..1.0f64, -1.0..1.0f64),
        p1 in (-50.0..50.0f64, -50.0..50.0f64),
        p2 in (-0.05..0.05f64, -0.05..0.05f64),
        p3 in -20.0..2.0f64,
        s in 1e-3..1.0f64,
    ) {
        let w = MotionWeights::default();
        let k = ProblemSpec::default().k_mqam;
        let (x2, p1, p2) = (Vec2::new(x2.0, x2.1), Vec2::new(p1.0, p1.1), Vec2::new(p2.0, p2.1));
        let us = pointwise_min_u(p2, &w, 0.5);
        let rs = pointwise_min_r(p3, s, k, 6.0);
        prop_assert!(us.norm() <= 0.5 + 1e-12 && (0.0..=6.0).contains(&rs));
        let h_star = hamiltonian(x2, us, rs, p1, p2, p3, s, &w, k);
        let n = 40;
        for i in 0..n {
            for j in 0..n {
                let u = Vec2::new(-0.5 + i as f64 / (n - 1) as f64, -0.5 + j as f64 / (n - 1) as f64);
                if u.norm() > 0.5 {
                    continue;
                }
                for l in 0..n {
                    let r = 6.0 * l as f64 / (n - 1) as f64;
                    prop_assert!(h_star <= hamiltonian(x2, u, r, p1, p2, p3, s, &w, k) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn theta_is_nonpositive(ctrl in control(25), c_bar in 0.0..30.0f64) {
        let grid = linear_cost_grid();
        let spec = ProblemSpec { t_f: 2.5, ..ProblemSpec::default() };
        let w = MotionWeights::default();
        let traj = integrate_forward(spec.initial_state(), &ctrl, &grid);
        let co = integrate_costate(&traj, &ctrl, &w, &spec, c_bar, 1e-9).unwrap();
        let star = minimizers(&traj, &co, &w, &spec, 0.0);
        prop_assert!(theta(&traj, &co, &ctrl, &star, &w, spec.k_mqam) <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn descent_is_monotone_and_feasible(
        init in control(20),
        dest in (5.0..45.0f64, 5.0..45.0f64),
        c in 0.0..40.0f64,
        iters in 1usize..40,
    ) {
        let grid = linear_cost_grid();
        let spec = ProblemSpec {
            t_f: 2.0,
            c,
            destination: Vec2::new(dest.0, dest.1),
            ..ProblemSpec::default()
        };
        let w = MotionWeights::default();
        let problem = Problem::offline(&spec, &w, &grid);
        let params = SolverParams { max_iters: iters, ..SolverParams::default() };
        let sol = solve(&problem, &init, &params).unwrap();
        let hist = sol.cost_history();
        for (rec, prev) in sol.log.iter().zip(&hist) {
            prop_assert!(rec.cost - prev <= params.alpha * rec.lambda * rec.theta + 1e-9 * prev.abs());
            prop_assert!(rec.theta <= 1e-12);
        }
        prop_assert!(hist.windows(2).all(|p| p[1] <= p[0]));
        prop_assert!(sol.controls.u.iter().all(|u| u.norm() <= 0.5 + 1e-12));
        prop_assert!(sol.controls.r.iter().all(|r| *r >= -1e-12 && *r <= 6.0 + 1e-12));
    }
}

#[test]
fn euler_error_shrinks_linearly_with_dt() {
    // Controls piecewise constant on 0.4 s pieces, integrated at three steps.
    let grid = flat_cost_grid(0.2);
    let w = MotionWeights::default();
    let pieces: Vec<(Vec2, f64)> = (0..10)
        .map(|i| {
            let a = i as f64 * 0.7;
            (Vec2::new(0.3 * a.cos(), 0.3 * a.sin()), 1.0 + (i % 3) as f64)
        })
        .collect();
    let cost_at = |dt: f64| {
        let per = (0.4 / dt).round() as usize;
        let ctrl = ControlTrajectory {
            u: pieces.iter().flat_map(|p| std::iter::repeat_n(p.0, per)).collect(),
            r: pieces.iter().flat_map(|p| std::iter::repeat_n(p.1, per)).collect(),
            dt,
            t0: 0.0,
        };
        let spec = ProblemSpec {
            dt,
            t_f: 4.0,
            ..ProblemSpec::default()
        };
        let x0 = RobotState {
            x2: Vec2::new(0.2, -0.1),
            ..spec.initial_state()
        };
        let traj = integrate_forward(x0, &ctrl, &grid);
        total_cost(&traj, &ctrl, &w, &spec, 5.0).j
    };
    let (j1, j2, j3) = (cost_at(0.2), cost_at(0.1), cost_at(0.05));
    let ratio = (j2 - j3).abs() / (j1 - j2).abs();
    assert!((0.3..0.7).contains(&ratio), "ratio {ratio}");
}
