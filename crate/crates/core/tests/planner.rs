use std::sync::OnceLock;

use commaware_core::channel::GroundTruthField;
use commaware_core::planner::{plan_offline_on, plan_online_on, OnlineResult, OnlineSchedule, Scenario};

fn scenario() -> Scenario {
    Scenario {
        resolution: 1.0,
        field_seed: 4,
        measurement_seed: 4,
        ..Scenario::default()
    }
}

fn field() -> &'static GroundTruthField {
    static FIELD: OnceLock<GroundTruthField> = OnceLock::new();
    FIELD.get_or_init(|| scenario().synthesizer().unwrap().draw(4))
}

fn online() -> &'static OnlineResult {
    static RESULT: OnceLock<OnlineResult> = OnceLock::new();
    RESULT.get_or_init(|| plan_online_on(&scenario(), field(), &OnlineSchedule::default()).unwrap())
}

#[test]
fn single_cycle_schedule_equals_offline() {
    let sc = Scenario {
        initial_measurement_count: 300,
        ..scenario()
    };
    let sched = OnlineSchedule {
        replan_times: vec![0.0],
        ..OnlineSchedule::default()
    };
    let on = plan_online_on(&sc, field(), &sched).unwrap();
    let off = plan_offline_on(&sc, field(), 300).unwrap();
    assert_eq!(on.controls.u, off.solution.controls.u);
    assert_eq!(on.controls.r, off.solution.controls.r);
    assert_eq!(on.states.states, off.solution.states.states);
    assert_eq!(on.j_bar_executed, off.j_bar_true);
}

#[test]
fn handoff_is_exact() {
    let res = online();
    for pair in res.per_cycle.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let end = a.solution.states.states[a.executed_steps];
        assert_eq!(b.x0.x1, end.x1);
        assert_eq!(b.x0.x2, end.x2);
        assert_eq!(b.x0.x3, 0.0);
    }
}

#[test]
fn measurements_accumulate() {
    let counts: Vec<usize> = online().per_cycle.iter().map(|c| c.measurement_count).collect();
    assert_eq!(counts, vec![100, 200, 300, 400]);
}

#[test]
fn executed_segments_come_from_each_cycle() {
    let res = online();
    let mut k = 0;
    for c in &res.per_cycle {
        let n = c.executed_steps;
        assert_eq!(&res.controls.u[k..k + n], &c.solution.controls.u[..n]);
        assert_eq!(&res.controls.r[k..k + n], &c.solution.controls.r[..n]);
        assert!(c.solution.controls.tail(n).is_feasible(0.5, 6.0, 1e-12));
        k += n;
    }
    assert_eq!(k, 400);
    assert_eq!(res.states.states.len(), 401);
}

#[test]
fn bits_are_accounted_across_cycles() {
    let res = online();
    let mut c_bar = 150.0;
    let mut sent = 0.0;
    for c in &res.per_cycle {
        assert_eq!(c.c_bar, c_bar);
        let bits = c.solution.states.states[c.executed_steps].x3;
        c_bar -= bits;
        sent += bits;
    }
    let last = res.states.last();
    assert_eq!(last.x3, sent);
    assert!((last.x3 - 150.0).abs() <= 0.5, "{}", last.x3);
    let resummed: f64 = res.controls.r.iter().map(|r| 0.1 * r).sum();
    assert!((resummed - last.x3).abs() < 1e-9);
}

#[test]
fn idle_problem_costs_the_idle_floor() {
    let mut sc = scenario();
    sc.problem.c = 0.0;
    sc.problem.destination = sc.problem.source;
    let plan = plan_offline_on(&sc, field(), 100).unwrap();
    let w = sc.weights;
    assert!((plan.solution.cost.j_bar - w.gamma * w.k4 * sc.problem.t_f).abs() < 1e-6);
    assert!(plan.solution.controls.r.iter().all(|r| *r == 0.0));
}

#[test]
fn disk_sampling_option_runs() {
    let sc = Scenario {
        sample_radius: Some(10.0),
        ..scenario()
    };
    let sched = OnlineSchedule {
        replan_times: vec![0.0, 20.0],
        new_measurements_per_cycle: 50,
    };
    let res = plan_online_on(&sc, field(), &sched).unwrap();
    assert_eq!(res.per_cycle[1].measurement_count, 150);
}
