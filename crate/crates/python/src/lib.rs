//! Python bindings for `commaware_core`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use commaware_core::channel::{self, GroundTruthField};
use commaware_core::dynamics::{self, MotionWeights, RobotState};
use commaware_core::planner::{self, OnlineSchedule};
use commaware_core::predict::{self, KrigingParams};
use commaware_core::solver;
use commaware_core::{Error, Vec2};

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn v(p: (f64, f64)) -> Vec2 {
    Vec2::new(p.0, p.1)
}

fn t(p: Vec2) -> (f64, f64) {
    (p.x, p.y)
}

type StateTuple = ((f64, f64), (f64, f64), f64);

fn state(x: &RobotState) -> StateTuple {
    (t(x.x1), t(x.x2), x.x3)
}

/// Scenario configuration. Build from a JSON document; omitted fields take
/// their default values.
#[pyclass(module = "commaware", skip_from_py_object)]
#[derive(Clone)]
pub struct Scenario {
    inner: planner::Scenario,
}

#[pymethods]
impl Scenario {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => planner::Scenario::default(),
        };
        inner.validate().map_err(to_py)?;
        Ok(Scenario { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("scenario serializes")
    }

    #[getter]
    fn field_seed(&self) -> u64 {
        self.inner.field_seed
    }

    #[setter]
    fn set_field_seed(&mut self, seed: u64) {
        self.inner.field_seed = seed;
    }

    #[getter]
    fn measurement_seed(&self) -> u64 {
        self.inner.measurement_seed
    }

    #[setter]
    fn set_measurement_seed(&mut self, seed: u64) {
        self.inner.measurement_seed = seed;
    }

    #[getter]
    fn resolution(&self) -> f64 {
        self.inner.resolution
    }

    #[getter]
    fn base_station(&self) -> (f64, f64) {
        t(self.inner.workspace.base_station)
    }

    #[getter]
    fn k_mqam(&self) -> f64 {
        self.inner.problem_spec().k_mqam
    }
}

/// Factorized field covariance; draws realizations cheaply once built.
#[pyclass(module = "commaware")]
pub struct FieldSynthesizer {
    inner: channel::FieldSynthesizer,
}

#[pymethods]
impl FieldSynthesizer {
    #[new]
    fn new(scenario: &Scenario) -> PyResult<Self> {
        Ok(FieldSynthesizer {
            inner: scenario.inner.synthesizer().map_err(to_py)?,
        })
    }

    fn draw(&self, seed: u64) -> Field {
        Field {
            inner: self.inner.draw(seed),
        }
    }
}

/// A realized channel (dB) on a regular grid.
#[pyclass(module = "commaware", skip_from_py_object)]
#[derive(Clone)]
pub struct Field {
    inner: GroundTruthField,
}

#[pymethods]
impl Field {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn resolution(&self) -> f64 {
        self.inner.resolution()
    }

    /// `(nx, ny)` node counts.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        let g = self.inner.grid.geometry();
        (g.nx, g.ny)
    }

    /// Row-major values, one inner list per grid row.
    fn values(&self) -> Vec<Vec<f64>> {
        let nx = self.inner.grid.geometry().nx;
        self.inner.grid.values().chunks(nx).map(<[f64]>::to_vec).collect()
    }

    fn true_cnr(&self, x: f64, y: f64) -> PyResult<f64> {
        self.inner.true_cnr(Vec2::new(x, y)).map_err(to_py)
    }

    fn sample(&self, n: usize, seed: u64) -> PyResult<MeasurementSet> {
        Ok(MeasurementSet {
            inner: channel::sample_measurements(&self.inner, n, seed).map_err(to_py)?,
        })
    }
}

#[pyclass(module = "commaware", skip_from_py_object)]
#[derive(Clone)]
pub struct MeasurementSet {
    inner: channel::MeasurementSet,
}

#[pymethods]
impl MeasurementSet {
    #[new]
    fn new(positions: Vec<(f64, f64)>, values_db: Vec<f64>) -> PyResult<Self> {
        let positions = positions.into_iter().map(v).collect();
        Ok(MeasurementSet {
            inner: channel::MeasurementSet::new(positions, values_db).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn positions(&self) -> Vec<(f64, f64)> {
        self.inner.positions().iter().copied().map(t).collect()
    }

    #[getter]
    fn values_db(&self) -> Vec<f64> {
        self.inner.values_db().to_vec()
    }
}

/// Kriging posterior of the channel given measurements.
#[pyclass(module = "commaware")]
pub struct Predictor {
    inner: predict::Predictor,
}

#[pymethods]
impl Predictor {
    #[new]
    #[pyo3(signature = (measurements, base_station, xi_db, eta, rho_db, noise_floor_dbm = 0.0))]
    fn new(
        measurements: &MeasurementSet,
        base_station: (f64, f64),
        xi_db: f64,
        eta: f64,
        rho_db: f64,
        noise_floor_dbm: f64,
    ) -> PyResult<Self> {
        let hyper = KrigingParams { xi_db, eta, rho_db };
        let inner = predict::Predictor::build(&measurements.inner, v(base_station), hyper)
            .map_err(to_py)?
            .with_noise_floor(noise_floor_dbm);
        Ok(Predictor { inner })
    }

    /// `(k_pl, n_pl)` of the path-loss regression.
    #[getter]
    fn path_loss_fit(&self) -> (f64, f64) {
        let f = self.inner.fit();
        (f.k_pl, f.n_pl)
    }

    /// `(mean_db, variance_db2)` at a point.
    fn posterior(&self, x: f64, y: f64) -> PyResult<(f64, f64)> {
        self.inner.posterior(Vec2::new(x, y)).map_err(to_py)
    }

    fn expected_inv_cnr(&self, x: f64, y: f64) -> PyResult<f64> {
        self.inner.expected_inv_cnr(Vec2::new(x, y)).map_err(to_py)
    }

    /// Posterior-mean error summary against a realized field.
    fn error_against<'py>(&self, py: Python<'py>, field: &Field) -> PyResult<Bound<'py, PyDict>> {
        let e = predict::prediction_error(&self.inner, &field.inner);
        let d = PyDict::new(py);
        d.set_item("rmse_db", e.rmse_db)?;
        d.set_item("mean_error_db", e.mean_error_db)?;
        d.set_item("max_abs_error_db", e.max_abs_error_db)?;
        d.set_item("coverage_2sigma", e.coverage_2sigma)?;
        d.set_item("nodes", e.nodes)?;
        Ok(d)
    }
}

/// Result of a single solver run.
#[pyclass(module = "commaware")]
pub struct Solution {
    inner: solver::Solution,
}

#[pymethods]
impl Solution {
    #[getter]
    fn cost(&self) -> f64 {
        self.inner.cost.j
    }

    #[getter]
    fn energy(&self) -> f64 {
        self.inner.cost.j_bar
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn termination(&self) -> &'static str {
        match self.inner.termination {
            solver::TerminationReason::ArmijoCap => "armijo_cap",
            solver::TerminationReason::MaxIters => "max_iters",
            solver::TerminationReason::ThetaTol => "theta_tol",
        }
    }

    fn cost_history(&self) -> Vec<f64> {
        self.inner.cost_history()
    }

    /// `((x, y), (vx, vy), x3)` per time sample.
    fn states(&self) -> Vec<StateTuple> {
        self.inner.states.states.iter().map(state).collect()
    }

    fn accelerations(&self) -> Vec<(f64, f64)> {
        self.inner.controls.u.iter().copied().map(t).collect()
    }

    fn rates(&self) -> Vec<f64> {
        self.inner.controls.r.clone()
    }

    /// Predicted `s` along the trajectory.
    fn inverse_cnr(&self) -> Vec<f64> {
        self.inner.states.s.clone()
    }
}

#[pyclass(module = "commaware")]
pub struct OfflinePlan {
    #[pyo3(get)]
    solution: Py<Solution>,
    #[pyo3(get)]
    energy_true: f64,
}

#[pyclass(module = "commaware")]
pub struct OnlineResult {
    inner: planner::OnlineResult,
}

#[pymethods]
impl OnlineResult {
    #[getter]
    fn energy(&self) -> f64 {
        self.inner.j_bar_executed
    }

    #[getter]
    fn energy_predicted(&self) -> f64 {
        self.inner.j_bar_predicted
    }

    fn states(&self) -> Vec<StateTuple> {
        self.inner.states.states.iter().map(state).collect()
    }

    fn rates(&self) -> Vec<f64> {
        self.inner.controls.r.clone()
    }

    /// One dict per replanning cycle.
    fn cycles<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .per_cycle
            .iter()
            .map(|c| {
                let d = PyDict::new(py);
                d.set_item("t0", c.t0)?;
                d.set_item("m", c.measurement_count)?;
                d.set_item("c_bar", c.c_bar)?;
                d.set_item("iterations", c.solution.iterations)?;
                d.set_item("J", c.solution.cost.j)?;
                d.set_item("J_bar", c.solution.cost.j_bar)?;
                d.set_item("executed_steps", c.executed_steps)?;
                Ok(d)
            })
            .collect()
    }
}

#[pyfunction]
#[pyo3(signature = (u, v, k = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0]))]
fn motion_power(u: (f64, f64), v: (f64, f64), k: [f64; 6]) -> f64 {
    let w = MotionWeights {
        k1: k[0],
        k2: k[1],
        k3: k[2],
        k4: k[3],
        k5: k[4],
        k6: k[5],
        ..MotionWeights::default()
    };
    dynamics::motion_power(self::v(u), self::v(v), &w)
}

#[pyfunction]
fn comm_power(r: f64, s: f64, k_mqam: f64) -> f64 {
    dynamics::comm_power(r, s, k_mqam)
}

#[pyfunction]
#[pyo3(signature = (p2, gamma = 0.01, k1 = 1.0, u_max = 0.5))]
fn pointwise_min_u(p2: (f64, f64), gamma: f64, k1: f64, u_max: f64) -> (f64, f64) {
    let w = MotionWeights {
        k1,
        gamma,
        ..MotionWeights::default()
    };
    t(solver::pointwise_min_u(v(p2), &w, u_max))
}

#[pyfunction]
#[pyo3(signature = (p3, s, k_mqam, r_max = 6.0))]
fn pointwise_min_r(p3: f64, s: f64, k_mqam: f64, r_max: f64) -> f64 {
    solver::pointwise_min_r(p3, s, k_mqam, r_max)
}

/// Offline plan on `field` from `n_samples` random measurements.
#[pyfunction]
fn plan_offline(py: Python<'_>, scenario: &Scenario, field: &Field, n_samples: usize) -> PyResult<OfflinePlan> {
    let plan = py
        .detach(|| planner::plan_offline_on(&scenario.inner, &field.inner, n_samples))
        .map_err(to_py)?;
    Ok(OfflinePlan {
        solution: Py::new(py, Solution { inner: plan.solution })?,
        energy_true: plan.j_bar_true,
    })
}

/// Online replanning on `field`; `schedule_json` overrides the default
/// schedule.
#[pyfunction]
#[pyo3(signature = (scenario, field, schedule_json = None))]
fn plan_online(
    py: Python<'_>,
    scenario: &Scenario,
    field: &Field,
    schedule_json: Option<&str>,
) -> PyResult<OnlineResult> {
    let schedule: OnlineSchedule = match schedule_json {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => OnlineSchedule::default(),
    };
    let inner = py
        .detach(|| planner::plan_online_on(&scenario.inner, &field.inner, &schedule))
        .map_err(to_py)?;
    Ok(OnlineResult { inner })
}

#[pymodule]
fn commaware(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<FieldSynthesizer>()?;
    m.add_class::<Field>()?;
    m.add_class::<MeasurementSet>()?;
    m.add_class::<Predictor>()?;
    m.add_class::<Solution>()?;
    m.add_class::<OfflinePlan>()?;
    m.add_class::<OnlineResult>()?;
    m.add_function(wrap_pyfunction!(motion_power, m)?)?;
    m.add_function(wrap_pyfunction!(comm_power, m)?)?;
    m.add_function(wrap_pyfunction!(pointwise_min_u, m)?)?;
    m.add_function(wrap_pyfunction!(pointwise_min_r, m)?)?;
    m.add_function(wrap_pyfunction!(plan_offline, m)?)?;
    m.add_function(wrap_pyfunction!(plan_online, m)?)?;
    Ok(())
}
