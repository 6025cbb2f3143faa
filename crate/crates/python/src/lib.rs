//! Python bindings for `etbc-core`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use etbc_core::controller::{self, ClosedLoopRecord, ControlLaw};
use etbc_core::linear::{self, LinearSystemSpec};
use etbc_core::model::{self, NodeTimes};
use etbc_core::scenario;
use etbc_core::sim::InputSignal;
use etbc_core::{predictor, CharacteristicSlice, Error, Grid, StateProfile};

fn err(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn grid(n_cells: usize) -> PyResult<Grid> {
    Grid::new(n_cells).map_err(err)
}

fn profile(t: f64, u: Vec<f64>, v: Vec<f64>) -> PyResult<StateProfile> {
    if u.len() != v.len() || u.len() < 2 {
        return Err(PyValueError::new_err("u and v must have the same length >= 2"));
    }
    Ok(StateProfile { t, u, v })
}

/// Coefficient expression over named variables.
#[pyclass(frozen, name = "CoeffFn")]
struct PyCoeffFn(etbc_core::CoeffFn);

#[pymethods]
impl PyCoeffFn {
    #[new]
    #[pyo3(signature = (source, variables = vec!["x".to_string()]))]
    fn new(source: &str, variables: Vec<String>) -> PyResult<Self> {
        let vars: Vec<&str> = variables.iter().map(String::as_str).collect();
        etbc_core::CoeffFn::parse(source, &vars)
            .map(Self)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __call__(&self, args: Vec<f64>) -> PyResult<f64> {
        if args.len() != self.0.variables().len() {
            return Err(PyValueError::new_err(format!(
                "expected {} argument(s)",
                self.0.variables().len()
            )));
        }
        Ok(self.0.eval(&args))
    }

    #[getter]
    fn source(&self) -> &str {
        self.0.source()
    }

    #[getter]
    fn variables(&self) -> Vec<String> {
        self.0.variables().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("CoeffFn({:?})", self.0.source())
    }
}

#[pyclass(frozen, name = "SystemModel")]
struct PySystemModel(etbc_core::SystemModel);

#[pymethods]
impl PySystemModel {
    #[new]
    fn new(lambda_u: &str, lambda_v: &str, f_u: &str, f_v: &str, g: &str) -> PyResult<Self> {
        etbc_core::SystemModel::parse(lambda_u, lambda_v, f_u, f_v, g)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn reference_example() -> Self {
        Self(etbc_core::SystemModel::reference_example())
    }

    /// `(tau_u(x), tau_v(x))`.
    fn characteristic_times(&self, x: f64) -> PyResult<(f64, f64)> {
        model::characteristic_times(&self.0, x).map_err(err)
    }

    fn settling_time(&self, n_cells: usize) -> PyResult<f64> {
        Ok(NodeTimes::new(&self.0, &grid(n_cells)?).map_err(err)?.settling_time())
    }

    fn sources(&self) -> [String; 5] {
        let s = self.0.sources();
        [s.lambda_u, s.lambda_v, s.f_u, s.f_v, s.g]
    }
}

/// Prediction pipeline on a fixed grid.
#[pyclass(frozen, name = "Predictor")]
struct PyPredictor(etbc_core::Predictor);

#[pymethods]
impl PyPredictor {
    #[new]
    fn new(model: &PySystemModel, n_cells: usize) -> PyResult<Self> {
        etbc_core::Predictor::new(&model.0, &grid(n_cells)?)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.0.horizon()
    }

    #[getter]
    fn tau_v(&self) -> Vec<f64> {
        self.0.node_times().tau_v.clone()
    }

    /// `u(x_i, t + tau_v(x_i))` for the state `(u, v)` at time `t`.
    #[pyo3(signature = (u, v, t = 0.0))]
    fn predict_ubar(&self, u: Vec<f64>, v: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.0.predict_ubar(&profile(t, u, v)?).map_err(err)?.ubar)
    }

    fn solve_vbar(&self, ubar: Vec<f64>, terminal: f64) -> PyResult<Vec<f64>> {
        predictor::solve_vbar(self.0.model(), &self.slice(ubar)?, terminal).map_err(err)
    }

    fn solve_target(&self, ubar: Vec<f64>, v0: f64) -> PyResult<Vec<f64>> {
        predictor::solve_target(self.0.model(), &self.slice(ubar)?, v0).map_err(err)
    }

    /// Continuous-time feedback value for the state `(u, v)`.
    #[pyo3(signature = (u, v, t = 0.0, reference = 0.0))]
    fn control(&self, u: Vec<f64>, v: Vec<f64>, t: f64, reference: f64) -> PyResult<f64> {
        controller::continuous_control_with(&self.0, &profile(t, u, v)?, reference).map_err(err)
    }
}

impl PyPredictor {
    fn slice(&self, ubar: Vec<f64>) -> PyResult<CharacteristicSlice> {
        let tau_v_nodes = self.0.node_times().tau_v.clone();
        if ubar.len() != tau_v_nodes.len() {
            return Err(PyValueError::new_err(format!(
                "ubar must have {} entries",
                tau_v_nodes.len()
            )));
        }
        Ok(CharacteristicSlice {
            t: 0.0,
            ubar,
            tau_v_nodes,
        })
    }
}

#[pyclass(frozen, name = "TriggerPolicy")]
struct PyTriggerPolicy(controller::TriggerPolicy);

#[pymethods]
impl PyTriggerPolicy {
    #[staticmethod]
    fn fixed(eps: f64) -> PyResult<Self> {
        Self::checked(controller::TriggerPolicy::fixed(eps))
    }

    #[staticmethod]
    fn state_dependent(eps_min: f64, gain: f64) -> PyResult<Self> {
        Self::checked(controller::TriggerPolicy::state_dependent(eps_min, gain))
    }

    #[staticmethod]
    fn periodic(period: f64, eps: f64) -> PyResult<Self> {
        Self::checked(controller::TriggerPolicy::periodic(period, eps))
    }

    /// Same policy tracking the reference `g_ref(t)`.
    fn with_reference(&self, g_ref: &str) -> PyResult<Self> {
        let r = etbc_core::CoeffFn::parse(g_ref, &["t"]).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self(self.0.clone().with_reference(r)))
    }

    fn eps(&self, norm: f64) -> f64 {
        self.0.eps(norm)
    }

    fn __repr__(&self) -> String {
        format!("TriggerPolicy({:?})", self.0)
    }
}

impl PyTriggerPolicy {
    fn checked(p: controller::TriggerPolicy) -> PyResult<Self> {
        p.validate().map_err(err)?;
        Ok(Self(p))
    }
}

fn record_dict<'py>(py: Python<'py>, rec: &ClosedLoopRecord) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    let series = &rec.series;
    out.set_item("t", series.iter().map(|r| r.t).collect::<Vec<_>>())?;
    out.set_item("norm", series.iter().map(|r| r.norm_w_inf).collect::<Vec<_>>())?;
    out.set_item("v0", series.iter().map(|r| r.v0).collect::<Vec<_>>())?;
    out.set_item("input", series.iter().map(|r| r.input).collect::<Vec<_>>())?;
    if series.iter().all(|r| r.eps_t.is_some()) {
        out.set_item("eps", series.iter().filter_map(|r| r.eps_t).collect::<Vec<_>>())?;
    }
    let events: Vec<(usize, f64, f64, f64)> = rec.events().iter().map(|e| (e.k, e.t, e.u_old, e.u_new)).collect();
    out.set_item("events", events)?;
    let last = rec.trajectory.last();
    out.set_item("final_u", last.u.clone())?;
    out.set_item("final_v", last.v.clone())?;
    let d = &rec.diagnostics;
    out.set_item("dt", d.dt)?;
    out.set_item("horizon", d.horizon)?;
    out.set_item("settling_time", d.settling_time)?;
    out.set_item("min_dwell", d.min_dwell)?;
    out.set_item("zeno_suspected", d.zeno_suspected)?;
    Ok(out)
}

fn run_law<'py>(
    py: Python<'py>,
    model: &PySystemModel,
    law: ControlLaw,
    u: Vec<f64>,
    v: Vec<f64>,
    u0: f64,
    t_end: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let w0 = profile(0.0, u, v)?;
    let g = grid(w0.u.len() - 1)?;
    let m = &model.0;
    let rec = py
        .detach(|| controller::run_with_law(m, &g, &law, &w0, u0, t_end))
        .map_err(err)?;
    record_dict(py, &rec)
}

/// Event-triggered closed loop from the state `(u, v)` at `t = 0`.
#[pyfunction]
#[pyo3(signature = (model, policy, u, v, t_end, u0 = 0.0))]
fn run_event_triggered<'py>(
    py: Python<'py>,
    model: &PySystemModel,
    policy: &PyTriggerPolicy,
    u: Vec<f64>,
    v: Vec<f64>,
    t_end: f64,
    u0: f64,
) -> PyResult<Bound<'py, PyDict>> {
    run_law(py, model, ControlLaw::EventTriggered(policy.0.clone()), u, v, u0, t_end)
}

#[pyfunction]
#[pyo3(signature = (model, u, v, t_end, reference = None))]
fn run_continuous<'py>(
    py: Python<'py>,
    model: &PySystemModel,
    u: Vec<f64>,
    v: Vec<f64>,
    t_end: f64,
    reference: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let reference = reference
        .map(|r| etbc_core::CoeffFn::parse(r, &["t"]))
        .transpose()
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    run_law(py, model, ControlLaw::Continuous { reference }, u, v, 0.0, t_end)
}

/// Open loop with input `U(t)` given as an expression in `t`.
#[pyfunction]
#[pyo3(signature = (model, u, v, t_end, input = "0"))]
fn run_open_loop<'py>(
    py: Python<'py>,
    model: &PySystemModel,
    u: Vec<f64>,
    v: Vec<f64>,
    t_end: f64,
    input: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let f = etbc_core::CoeffFn::parse(input, &["t"]).map_err(|e| PyValueError::new_err(e.to_string()))?;
    run_law(
        py,
        model,
        ControlLaw::OpenLoop(InputSignal::Function(f)),
        u,
        v,
        0.0,
        t_end,
    )
}

#[pyclass(frozen, name = "LinearSystemSpec")]
struct PyLinearSystemSpec(LinearSystemSpec);

#[pymethods]
impl PyLinearSystemSpec {
    #[new]
    fn new(eps1: &str, eps2: &str, c1: &str, c2: &str, q: f64) -> PyResult<Self> {
        LinearSystemSpec::parse(eps1, eps2, c1, c2, q).map(Self).map_err(err)
    }

    fn model(&self) -> PyResult<PySystemModel> {
        self.0.to_system_model().map(PySystemModel).map_err(err)
    }

    /// `(K_vu, K_vv)` sampled on the grid nodes.
    fn kernels(&self, py: Python<'_>, n_cells: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let g = grid(n_cells)?;
        let spec = &self.0;
        let k = py.detach(|| linear::extract_kernels(spec, &g)).map_err(err)?;
        Ok((k.k_vu, k.k_vv))
    }
}

#[pyclass(name = "Scenario")]
struct PyScenario(scenario::Scenario);

#[pymethods]
impl PyScenario {
    /// Built-in name or path to a TOML file.
    #[staticmethod]
    fn load(name: &str) -> PyResult<Self> {
        scenario::Scenario::load(name).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        scenario::Scenario::from_toml(text, None).map(Self).map_err(err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.0.grid.n_cells()
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.0.t_end
    }

    fn with_n_cells(&self, n_cells: usize) -> PyResult<Self> {
        self.0.clone().with_n_cells(n_cells).map(Self).map_err(err)
    }

    fn with_t_end(&self, t_end: f64) -> PyResult<Self> {
        self.0.clone().with_t_end(t_end).map(Self).map_err(err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn simulate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = &self.0;
        let rec = py.detach(|| s.simulate()).map_err(err)?;
        record_dict(py, &rec)
    }

    /// Writes all artifacts to `out_dir` and returns `(exit_code, out_dir)`.
    #[pyo3(signature = (out_dir = None))]
    fn run(&self, py: Python<'_>, out_dir: Option<PathBuf>) -> PyResult<(i32, PathBuf)> {
        let dir = self.0.resolve_output_dir(out_dir.as_deref());
        let s = &self.0;
        let outcome = py.detach(|| scenario::run_scenario(s, &dir)).map_err(err)?;
        Ok((outcome.exit_code, outcome.out_dir))
    }
}

#[pyfunction]
fn builtin_names() -> Vec<&'static str> {
    scenario::builtin_names()
}

#[pymodule]
fn etbc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCoeffFn>()?;
    m.add_class::<PySystemModel>()?;
    m.add_class::<PyPredictor>()?;
    m.add_class::<PyTriggerPolicy>()?;
    m.add_class::<PyLinearSystemSpec>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(run_event_triggered, m)?)?;
    m.add_function(wrap_pyfunction!(run_continuous, m)?)?;
    m.add_function(wrap_pyfunction!(run_open_loop, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    Ok(())
}
