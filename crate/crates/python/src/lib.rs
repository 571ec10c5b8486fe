//! Python module `fornits`: polynomial fits, order selection and whole runs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fornits_core::harness::{self, RunConfig};
use fornits_core::order_select::select_order_capped;
use fornits_core::poly::{self, CalibrationPoints};
use fornits_core::{classify as classify_core, SampleHistory};

fn py_err(e: impl Into<fornits_core::Error>) -> PyErr {
    let e = e.into();
    if e.is_divergence() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

#[pyclass(name = "Polynomial", module = "fornits", frozen, skip_from_py_object)]
struct PyPolynomial {
    inner: fornits_core::Polynomial,
}

#[pymethods]
impl PyPolynomial {
    #[new]
    fn new(t_ref: f64, coeffs: Vec<f64>) -> PyResult<Self> {
        if coeffs.len() > 4 {
            return Err(PyValueError::new_err("at most 4 coefficients (degree 3)"));
        }
        Ok(Self { inner: fornits_core::Polynomial::new(t_ref, &coeffs) })
    }

    fn __call__(&self, t: f64) -> f64 {
        self.inner.eval(t)
    }

    fn eval(&self, t: f64) -> f64 {
        self.inner.eval(t)
    }

    fn derivative(&self, t: f64) -> f64 {
        self.inner.eval_derivative(t)
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.degree()
    }

    #[getter]
    fn t_ref(&self) -> f64 {
        self.inner.t_ref()
    }

    #[getter]
    fn coeffs(&self) -> Vec<f64> {
        self.inner.coeffs().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Polynomial(t_ref={}, coeffs={:?})", self.inner.t_ref(), self.inner.coeffs())
    }
}

fn points(times: Vec<f64>, values: Vec<f64>) -> PyResult<CalibrationPoints> {
    CalibrationPoints::new(times, values).map_err(py_err)
}

/// Exact polynomial through all points (degree = len - 1).
#[pyfunction]
fn fit_extrapolation(times: Vec<f64>, values: Vec<f64>) -> PyResult<PyPolynomial> {
    let p = poly::fit_extrapolation(&points(times, values)?).map_err(py_err)?;
    Ok(PyPolynomial { inner: p })
}

/// Least squares of degree len - 2, exact at the last point.
#[pyfunction]
fn fit_cls(times: Vec<f64>, values: Vec<f64>) -> PyResult<PyPolynomial> {
    let p = poly::fit_constrained_least_squares(&points(times, values)?).map_err(py_err)?;
    Ok(PyPolynomial { inner: p })
}

/// Cubic matching values and slopes at both ends of `[t0, t1]`.
#[pyfunction]
fn fit_hermite(t0: f64, t1: f64, z0: f64, z1: f64, d0: f64, d1: f64) -> PyResult<PyPolynomial> {
    let p = poly::fit_hermite((t0, t1), (z0, z1), (d0, d1)).map_err(py_err)?;
    Ok(PyPolynomial { inner: p })
}

/// Topology tag ("NI", "NO", "NINO" or "IO") of a subsystem.
#[pyfunction]
fn classify(n_in: usize, n_out: usize) -> String {
    classify_core(n_in, n_out).to_string()
}

/// Order for a new sample given past samples; returns `(order, errors)`.
#[pyfunction]
#[pyo3(signature = (times, values, t_new, y_new, max_order = 2))]
fn select_order(
    times: Vec<f64>,
    values: Vec<f64>,
    t_new: f64,
    y_new: f64,
    max_order: usize,
) -> PyResult<(usize, Vec<f64>)> {
    if times.len() != values.len() {
        return Err(PyValueError::new_err("times and values differ in length"));
    }
    let mut h = SampleHistory::new();
    for (t, y) in times.into_iter().zip(values) {
        h.push(t, y).map_err(py_err)?;
    }
    let d = select_order_capped(&h, (t_new, y_new), max_order).map_err(py_err)?;
    Ok((d.order, d.candidate_errors))
}

/// RMSE of `trace` against `reference` in percent of the reference span.
#[pyfunction]
fn rmse_percent(trace: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    harness::rmse_percent(&trace, &reference).map_err(py_err)
}

/// Result of one co-simulation run.
#[pyclass(name = "Trace", module = "fornits", frozen)]
struct PyTrace {
    inner: fornits_core::RunTrace,
}

impl PyTrace {
    fn sub(&self, label: &str) -> PyResult<&fornits_core::orchestrator::SubsystemTrace> {
        self.inner
            .subsystems
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| PyValueError::new_err(format!("no subsystem `{label}`")))
    }
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.clone()
    }

    #[getter]
    fn total_steps(&self) -> usize {
        self.inner.total_steps
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.subsystems.iter().map(|s| s.label.clone()).collect()
    }

    #[getter]
    fn dense_times(&self) -> Vec<f64> {
        self.inner.dense_times.clone()
    }

    /// Communication times of subsystem `label`.
    fn times(&self, label: &str) -> PyResult<Vec<f64>> {
        Ok(self.sub(label)?.times())
    }

    /// Output `index` of `label` at each communication time.
    fn outputs(&self, label: &str, index: usize) -> PyResult<Vec<f64>> {
        let s = self.sub(label)?;
        s.rows
            .iter()
            .map(|r| r.outputs.get(index).copied())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| PyValueError::new_err(format!("`{label}` has no output {index}")))
    }

    /// State `index` of `label` on the dense grid.
    fn dense(&self, label: &str, index: usize) -> PyResult<Vec<f64>> {
        let s = self.sub(label)?;
        if s.dense.first().is_some_and(|x| index >= x.len()) {
            return Err(PyValueError::new_err(format!("`{label}` has no state {index}")));
        }
        Ok(s.dense_series(index))
    }

    fn __repr__(&self) -> String {
        format!("Trace(method={:?}, total_steps={})", self.inner.method, self.inner.total_steps)
    }
}

fn config(text: &str) -> PyResult<RunConfig> {
    RunConfig::from_toml_str(text).map_err(py_err)
}

/// Runs the configuration given as TOML text.
#[pyfunction]
fn run(py: Python<'_>, config_toml: &str) -> PyResult<PyTrace> {
    let cfg = config(config_toml)?;
    let (_, trace) = py.detach(|| cfg.execute()).map_err(py_err)?;
    Ok(PyTrace { inner: trace })
}

/// Comparison matrix on the configured model: `[(label, steps, rmse_x1)]`.
#[pyfunction]
fn compare(py: Python<'_>, config_toml: &str) -> PyResult<Vec<(String, usize, f64)>> {
    let cfg = config(config_toml)?;
    let report = py
        .detach(|| {
            let model = cfg.build_model()?;
            let opts = cfg.master_options(&model)?;
            harness::compare(&model, &opts)
        })
        .map_err(py_err)?;
    Ok(report
        .rows
        .iter()
        .map(|r| (r.variant.label(), r.steps, r.rmse_x1))
        .collect())
}

/// Monolithic reference: `(times, [(label, [state vector per time])])`.
#[pyfunction]
#[pyo3(signature = (config_toml, interval = 0.01))]
fn reference(
    py: Python<'_>,
    config_toml: &str,
    interval: f64,
) -> PyResult<(Vec<f64>, Vec<(String, Vec<Vec<f64>>)>)> {
    let cfg = config(config_toml)?;
    let (model, r) = py
        .detach(|| {
            let model = cfg.build_model()?;
            let r = harness::reference_for(&model, interval)?;
            Ok::<_, fornits_core::Error>((model, r))
        })
        .map_err(py_err)?;
    let states = model
        .subsystems
        .iter()
        .zip(r.states)
        .map(|(s, x)| (s.label.clone(), x))
        .collect();
    Ok((r.times, states))
}

#[pymodule]
fn fornits(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolynomial>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(fit_extrapolation, m)?)?;
    m.add_function(wrap_pyfunction!(fit_cls, m)?)?;
    m.add_function(wrap_pyfunction!(fit_hermite, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(select_order, m)?)?;
    m.add_function(wrap_pyfunction!(rmse_percent, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(reference, m)?)?;
    Ok(())
}
