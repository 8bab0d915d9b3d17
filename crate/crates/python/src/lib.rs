//! Python bindings for `tbrw`. Structured results come back as plain
//! dicts and lists.

use num_rational::BigRational;
use pyo3::exceptions::{PyMemoryError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use tbrw::exact::{self, ComplexProbe, HitRootAt, NoRenewalBy, WholeSpace};
use tbrw::mc::{self, ExperimentConfig};
use tbrw::model::{self, InitialState, Retention, RngStream};
use tbrw::renewal::{self, CensorPolicy};

fn to_py(err: tbrw::Error) -> PyErr {
    match err {
        tbrw::Error::Capacity { .. } => PyMemoryError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn to_object<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn policy(depth_margin: u32, horizon_margin: usize) -> PyResult<CensorPolicy> {
    CensorPolicy::new(depth_margin, horizon_margin).map_err(to_py)
}

#[pyclass(name = "LeafLaw", frozen)]
struct PyLeafLaw(model::LeafLaw);

#[pymethods]
impl PyLeafLaw {
    /// Accepts `"0.5"` (Bernoulli) or `"0:0.5,2:0.5"` (general pmf).
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        model::LeafLaw::parse(text).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn bernoulli(p: f64) -> PyResult<Self> {
        model::LeafLaw::bernoulli(p).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn general(pmf: Vec<(u32, f64)>) -> PyResult<Self> {
        model::LeafLaw::general(pmf).map(Self).map_err(to_py)
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.0.kappa()
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.0.mean()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.0.variance()
    }

    #[getter]
    fn p(&self) -> Option<f64> {
        self.0.bernoulli_p()
    }

    fn __repr__(&self) -> String {
        format!("LeafLaw('{}')", self.0)
    }
}

#[pyclass(name = "Trajectory", frozen)]
struct PyTrajectory(model::Trajectory);

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn horizon(&self) -> usize {
        self.0.horizon()
    }

    #[getter]
    fn depth(&self) -> Vec<u32> {
        self.0.depth.clone()
    }

    #[getter]
    fn degree(&self) -> Vec<u32> {
        self.0.degree.clone()
    }

    #[getter]
    fn height(&self) -> Vec<u32> {
        self.0.height.clone()
    }

    #[getter]
    fn vertex_count(&self) -> Vec<u32> {
        self.0.vertex_count.clone()
    }

    #[getter]
    fn position(&self) -> Option<Vec<u32>> {
        self.0.position.clone()
    }

    #[getter]
    fn parents(&self) -> Option<Vec<u32>> {
        self.0.parents.clone()
    }

    /// Renewal candidates as dicts with `time`, `status` and `at_height`.
    #[pyo3(signature = (depth_margin = 50, horizon_margin = 200))]
    fn detect_tau<'py>(
        &self,
        py: Python<'py>,
        depth_margin: u32,
        horizon_margin: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cands =
            renewal::detect_tau(&self.0, &policy(depth_margin, horizon_margin)?).map_err(to_py)?;
        to_object(py, &cands)
    }

    /// Full attempt cascade; needs a trajectory simulated with `full=True`.
    #[pyo3(signature = (depth_margin = 50, horizon_margin = 200))]
    fn detect_cascade<'py>(
        &self,
        py: Python<'py>,
        depth_margin: u32,
        horizon_margin: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let report = renewal::detect_cascade(&self.0, &policy(depth_margin, horizon_margin)?)
            .map_err(to_py)?;
        to_object(py, &report)
    }

    fn __len__(&self) -> usize {
        self.0.depth.len()
    }
}

#[pyfunction]
#[pyo3(signature = (law, steps, seed = 0, replica = 0, full = false))]
fn simulate(
    py: Python<'_>,
    law: &PyLeafLaw,
    steps: usize,
    seed: u64,
    replica: u64,
    full: bool,
) -> PyResult<PyTrajectory> {
    let retention = if full {
        Retention::Full
    } else {
        Retention::Summary
    };
    py.detach(|| {
        model::simulate(
            &law.0,
            steps,
            InitialState::EdgeNonRootTip,
            RngStream::new(seed, replica),
            retention,
        )
    })
    .map(PyTrajectory)
    .map_err(to_py)
}

#[pyclass(name = "Polynomial", frozen)]
struct PyPolynomial(exact::ProbPolynomial);

#[pymethods]
impl PyPolynomial {
    #[getter]
    fn horizon(&self) -> usize {
        self.0.horizon()
    }

    /// Coefficients `c_i` as `(numerator, denominator)` decimal strings.
    fn coefficients(&self) -> Vec<(String, String)> {
        self.0
            .coefficients()
            .iter()
            .map(|c| (c.numer().to_string(), c.denom().to_string()))
            .collect()
    }

    fn __call__(&self, p: f64) -> f64 {
        self.0.eval_real(p)
    }

    /// Exact value at `p = num / den`, as a `"a/b"` string.
    fn exact(&self, num: i64, den: i64) -> PyResult<String> {
        if den == 0 {
            return Err(PyValueError::new_err("zero denominator"));
        }
        let p = num_rational(num, den);
        Ok(self.0.eval_rational(&p).to_string())
    }

    fn is_one(&self) -> bool {
        self.0.is_one()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &self.0.to_json())
    }
}

fn num_rational(num: i64, den: i64) -> BigRational {
    BigRational::new(num.into(), den.into())
}

enum Event {
    Whole,
    HitRoot,
    NoRenewal,
}

fn event(name: &str) -> PyResult<Event> {
    match name {
        "whole-space" => Ok(Event::Whole),
        "hit-root" => Ok(Event::HitRoot),
        "no-renewal" => Ok(Event::NoRenewal),
        _ => Err(PyValueError::new_err(format!(
            "unknown event '{name}', expected whole-space, hit-root or no-renewal"
        ))),
    }
}

/// Exact probability polynomial of an event at horizon `n`. `hit-root`
/// is the first return to the root at step `n`.
#[pyfunction]
#[pyo3(name = "enumerate", signature = (n, event_name = "hit-root", cap = exact::DEFAULT_CAP))]
fn enumerate_event(
    py: Python<'_>,
    n: usize,
    event_name: &str,
    cap: usize,
) -> PyResult<PyPolynomial> {
    let ev = event(event_name)?;
    py.detach(|| match ev {
        Event::Whole => exact::enumerate_with_cap(n, &WholeSpace, cap),
        Event::HitRoot => exact::enumerate_with_cap(n, &HitRootAt::new(n), cap),
        Event::NoRenewal => exact::enumerate_with_cap(n, &NoRenewalBy, cap),
    })
    .map(PyPolynomial)
    .map_err(to_py)
}

/// First-return polynomials for `m = 1..=n_max`.
#[pyfunction]
#[pyo3(signature = (n_max, cap = exact::DEFAULT_CAP))]
fn ho_series(py: Python<'_>, n_max: usize, cap: usize) -> PyResult<Vec<PyPolynomial>> {
    py.detach(|| exact::ho_series_terms_with_cap(n_max, cap))
        .map(|terms| terms.into_iter().map(PyPolynomial).collect())
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (poly, p, r, radii = None, per_circle = 64))]
fn verify_an_bound<'py>(
    py: Python<'py>,
    poly: &PyPolynomial,
    p: f64,
    r: f64,
    radii: Option<Vec<f64>>,
    per_circle: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let radii = radii.unwrap_or_else(|| vec![0.5 * r, 0.9 * r]);
    let probe = ComplexProbe::circles(p, r, &radii, per_circle).map_err(to_py)?;
    to_object(py, &exact::verify_an_bound(&poly.0, &probe))
}

#[pyfunction]
#[pyo3(signature = (n, p, event_name = "hit-root", replicas = 10_000, seed = 0))]
fn cross_validate<'py>(
    py: Python<'py>,
    n: usize,
    p: f64,
    event_name: &str,
    replicas: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let ev = event(event_name)?;
    let report = py
        .detach(|| match ev {
            Event::Whole => exact::enumerate(n, &WholeSpace)
                .and_then(|q| exact::cross_validate(&q, &WholeSpace, p, replicas, seed)),
            Event::HitRoot => {
                let e = HitRootAt::new(n);
                exact::enumerate(n, &e)
                    .and_then(|q| exact::cross_validate(&q, &e, p, replicas, seed))
            }
            Event::NoRenewal => exact::enumerate(n, &NoRenewalBy)
                .and_then(|q| exact::cross_validate(&q, &NoRenewalBy, p, replicas, seed)),
        })
        .map_err(to_py)?;
    to_object(py, &report)
}

fn config(replicas: u64, steps: usize, seed: u64, law: &PyLeafLaw) -> ExperimentConfig {
    ExperimentConfig {
        replicas,
        horizon: steps,
        seed,
        ..ExperimentConfig::default()
    }
    .with_law(law.0.clone())
}

#[pyfunction]
#[pyo3(signature = (law, replicas = 100, steps = 2000, seed = 0))]
fn estimate_speed<'py>(
    py: Python<'py>,
    law: &PyLeafLaw,
    replicas: u64,
    steps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let c = config(replicas, steps, seed, law);
    let est = py
        .detach(|| mc::estimate_speed(&c, &law.0))
        .map_err(to_py)?;
    to_object(py, &est)
}

#[pyfunction]
#[pyo3(signature = (law, replicas = 10_000, steps = 5000, seed = 0))]
fn tau_tail<'py>(
    py: Python<'py>,
    law: &PyLeafLaw,
    replicas: u64,
    steps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let c = config(replicas, steps, seed, law);
    let tail = py.detach(|| mc::run_tau_tail(&c, &law.0)).map_err(to_py)?;
    to_object(py, &tail)
}

#[pyfunction]
#[pyo3(signature = (law, replicas = 10_000, steps = 5000, seed = 0))]
fn k_and_m<'py>(
    py: Python<'py>,
    law: &PyLeafLaw,
    replicas: u64,
    steps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let c = config(replicas, steps, seed, law);
    let km = py.detach(|| mc::run_k_and_m(&c, &law.0)).map_err(to_py)?;
    to_object(py, &km)
}

#[pyfunction]
#[pyo3(signature = (law, replicas = 10_000, steps = 4000, seed = 0, v_hat = None, epsilons = None, n_grid = None))]
#[allow(clippy::too_many_arguments)]
fn concentration<'py>(
    py: Python<'py>,
    law: &PyLeafLaw,
    replicas: u64,
    steps: usize,
    seed: u64,
    v_hat: Option<f64>,
    epsilons: Option<Vec<f64>>,
    n_grid: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut c = config(replicas, steps, seed, law);
    if let Some(e) = epsilons {
        c.epsilons = e;
    }
    if let Some(n) = n_grid {
        c.n_grid = n;
    }
    let curve = py
        .detach(|| mc::run_concentration(&c, &law.0, v_hat))
        .map_err(to_py)?;
    to_object(py, &curve)
}

#[pyfunction]
#[pyo3(signature = (law, replicas = 10_000, steps = 5000, seed = 0))]
fn estimate_escape<'py>(
    py: Python<'py>,
    law: &PyLeafLaw,
    replicas: u64,
    steps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let c = config(replicas, steps, seed, law);
    let est = py
        .detach(|| mc::estimate_escape(&c, &law.0))
        .map_err(to_py)?;
    to_object(py, &est)
}

#[pymodule]
fn tbrw_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLeafLaw>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyPolynomial>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_event, m)?)?;
    m.add_function(wrap_pyfunction!(ho_series, m)?)?;
    m.add_function(wrap_pyfunction!(verify_an_bound, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_speed, m)?)?;
    m.add_function(wrap_pyfunction!(tau_tail, m)?)?;
    m.add_function(wrap_pyfunction!(k_and_m, m)?)?;
    m.add_function(wrap_pyfunction!(concentration, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_escape, m)?)?;
    Ok(())
}
