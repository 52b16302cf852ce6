//! Python bindings. Structured values cross the boundary as JSON-compatible
//! dicts and lists with the same schema as the file formats.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use riskplan::distmoments::{GaussianSpec, TruncatedGaussianSpec};
use riskplan::harness::{validate_plan, BatchFormulation};
use riskplan::io::{ExpressSpec, LoadedProblem};
use riskplan::planner::{solve, PlanResult};
use riskplan::polyalg::{render, Dialect};
use riskplan::riskbounds::{conc, mixture_bound_unchecked, ConcKind, RiskBound};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (s,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, v: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = py.import("json")?.call_method1("dumps", (v,))?.extract()?;
    serde_json::from_str(&s).map_err(value_err)
}

fn kind(name: &str) -> PyResult<ConcKind> {
    name.parse().map_err(value_err)
}

fn bound_dict<'py>(py: Python<'py>, b: RiskBound) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("bound", b.value)?;
    d.set_item("conc_star", b.conc_star)?;
    d.set_item("valid", b.valid)?;
    Ok(d)
}

/// Mean and second-moment expressions of a polynomial in the named random
/// variables; other names are deterministic.
#[pyfunction]
#[pyo3(signature = (polynomial, random, independent=false, blocks=None, dialect="plain"))]
fn express(
    polynomial: &str,
    random: Vec<String>,
    independent: bool,
    blocks: Option<Vec<Vec<String>>>,
    dialect: &str,
) -> PyResult<(String, String)> {
    let d: Dialect = dialect.parse().map_err(value_err)?;
    let spec = ExpressSpec {
        polynomial: polynomial.to_string(),
        random,
        deterministic: None,
        blocks,
        independent,
        dialect: None,
    };
    let e = spec.express().map_err(value_err)?;
    Ok((render(&e.mean, d), render(&e.second_moment, d)))
}

/// Bound on `P(X <= 0)` from the mean and variance of `X`.
#[pyfunction]
#[pyo3(signature = (mean, variance, conc_kind="vp"))]
fn conc_bound<'py>(py: Python<'py>, mean: f64, variance: f64, conc_kind: &str) -> PyResult<Bound<'py, PyDict>> {
    bound_dict(py, conc(mean, variance, kind(conc_kind)?).map_err(value_err)?)
}

/// Component-wise bound for a mixture given as `(weight, mean, variance)`.
#[pyfunction]
#[pyo3(signature = (components, conc_kind="vp"))]
fn mixture_bound<'py>(
    py: Python<'py>,
    components: Vec<(f64, f64, f64)>,
    conc_kind: &str,
) -> PyResult<Bound<'py, PyDict>> {
    bound_dict(py, mixture_bound_unchecked(&components, kind(conc_kind)?).map_err(value_err)?)
}

/// Raw moments `{(i, j): E[w1^i w2^j]}` of a planar Gaussian, truncated to
/// `mean ± trunc_k·σ` per axis when given.
#[pyfunction]
#[pyo3(signature = (mean, cov, order, trunc_k=None))]
fn gaussian_moments(
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    order: u32,
    trunc_k: Option<f64>,
) -> PyResult<Vec<((u32, u32), f64)>> {
    let g = GaussianSpec::new(mean, cov).map_err(value_err)?;
    let t = match trunc_k {
        Some(k) => TruncatedGaussianSpec::at_sigmas(&g, k).and_then(|t| t.moments(order)),
        None => g.moments(order),
    }
    .map_err(value_err)?;
    Ok(t.entries()
        .map(|(i, v)| {
            let e = i.exponents();
            ((e[0], e[1]), v)
        })
        .collect())
}

fn load(
    problem: PathBuf,
    eps: Option<f64>,
    conc_kind: Option<&str>,
    formulation: Option<&str>,
) -> PyResult<LoadedProblem> {
    let mut lp = LoadedProblem::load(&problem).map_err(value_err)?;
    if let Some(e) = eps {
        lp.file.eps = e;
    }
    if let Some(c) = conc_kind {
        lp.file.conc = kind(c)?;
    }
    if let Some(f) = formulation {
        lp.file.formulation = match f {
            "gmm" => BatchFormulation::Gmm,
            "truncated_gmm" | "truncated" => BatchFormulation::TruncatedGmm,
            "deterministic" => BatchFormulation::Deterministic,
            other => return Err(PyValueError::new_err(format!("unknown formulation '{other}'"))),
        };
    }
    Ok(lp)
}

/// Solve a problem file. Returns the plan as a dict.
#[pyfunction]
#[pyo3(signature = (problem, eps=None, conc_kind=None, formulation=None))]
fn plan<'py>(
    py: Python<'py>,
    problem: PathBuf,
    eps: Option<f64>,
    conc_kind: Option<&str>,
    formulation: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let lp = load(problem, eps, conc_kind, formulation)?;
    let p = lp.plan_problem().map_err(value_err)?;
    let cfg = lp.file.solver.clone();
    let r = py
        .detach(|| solve(&p, &cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &r)
}

/// Monte Carlo check of a plan dict against its problem file.
#[pyfunction]
#[pyo3(signature = (result, problem, samples=100_000, seed=0, formulation=None))]
fn validate<'py>(
    py: Python<'py>,
    result: &Bound<'py, PyAny>,
    problem: PathBuf,
    samples: u64,
    seed: u64,
    formulation: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let r: PlanResult = from_py(py, result)?;
    let lp = load(problem, None, None, formulation)?;
    let preds = lp.predictions().map_err(value_err)?;
    let s = py
        .detach(|| validate_plan(&lp.scenario, &r, &preds, samples, seed))
        .map_err(value_err)?;
    to_py(py, &s)
}

#[pymodule]
fn pyriskplan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(express, m)?)?;
    m.add_function(wrap_pyfunction!(conc_bound, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_bound, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_moments, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
