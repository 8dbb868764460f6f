//! Python bindings. Structured results (fit reports, evaluation summaries,
//! snapshots) cross the boundary as plain dicts and lists.

use chronoskill::evaldata::{self, ModelTemplate, Schema};
use chronoskill::likelihoods::OutcomeSpace;
use chronoskill::{FitConfig, Objective, Outcome};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match obj.extract::<String>() {
        Ok(s) => s,
        Err(_) => obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(value_err)
}

#[pyclass(module = "chronoskill", frozen, from_py_object)]
#[derive(Clone)]
struct Kernel(chronoskill::Kernel);

#[pymethods]
impl Kernel {
    /// Parses a kernel from a JSON string or dict.
    #[new]
    fn new(spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        let k: chronoskill::Kernel = from_py(spec)?;
        Ok(Self(k))
    }

    #[staticmethod]
    fn constant(var: f64) -> PyResult<Self> {
        chronoskill::Kernel::constant(var).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn wiener(var: f64) -> PyResult<Self> {
        chronoskill::Kernel::wiener(var).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn matern12(var: f64, lscale: f64) -> PyResult<Self> {
        chronoskill::Kernel::matern12(var, lscale).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn matern32(var: f64, lscale: f64) -> PyResult<Self> {
        chronoskill::Kernel::matern32(var, lscale).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn linear(var: f64) -> PyResult<Self> {
        chronoskill::Kernel::linear(var).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn piecewise_constant(var: f64, boundaries: Vec<f64>) -> PyResult<Self> {
        chronoskill::Kernel::piecewise_constant(var, boundaries).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn sum(children: Vec<Kernel>) -> PyResult<Self> {
        chronoskill::Kernel::sum(children.into_iter().map(|k| k.0).collect()).map(Self).map_err(value_err)
    }

    fn evaluate(&self, t: f64, t2: f64) -> f64 {
        self.0.evaluate(t, t2)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Kernel({})", self.0.to_json())
    }
}

fn parse_likelihood(obj: &Bound<'_, PyAny>) -> PyResult<chronoskill::Likelihood> {
    match obj.extract::<String>() {
        Ok(name) if !name.trim_start().starts_with('{') => {
            serde_json::from_value(serde_json::json!({ "likelihood": name })).map_err(value_err)
        }
        _ => from_py(obj),
    }
}

fn fit_config(
    objective: &str,
    learning_rate: Option<f64>,
    tolerance: f64,
    max_iter: usize,
    threads: Option<usize>,
) -> PyResult<FitConfig> {
    let objective = match objective {
        "ep" => Objective::Ep,
        "reverse_kl" | "reverse-kl" | "kl" => Objective::ReverseKl,
        other => return Err(PyValueError::new_err(format!("unknown objective `{other}`"))),
    };
    let config = FitConfig {
        objective,
        learning_rate,
        tolerance,
        max_iter,
        threads,
        ..FitConfig::default()
    };
    config.validate().map_err(value_err)?;
    Ok(config)
}

#[pyclass(module = "chronoskill")]
struct Model(chronoskill::Model);

impl Model {
    fn outcome(&self, y: &Bound<'_, PyAny>) -> PyResult<Outcome> {
        Ok(match self.0.likelihood().outcome_space() {
            OutcomeSpace::Binary | OutcomeSpace::Ternary => Outcome::Ordinal(y.extract()?),
            OutcomeSpace::Count => Outcome::Count(y.extract()?),
            OutcomeSpace::Real => Outcome::Real(y.extract()?),
        })
    }
}

#[pymethods]
impl Model {
    /// `likelihood` is a name such as `"probit"` or a JSON string/dict.
    #[new]
    fn new(likelihood: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self(chronoskill::Model::new(parse_likelihood(likelihood)?)))
    }

    /// Builds a model from a declarative spec (JSON string or dict).
    #[staticmethod]
    fn from_spec(spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        let spec: chronoskill::ModelSpec = from_py(spec)?;
        chronoskill::Model::from_spec(&spec).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn from_snapshot(snapshot: &Bound<'_, PyAny>) -> PyResult<Self> {
        let snap: chronoskill::Snapshot = from_py(snapshot)?;
        chronoskill::Model::from_snapshot(&snap).map(Self).map_err(value_err)
    }

    fn add_feature(&mut self, id: &str, kernel: &Kernel) -> PyResult<()> {
        self.0.add_feature(id, kernel.0.clone()).map_err(value_err)
    }

    /// Records `outcome` for `Σ coeff · feature` at `time`; returns its index.
    fn observe(&mut self, coeffs: Vec<(String, f64)>, time: f64, outcome: &Bound<'_, PyAny>) -> PyResult<usize> {
        let y = self.outcome(outcome)?;
        self.0.observe(coeffs, time, y).map_err(value_err)
    }

    #[pyo3(signature = (objective = "ep", learning_rate = None, tolerance = 1e-3, max_iter = 500, threads = None))]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        objective: &str,
        learning_rate: Option<f64>,
        tolerance: f64,
        max_iter: usize,
        threads: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let config = fit_config(objective, learning_rate, tolerance, max_iter, threads)?;
        let model = &mut self.0;
        let report = py.detach(|| model.fit(&config)).map_err(runtime_err)?;
        to_py(py, &report)
    }

    /// `(p_loss, p_tie, p_win)` for the combination at `time`.
    fn predict(&self, coeffs: Vec<(String, f64)>, time: f64) -> PyResult<(f64, f64, f64)> {
        let p = self.0.predict(coeffs, time).map_err(value_err)?;
        Ok((p.p_loss(), p.p_tie(), p.p_win()))
    }

    /// Posterior `(mean, variance)` of a feature's score at `time`.
    fn marginal_at(&self, id: &str, time: f64) -> PyResult<(f64, f64)> {
        self.0.marginal_at(id, time).map_err(value_err)
    }

    /// `[(t, mean, std), ...]` over `times`.
    fn trajectory(&self, id: &str, times: Vec<f64>) -> PyResult<Vec<(f64, f64, f64)>> {
        let traj = self.0.trajectory(id, &times).map_err(value_err)?;
        Ok(traj.into_iter().map(|p| (p.t, p.mean, p.std)).collect())
    }

    fn log_marginal(&self) -> PyResult<f64> {
        self.0.log_marginal().map_err(value_err)
    }

    fn elbo(&self) -> PyResult<f64> {
        self.0.elbo().map_err(value_err)
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.snapshot(None))
    }

    fn feature_ids(&self) -> Vec<String> {
        self.0.feature_ids().map(str::to_string).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn load(path: &str, schema: Option<&Bound<'_, PyAny>>) -> PyResult<(Vec<evaldata::MatchRecord>, Schema)> {
    let schema: Schema = match schema {
        Some(s) => from_py(s)?,
        None => Schema::default(),
    };
    let ds = evaldata::parse_dataset(path, &schema).map_err(value_err)?;
    Ok((ds.records, schema))
}

/// Rolling day-by-day evaluation of a model template on a match CSV.
#[pyfunction]
#[pyo3(signature = (template, data, schema = None, train_fraction = 0.7))]
fn evaluate<'py>(
    py: Python<'py>,
    template: &Bound<'py, PyAny>,
    data: &str,
    schema: Option<&Bound<'py, PyAny>>,
    train_fraction: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let template: ModelTemplate = from_py(template)?;
    let (records, schema) = load(data, schema)?;
    let result = py
        .detach(|| evaldata::rolling_evaluate(&template, &records, &schema, train_fraction))
        .map_err(runtime_err)?;
    to_py(py, &result)
}

/// Uniform-predictor log loss and accuracy on the test split.
#[pyfunction]
#[pyo3(signature = (data, schema = None, train_fraction = 0.7))]
fn random_baseline<'py>(
    py: Python<'py>,
    data: &str,
    schema: Option<&Bound<'py, PyAny>>,
    train_fraction: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let (records, schema) = load(data, schema)?;
    let (_, test) = evaldata::chronological_split(&records, train_fraction);
    to_py(py, &evaldata::random_baseline(test, &schema))
}

/// Seeded random search; returns the ranked entries.
#[pyfunction]
#[pyo3(signature = (space, data, n, seed = 0, schema = None, train_fraction = 0.7))]
fn search<'py>(
    py: Python<'py>,
    space: &Bound<'py, PyAny>,
    data: &str,
    n: usize,
    seed: u64,
    schema: Option<&Bound<'py, PyAny>>,
    train_fraction: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let space: serde_json::Value = from_py(space)?;
    let (records, schema) = load(data, schema)?;
    let (train, _) = evaldata::chronological_split(&records, train_fraction);
    let ranked = py
        .detach(|| evaldata::random_search(&space, n, seed, train, &schema))
        .map_err(value_err)?;
    to_py(py, &ranked)
}

#[pyfunction]
fn interaction_id(a: &str, b: &str) -> String {
    chronoskill::interaction_id(a, b)
}

#[pymodule(name = "chronoskill")]
fn chronoskill_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Kernel>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(random_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(interaction_id, m)?)?;
    Ok(())
}
