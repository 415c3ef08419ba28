//! Python bindings: structures, Hamiltonian systems, symmetry checks,
//! integration and scenario files. Reports come back as plain dicts.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use lcskit::dynamics::{self, IntegratorConfig};
use lcskit::geometry::{Chart, SampleSet, SampleSpec, ScalarField, VectorField};
use lcskit::lcs::{self as core_lcs};
use lcskit::report::{CheckConfig, DEFAULT_MIN_SAMPLES, DEFAULT_TOLERANCE};
use lcskit::scenario::{self, Loaded, ReportBundle, RunOptions};
use lcskit::symmetry;
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

fn err(e: lcskit::Error) -> PyErr {
    match e {
        lcskit::Error::UnknownCheck(name) => PyKeyError::new_err(name),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => py.None().into_bound(py),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for x in items {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, x) in map {
                dict.set_item(k, to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Sampling parameters shared by every check method.
struct Sampling {
    region: Vec<(f64, f64)>,
    count: usize,
    seed: u64,
    tolerance: f64,
}

impl Sampling {
    fn samples(&self, chart: &Arc<Chart>) -> PyResult<SampleSet> {
        let mut region = self.region.clone();
        if chart.time().is_some() && region.len() + 1 == chart.dim() {
            region.push(scenario::DEFAULT_TIME_RANGE);
        }
        SampleSet::new(chart, &SampleSpec::halton(self.count, self.seed, region)).map_err(err)
    }

    fn config(&self) -> CheckConfig {
        CheckConfig {
            tolerance: self.tolerance,
            min_samples: DEFAULT_MIN_SAMPLES.min(self.count),
        }
    }
}

/// A locally conformal symplectic structure `(Ω, θ)` on a coordinate chart.
#[pyclass(module = "lcskit", frozen)]
struct LcsStructure {
    inner: core_lcs::LcsStructure,
}

#[pymethods]
impl LcsStructure {
    /// `omega` holds `(a, b, coefficient)` triples for `coefficient·da∧db`;
    /// `theta` maps coordinates to coefficients of the Lee form.
    #[new]
    #[pyo3(signature = (coordinates, omega, theta=None, bounds=None, exclusions=None))]
    fn new(
        coordinates: Vec<String>,
        omega: Vec<(String, String, String)>,
        theta: Option<BTreeMap<String, String>>,
        bounds: Option<BTreeMap<String, (f64, f64)>>,
        exclusions: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let mut chart = Chart::new(&coordinates).map_err(err)?;
        for (name, (lo, hi)) in bounds.unwrap_or_default() {
            chart = chart.with_bounds(&name, lo, hi).map_err(err)?;
        }
        for ex in exclusions.unwrap_or_default() {
            chart = chart.with_exclusion(&ex).map_err(err)?;
        }
        let chart = Arc::new(chart);
        let omega: Vec<(&str, &str, &str)> = omega
            .iter()
            .map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))
            .collect();
        let theta = theta.unwrap_or_default();
        let theta: Vec<(&str, &str)> = theta.iter().map(|(a, c)| (a.as_str(), c.as_str())).collect();
        let inner = core_lcs::LcsStructure::parse(&chart, &omega, &theta).map_err(err)?;
        Ok(LcsStructure { inner })
    }

    #[getter]
    fn coordinates(&self) -> Vec<String> {
        self.inner.chart().names().to_vec()
    }

    /// Certifies nondegeneracy, `dθ = 0` and `dΩ = θ∧Ω` on Halton samples in `region`.
    #[pyo3(signature = (region, count=1000, seed=42, tolerance=DEFAULT_TOLERANCE))]
    fn validate<'py>(
        &self,
        py: Python<'py>,
        region: Vec<(f64, f64)>,
        count: usize,
        seed: u64,
        tolerance: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let s = Sampling {
            region,
            count,
            seed,
            tolerance,
        };
        let samples = s.samples(self.inner.chart())?;
        serialize(py, &self.inner.validate(&samples, &s.config()))
    }

    /// Components of the Hamiltonian vector field of `f` at `point`.
    fn hamiltonian_field(&self, f: &str, point: Vec<f64>) -> PyResult<Vec<f64>> {
        let f = ScalarField::parse(self.inner.chart(), f).map_err(err)?;
        self.inner
            .hamiltonian_vector_field(&f)
            .and_then(|x| x.at(&point))
            .map_err(err)
    }

    /// The Jacobi bracket `{f, g}` at `point`.
    fn jacobi_bracket(&self, f: &str, g: &str, point: Vec<f64>) -> PyResult<f64> {
        let c = self.inner.chart();
        let f = ScalarField::parse(c, f).map_err(err)?;
        let g = ScalarField::parse(c, g).map_err(err)?;
        self.inner
            .jacobi_bracket(&f, &g)
            .and_then(|b| b.at(&point))
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("LcsStructure(coordinates={:?})", self.inner.chart().names())
    }
}

/// A Hamiltonian `H` on an LCS structure, optionally time-dependent (`t`).
#[pyclass(module = "lcskit", frozen)]
struct HamiltonianSystem {
    inner: core_lcs::HamiltonianSystem,
}

impl HamiltonianSystem {
    fn field(&self, components: &[String]) -> PyResult<VectorField> {
        VectorField::parse(self.inner.chart(), components).map_err(err)
    }

    fn function(&self, f: &str) -> PyResult<ScalarField> {
        self.inner.parse_scalar(f).map_err(err)
    }
}

#[pymethods]
impl HamiltonianSystem {
    #[new]
    #[pyo3(signature = (structure, hamiltonian, time_dependent=false))]
    fn new(structure: &LcsStructure, hamiltonian: &str, time_dependent: bool) -> PyResult<Self> {
        let inner = core_lcs::HamiltonianSystem::new(&structure.inner, hamiltonian, time_dependent).map_err(err)?;
        Ok(HamiltonianSystem { inner })
    }

    /// Coordinates of the working chart (with a trailing `t` when time-dependent).
    #[getter]
    fn coordinates(&self) -> Vec<String> {
        self.inner.chart().names().to_vec()
    }

    /// `X_H` at `point`.
    fn vector_field(&self, point: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.field().and_then(|x| x.at(&point)).map_err(err)
    }

    /// `θ(X_H)` at `point`.
    fn theta_of_dynamics(&self, point: Vec<f64>) -> PyResult<f64> {
        let x = self.inner.field().map_err(err)?;
        let v = x.contract(self.inner.theta()).and_then(|s| s.at(&point)).map_err(err)?;
        Ok(v[0])
    }

    /// Scaling-symmetry check of the field with the given components.
    #[pyo3(signature = (components, region, expected=None, count=1000, seed=42, tolerance=DEFAULT_TOLERANCE))]
    #[allow(clippy::too_many_arguments)]
    fn check_scaling<'py>(
        &self,
        py: Python<'py>,
        components: Vec<String>,
        region: Vec<(f64, f64)>,
        expected: Option<(f64, f64)>,
        count: usize,
        seed: u64,
        tolerance: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let s = Sampling {
            region,
            count,
            seed,
            tolerance,
        };
        let x = self.field(&components)?;
        let r =
            symmetry::check_scaling_symmetry(&x, &self.inner, &s.samples(self.inner.chart())?, expected, &s.config());
        serialize(py, &r.map_err(err)?)
    }

    /// Canonoid-generator check of the field with the given components.
    #[pyo3(signature = (components, region, count=1000, seed=42, tolerance=DEFAULT_TOLERANCE))]
    fn check_canonoid_generator<'py>(
        &self,
        py: Python<'py>,
        components: Vec<String>,
        region: Vec<(f64, f64)>,
        count: usize,
        seed: u64,
        tolerance: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let s = Sampling {
            region,
            count,
            seed,
            tolerance,
        };
        let x = self.field(&components)?;
        let r = symmetry::check_canonoid_generator(&x, &self.inner, &s.samples(self.inner.chart())?, &s.config());
        serialize(py, &r.map_err(err)?)
    }

    /// `check` is one of `dissipated`, `constant_of_motion` or `noether`.
    #[pyo3(signature = (check, f, region, count=1000, seed=42, tolerance=DEFAULT_TOLERANCE))]
    #[allow(clippy::too_many_arguments)]
    fn check_quantity<'py>(
        &self,
        py: Python<'py>,
        check: &str,
        f: &str,
        region: Vec<(f64, f64)>,
        count: usize,
        seed: u64,
        tolerance: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let s = Sampling {
            region,
            count,
            seed,
            tolerance,
        };
        let f = self.function(f)?;
        let samples = s.samples(self.inner.chart())?;
        let cfg = s.config();
        let r = match check {
            "dissipated" => symmetry::check_dissipated(&f, &self.inner, &samples, &cfg),
            "constant_of_motion" => symmetry::check_constant_of_motion(&f, &self.inner, &samples, &cfg),
            "noether" => symmetry::check_noether_invariance(&f, &self.inner, &samples, &cfg),
            other => return Err(PyKeyError::new_err(other.to_string())),
        };
        serialize(py, &r.map_err(err)?)
    }

    /// Integrates the dynamics from a base-chart `start` point. Returns a dict
    /// with `times`, `states`, `termination` and one series per monitor.
    #[pyo3(signature = (start, span, method="rkf45", step=None, abs_tol=None, rel_tol=None, monitors=None))]
    #[allow(clippy::too_many_arguments)]
    fn integrate<'py>(
        &self,
        py: Python<'py>,
        start: Vec<f64>,
        span: (f64, f64),
        method: &str,
        step: Option<f64>,
        abs_tol: Option<f64>,
        rel_tol: Option<f64>,
        monitors: Option<BTreeMap<String, String>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = match method {
            "rk4" => IntegratorConfig::rk4(step.ok_or_else(|| PyValueError::new_err("rk4 needs `step`"))?),
            "rkf45" => IntegratorConfig::rkf45(
                abs_tol.unwrap_or(dynamics::DEFAULT_ABS_TOL),
                rel_tol.unwrap_or(dynamics::DEFAULT_REL_TOL),
            ),
            other => return Err(PyValueError::new_err(format!("unknown method `{other}`"))),
        };
        cfg.validate().map_err(err)?;
        let tr = dynamics::integrate_system(&self.inner, &start, span, &cfg).map_err(err)?;
        let functions = monitors
            .unwrap_or_default()
            .into_iter()
            .map(|(name, f)| Ok((name, self.function(&f)?)))
            .collect::<PyResult<Vec<_>>>()?;
        let refs: Vec<(&str, &ScalarField)> = functions.iter().map(|(n, f)| (n.as_str(), f)).collect();
        let series = dynamics::monitor(&tr, &refs, &self.inner, Some(dynamics::RATIO_THRESHOLD)).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("times", tr.times.clone())?;
        out.set_item("states", tr.states.clone())?;
        out.set_item("termination", serialize(py, &tr.termination)?)?;
        let m = PyDict::new(py);
        for s in &series {
            m.set_item(&s.name, serialize(py, s)?)?;
        }
        out.set_item("monitors", m)?;
        out.set_item("csv", tr.to_csv(&series))?;
        Ok(out.into_any())
    }
}

/// A scenario file with every declared field, map and check built.
#[pyclass(module = "lcskit", frozen)]
struct Scenario {
    inner: Loaded,
}

fn run_options(tolerance: Option<f64>, samples: Option<usize>, seed: Option<u64>) -> RunOptions {
    RunOptions {
        tolerance,
        samples,
        seed,
    }
}

#[pymethods]
impl Scenario {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(Scenario {
            inner: Loaded::from_path(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_str(text: &str) -> PyResult<Self> {
        Ok(Scenario {
            inner: Loaded::parse(text).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn checks(&self) -> Vec<String> {
        self.inner.scenario.checks.iter().map(|c| c.name.clone()).collect()
    }

    #[getter]
    fn integrations(&self) -> Vec<String> {
        self.inner
            .scenario
            .integrations
            .iter()
            .map(|c| c.name.clone())
            .collect()
    }

    /// Runs checks (all when `names` is omitted) and returns the report bundle.
    #[pyo3(signature = (names=None, tolerance=None, samples=None, seed=None))]
    fn check<'py>(
        &self,
        py: Python<'py>,
        names: Option<Vec<String>>,
        tolerance: Option<f64>,
        samples: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let opts = run_options(tolerance, samples, seed);
        let names = names.unwrap_or_default();
        let records = py.detach(|| self.inner.run_checks(&names, &opts)).map_err(err)?;
        serialize(
            py,
            &ReportBundle::new(self.inner.name(), "check", &opts, records, Vec::new()),
        )
    }

    /// Runs integrations and returns the report bundle; trajectory CSV text
    /// is under each record's `csv_text` key.
    #[pyo3(signature = (names=None))]
    fn integrate<'py>(&self, py: Python<'py>, names: Option<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
        let names = names.unwrap_or_default();
        let outcomes = py.detach(|| self.inner.run_integrations(&names)).map_err(err)?;
        let texts: Vec<Option<String>> = outcomes.iter().map(|o| o.csv.clone()).collect();
        let records = outcomes.into_iter().map(|o| o.record).collect();
        let bundle = ReportBundle::new(
            self.inner.name(),
            "integrate",
            &RunOptions::default(),
            Vec::new(),
            records,
        );
        let out = serialize(py, &bundle)?;
        let list = out.get_item("integrations")?;
        for (i, text) in texts.into_iter().enumerate() {
            list.get_item(i)?.set_item("csv_text", text)?;
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?})", self.inner.name())
    }
}

#[pymodule(name = "lcskit")]
fn lcskit_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LcsStructure>()?;
    m.add_class::<HamiltonianSystem>()?;
    m.add_class::<Scenario>()?;
    m.add("SCHEMA_VERSION", scenario::SCHEMA_VERSION)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
