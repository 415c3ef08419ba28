//! TOML scenario files and the JSON report bundle produced from them.
//!
//! A scenario declares a chart, an LCS structure, a Hamiltonian, named
//! functions, vector fields and maps, and then the checks and integrations to
//! run on them. See `docs/scenario-format.md` and `docs/report-schema.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, IntegratorConfig, Method, Termination};
use crate::error::{Error, Result};
use crate::geometry::{magnitude, Chart, ChartMap, SampleSet, SampleSpec, ScalarField, VectorField};
use crate::lcs::{ExtendedStructure, HamiltonianSystem, LcsStructure};
use crate::report::{CheckConfig, CheckReport, IdentityStats, Verdict, DEFAULT_MIN_SAMPLES};
use crate::symmetry;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: &str = "1.0.0";

/// Sampling range for `t` when none is given.
pub const DEFAULT_TIME_RANGE: (f64, f64) = (0.0, 1.0);

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub chart: ChartSpec,
    pub lcs: LcsSpec,
    #[serde(default)]
    pub hamiltonian: HamiltonianSpec,
    #[serde(default)]
    pub samples: SampleOptions,
    #[serde(default)]
    pub functions: BTreeMap<String, String>,
    #[serde(default)]
    pub fields: BTreeMap<String, FieldSpec>,
    #[serde(default)]
    pub maps: BTreeMap<String, MapSpec>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub integrations: Vec<IntegrationSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub coordinates: Vec<String>,
    #[serde(default)]
    pub bounds: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    pub exclusions: Vec<String>,
    pub margin: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcsSpec {
    /// `(a, b, coefficient)` for `coefficient · da∧db`, `a` before `b` in chart order.
    pub omega: Vec<(String, String, String)>,
    #[serde(default)]
    pub theta: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub expression: String,
    #[serde(default)]
    pub time_dependent: bool,
}

impl Default for HamiltonianSpec {
    fn default() -> Self {
        HamiltonianSpec {
            expression: "0".into(),
            time_dependent: false,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleOptions {
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub margin: Option<f64>,
    /// Box for the base coordinates.
    pub region: Option<Vec<(f64, f64)>>,
    /// Range of `t` when sampling the extended chart.
    pub time: Option<(f64, f64)>,
    pub points: Option<Vec<Vec<f64>>>,
    pub min_samples: Option<usize>,
    /// Keep only points where `|function| > min_abs`.
    pub filter: Option<SampleFilter>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleFilter {
    pub function: String,
    pub min_abs: f64,
}

impl SampleOptions {
    fn merged(&self, over: &SampleOptions) -> SampleOptions {
        SampleOptions {
            count: over.count.or(self.count),
            seed: over.seed.or(self.seed),
            margin: over.margin.or(self.margin),
            region: over.region.clone().or_else(|| self.region.clone()),
            time: over.time.or(self.time),
            points: over.points.clone().or_else(|| self.points.clone()),
            min_samples: over.min_samples.or(self.min_samples),
            filter: over.filter.clone().or_else(|| self.filter.clone()),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum FieldSpec {
    /// One expression per coordinate of the working chart.
    Components(Vec<String>),
    /// `X_f` for an expression or function name `f`.
    Hamiltonian { hamiltonian: String },
    /// `[A, B]` of two named fields.
    Bracket { bracket: (String, String) },
    /// `Σ c_i X_i` over named fields.
    Combination { combination: Vec<(f64, String)> },
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ChartKind {
    #[default]
    Base,
    Extended,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum MapSpec {
    Identity {
        identity: ChartKind,
    },
    /// Components on the base chart, or base components of a time-preserving
    /// map of the extended chart when `time_passthrough` is set.
    Components {
        components: Vec<String>,
        #[serde(default)]
        time_passthrough: bool,
    },
    /// Numerical time-`time` flow of a named field.
    Flow {
        flow: String,
        time: f64,
        #[serde(default)]
        integrator: IntegratorSpec,
    },
    /// `F(x, t) = (Φ(x), t)` for a named base map `Φ`.
    Extend {
        extend: String,
    },
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Validate,
    CanonicalMap,
    ExtendedCanonical,
    CanonicalGenerator,
    CanonoidMap,
    CanonoidGenerator,
    Scaling,
    RescaledScaling,
    CompanionForm,
    Dissipated,
    ConstantOfMotion,
    Noether,
}

impl CheckKind {
    fn needs_extended(self) -> bool {
        matches!(self, CheckKind::ExtendedCanonical | CheckKind::CanonicalGenerator)
    }
}

/// Outcome of a check or integration, including setup errors.
#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Indeterminate,
    Error,
}

impl From<Verdict> for Status {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => Status::Pass,
            Verdict::Fail => Status::Fail,
            Verdict::Indeterminate => Status::Indeterminate,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub name: String,
    pub kind: CheckKind,
    pub field: Option<String>,
    /// Second field of a companion-form check.
    pub other: Option<String>,
    pub map: Option<String>,
    /// Function name or expression: the quantity, `K` or `K_F`.
    pub function: Option<String>,
    /// Degree `(Λ, β)` to test at.
    pub expected: Option<(f64, f64)>,
    pub beta: Option<f64>,
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub samples: SampleOptions,
    /// Declared outcome; `pass` when omitted.
    pub expect: Option<Status>,
    /// Identities expected to exceed tolerance when `expect = "fail"`.
    #[serde(default)]
    pub failing: Vec<String>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Rk4,
    #[default]
    Rkf45,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default)]
    pub method: MethodName,
    pub step: Option<f64>,
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub max_steps: Option<usize>,
    pub margin: Option<f64>,
}

impl IntegratorSpec {
    pub fn config(&self) -> Result<IntegratorConfig> {
        let mut cfg = match self.method {
            MethodName::Rk4 => IntegratorConfig::rk4(
                self.step
                    .ok_or_else(|| Error::Schema("rk4 integration needs `step`".into()))?,
            ),
            MethodName::Rkf45 => IntegratorConfig::rkf45(
                self.abs_tol.unwrap_or(dynamics::DEFAULT_ABS_TOL),
                self.rel_tol.unwrap_or(dynamics::DEFAULT_REL_TOL),
            ),
        };
        if let Some(n) = self.max_steps {
            cfg.max_steps = n;
        }
        cfg.margin = self.margin;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MonitorQuantity {
    Conservation,
    Dissipation,
    RatioDrift,
    ValueDrift,
    /// Largest magnitude of a field monitor.
    Magnitude,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub monitor: String,
    pub quantity: MonitorQuantity,
    pub max: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    pub name: String,
    /// Initial point on the base chart (time is appended for time-dependent
    /// systems) or on the chart of `field`.
    pub start: Vec<f64>,
    pub span: (f64, f64),
    /// Field to integrate instead of the Hamiltonian dynamics.
    pub field: Option<String>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub monitors: Vec<String>,
    #[serde(default)]
    pub field_monitors: Vec<String>,
    pub ratio_threshold: Option<f64>,
    #[serde(default)]
    pub bounds: Vec<BoundSpec>,
    /// Fail unless the horizon is reached. Defaults to true.
    pub require_horizon: Option<bool>,
    pub expect: Option<Status>,
}

/// Command-line overrides applied to every check.
#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct RunOptions {
    pub tolerance: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Scenario::parse(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}

/// A scenario with every declared object built.
pub struct Loaded {
    pub scenario: Scenario,
    pub structure: LcsStructure,
    pub system: HamiltonianSystem,
    pub extended: ExtendedStructure,
    pub functions: BTreeMap<String, ScalarField>,
    pub fields: BTreeMap<String, VectorField>,
    pub maps: BTreeMap<String, ChartMap>,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

fn context(what: &str, e: Error) -> Error {
    match e {
        Error::Schema(_) => e,
        e => Error::Schema(format!("{what}: {e}")),
    }
}

impl Loaded {
    pub fn from_path(path: &Path) -> Result<Loaded> {
        Loaded::new(Scenario::from_path(path)?)
    }

    pub fn parse(text: &str) -> Result<Loaded> {
        Loaded::new(Scenario::parse(text)?)
    }

    pub fn new(scenario: Scenario) -> Result<Loaded> {
        let spec = &scenario.chart;
        let mut chart = Chart::new(&spec.coordinates).map_err(|e| context("chart", e))?;
        for (name, (lo, hi)) in &spec.bounds {
            chart = chart
                .with_bounds(name, *lo, *hi)
                .map_err(|e| context("chart.bounds", e))?;
        }
        for ex in &spec.exclusions {
            chart = chart.with_exclusion(ex).map_err(|e| context("chart.exclusions", e))?;
        }
        if let Some(m) = spec.margin {
            chart = chart.with_margin(m).map_err(|e| context("chart.margin", e))?;
        }
        let chart = Arc::new(chart);
        for (a, b, _) in &scenario.lcs.omega {
            let (i, j) = (
                chart.index(a).map_err(|e| context("lcs.omega", e))?,
                chart.index(b).map_err(|e| context("lcs.omega", e))?,
            );
            if i >= j {
                return Err(schema(format!(
                    "lcs.omega: pair ({a}, {b}) is not in increasing chart order"
                )));
            }
        }
        let omega: Vec<(&str, &str, &str)> = scenario
            .lcs
            .omega
            .iter()
            .map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))
            .collect();
        let theta: Vec<(&str, &str)> = scenario
            .lcs
            .theta
            .iter()
            .map(|(a, c)| (a.as_str(), c.as_str()))
            .collect();
        let structure = LcsStructure::parse(&chart, &omega, &theta).map_err(|e| context("lcs", e))?;
        let h = &scenario.hamiltonian;
        let system = HamiltonianSystem::new(&structure, &h.expression, h.time_dependent)
            .map_err(|e| context("hamiltonian", e))?;
        let extended = structure.extend();

        let mut functions = BTreeMap::new();
        for (name, text) in &scenario.functions {
            let f = system
                .parse_scalar(text)
                .map_err(|e| context(&format!("functions.{name}"), e))?;
            functions.insert(name.clone(), f);
        }
        let mut loaded = Loaded {
            scenario: scenario.clone(),
            structure,
            system,
            extended,
            functions,
            fields: BTreeMap::new(),
            maps: BTreeMap::new(),
        };
        for name in scenario.fields.keys() {
            loaded.resolve_field(name, &mut BTreeSet::new())?;
        }
        for name in scenario.maps.keys() {
            loaded.resolve_map(name, &mut BTreeSet::new())?;
        }
        let mut seen = BTreeSet::new();
        for c in &scenario.checks {
            if !seen.insert(c.name.as_str()) {
                return Err(schema(format!("duplicate check name `{}`", c.name)));
            }
        }
        let mut seen = BTreeSet::new();
        for i in &scenario.integrations {
            if !seen.insert(i.name.as_str()) {
                return Err(schema(format!("duplicate integration name `{}`", i.name)));
            }
        }
        Ok(loaded)
    }

    pub fn name(&self) -> &str {
        &self.scenario.name
    }

    /// A declared function, `H` for the Hamiltonian, or else an expression
    /// on the working chart.
    pub fn function(&self, text: &str) -> Result<ScalarField> {
        match self.functions.get(text) {
            Some(f) => Ok(f.clone()),
            None if text == "H" => Ok(self.system.hamiltonian().clone()),
            None => self.system.parse_scalar(text),
        }
    }

    pub fn field(&self, name: &str) -> Result<VectorField> {
        self.fields
            .get(name)
            .cloned()
            .ok_or_else(|| schema(format!("unknown field `{name}`")))
    }

    pub fn map(&self, name: &str) -> Result<ChartMap> {
        self.maps
            .get(name)
            .cloned()
            .ok_or_else(|| schema(format!("unknown map `{name}`")))
    }

    fn resolve_field(&mut self, name: &str, stack: &mut BTreeSet<String>) -> Result<VectorField> {
        if let Some(f) = self.fields.get(name) {
            return Ok(f.clone());
        }
        let spec = self
            .scenario
            .fields
            .get(name)
            .cloned()
            .ok_or_else(|| schema(format!("unknown field `{name}`")))?;
        if !stack.insert(name.to_string()) {
            return Err(schema(format!("field `{name}` is defined in terms of itself")));
        }
        let what = format!("fields.{name}");
        let field = match spec {
            FieldSpec::Components(c) => VectorField::parse(self.system.chart(), &c),
            FieldSpec::Hamiltonian { hamiltonian } => self
                .function(&hamiltonian)
                .and_then(|f| self.system.hamiltonian_vector_field(&f)),
            FieldSpec::Bracket { bracket: (a, b) } => {
                let a = self.resolve_field(&a, stack)?;
                let b = self.resolve_field(&b, stack)?;
                a.bracket(&b)
            }
            FieldSpec::Combination { combination } => {
                let mut parts = Vec::new();
                for (c, n) in &combination {
                    parts.push((*c, self.resolve_field(n, stack)?));
                }
                let refs: Vec<(f64, &VectorField)> = parts.iter().map(|(c, f)| (*c, f)).collect();
                crate::lcs::combine_fields(&refs)
            }
        }
        .map_err(|e| context(&what, e))?;
        stack.remove(name);
        self.fields.insert(name.to_string(), field.clone());
        Ok(field)
    }

    fn resolve_map(&mut self, name: &str, stack: &mut BTreeSet<String>) -> Result<ChartMap> {
        if let Some(m) = self.maps.get(name) {
            return Ok(m.clone());
        }
        let spec = self
            .scenario
            .maps
            .get(name)
            .cloned()
            .ok_or_else(|| schema(format!("unknown map `{name}`")))?;
        if !stack.insert(name.to_string()) {
            return Err(schema(format!("map `{name}` is defined in terms of itself")));
        }
        let what = format!("maps.{name}");
        let base = self.structure.chart().clone();
        let map = match spec {
            MapSpec::Identity { identity } => Ok(ChartMap::identity(match identity {
                ChartKind::Base => &base,
                ChartKind::Extended => self.extended.chart(),
            })),
            MapSpec::Components {
                components,
                time_passthrough: false,
            } => ChartMap::parse(&base, &base, &components),
            MapSpec::Components {
                components,
                time_passthrough: true,
            } => ChartMap::parse_time_passthrough(self.extended.chart(), &components),
            MapSpec::Flow { flow, time, integrator } => {
                let field = self.resolve_field(&flow, &mut BTreeSet::new())?;
                integrator
                    .config()
                    .and_then(|cfg| dynamics::flow_map(&field, time, &cfg))
            }
            MapSpec::Extend { extend } => {
                let inner = self.resolve_map(&extend, stack)?;
                inner.extend_frozen(self.extended.chart())
            }
        }
        .map_err(|e| context(&what, e))?;
        stack.remove(name);
        self.maps.insert(name.to_string(), map.clone());
        Ok(map)
    }

    fn sample_options(&self, check: &SampleOptions, opts: &RunOptions) -> SampleOptions {
        let mut s = self.scenario.samples.merged(check);
        if opts.samples.is_some() {
            s.count = opts.samples;
            s.points = None;
        }
        if opts.seed.is_some() {
            s.seed = opts.seed;
        }
        s
    }

    /// Builds the sample set for `chart` (base, working or extended).
    pub fn samples(&self, chart: &Arc<Chart>, options: &SampleOptions) -> Result<SampleSet> {
        let mut spec = SampleSpec {
            count: options.count.unwrap_or(if options.points.is_some() {
                0
            } else {
                crate::geometry::DEFAULT_SAMPLES
            }),
            seed: options.seed.unwrap_or(crate::geometry::DEFAULT_SEED),
            margin: options.margin,
            region: None,
            points: options.points.clone().unwrap_or_default(),
        };
        if let Some(region) = &options.region {
            let mut region = region.clone();
            if chart.time().is_some() && region.len() + 1 == chart.dim() {
                region.push(options.time.unwrap_or(DEFAULT_TIME_RANGE));
            }
            spec.region = Some(region);
        }
        if chart.time().is_some() {
            let t = options.time.map_or(DEFAULT_TIME_RANGE.0, |r| 0.5 * (r.0 + r.1));
            for p in spec.points.iter_mut().filter(|p| p.len() + 1 == chart.dim()) {
                p.push(t);
            }
        }
        let set = SampleSet::new(chart, &spec)?;
        let Some(filter) = &options.filter else {
            return Ok(set);
        };
        let f = self.function(&filter.function)?;
        let f = if chart.time().is_some() && f.chart().time().is_none() {
            self.extended.lift_scalar(&f)?
        } else {
            f
        };
        let mut keep = Vec::new();
        for p in set.points() {
            if f.at(p)?.abs() > filter.min_abs {
                keep.push(p.clone());
            }
        }
        SampleSet::from_points(chart, keep)
    }

    pub fn check_spec(&self, name: &str) -> Result<&CheckSpec> {
        self.scenario
            .checks
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownCheck(name.to_string()))
    }

    /// The implicit structure validation used by the `validate` command.
    pub fn validation_spec(&self) -> CheckSpec {
        self.scenario
            .checks
            .iter()
            .find(|c| c.kind == CheckKind::Validate)
            .cloned()
            .unwrap_or(CheckSpec {
                name: "validate".into(),
                kind: CheckKind::Validate,
                field: None,
                other: None,
                map: None,
                function: None,
                expected: None,
                beta: None,
                tolerance: None,
                samples: SampleOptions::default(),
                expect: None,
                failing: Vec::new(),
            })
    }

    /// Runs one check and times it; setup errors become `error` records.
    pub fn run_check(&self, spec: &CheckSpec, opts: &RunOptions) -> CheckRecord {
        let start = Instant::now();
        let options = self.sample_options(&spec.samples, opts);
        let tolerance = opts
            .tolerance
            .or(spec.tolerance)
            .unwrap_or(crate::report::DEFAULT_TOLERANCE);
        let cfg = CheckConfig {
            tolerance,
            min_samples: options.min_samples.unwrap_or(DEFAULT_MIN_SAMPLES),
        };
        let outcome = self.evaluate_check(spec, &options, &cfg);
        let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        CheckRecord::new(spec, tolerance, options, outcome, wall_time_ms)
    }

    fn evaluate_check(&self, spec: &CheckSpec, options: &SampleOptions, cfg: &CheckConfig) -> Result<CheckReport> {
        let need = |what: &Option<String>, key: &str| {
            what.clone()
                .ok_or_else(|| schema(format!("check `{}` needs `{key}`", spec.name)))
        };
        let sys = &self.system;
        let chart = match spec.kind {
            CheckKind::Validate | CheckKind::CanonicalMap => self.structure.chart().clone(),
            k if k.needs_extended() => self.extended.chart().clone(),
            _ => sys.chart().clone(),
        };
        let samples = self.samples(&chart, options)?;
        match spec.kind {
            CheckKind::Validate => Ok(self.structure.validate(&samples, cfg)),
            CheckKind::CanonicalMap => {
                let map = self.map(&need(&spec.map, "map")?)?;
                symmetry::check_canonical_map(&map, &self.structure, &samples, cfg)
            }
            CheckKind::ExtendedCanonical => {
                let map = self.map(&need(&spec.map, "map")?)?;
                let k = match &spec.function {
                    Some(f) => self.function(f)?,
                    None => ScalarField::constant(self.extended.chart(), 0.0),
                };
                symmetry::check_extended_canonical(&map, &k, &self.extended, &samples, cfg)
            }
            CheckKind::CanonicalGenerator => {
                let x = self.field(&need(&spec.field, "field")?)?;
                symmetry::check_canonical_generator(&x, &self.extended, &samples, cfg)
            }
            CheckKind::CanonoidMap => {
                let map = self.map(&need(&spec.map, "map")?)?;
                let k = spec.function.as_deref().map(|f| self.function(f)).transpose()?;
                symmetry::check_canonoid_map(&map, sys, &samples, k.as_ref(), cfg)
            }
            CheckKind::CanonoidGenerator => {
                let x = self.field(&need(&spec.field, "field")?)?;
                symmetry::check_canonoid_generator(&x, sys, &samples, cfg)
            }
            CheckKind::Scaling => {
                let x = self.field(&need(&spec.field, "field")?)?;
                symmetry::check_scaling_symmetry(&x, sys, &samples, spec.expected, cfg)
            }
            CheckKind::RescaledScaling => {
                let x = self.field(&need(&spec.field, "field")?)?;
                let beta = spec
                    .beta
                    .ok_or_else(|| schema(format!("check `{}` needs `beta`", spec.name)))?;
                let y = symmetry::rescale_symmetry(&x, beta)?;
                let mut r = symmetry::check_scaling_symmetry(&y, sys, &samples, spec.expected, cfg)?;
                r.parameters.insert("rescaled_by".into(), beta);
                Ok(r)
            }
            CheckKind::CompanionForm => {
                let x = self.field(&need(&spec.field, "field")?)?;
                let y = self.field(&need(&spec.other, "other")?)?;
                symmetry::companion_scaling_form(&x, &y, sys, &samples, cfg).map(|(_, r)| r)
            }
            CheckKind::Dissipated => {
                let f = self.function(&need(&spec.function, "function")?)?;
                symmetry::check_dissipated(&f, sys, &samples, cfg)
            }
            CheckKind::ConstantOfMotion => {
                let f = self.function(&need(&spec.function, "function")?)?;
                symmetry::check_constant_of_motion(&f, sys, &samples, cfg)
            }
            CheckKind::Noether => {
                let f = self.function(&need(&spec.function, "function")?)?;
                symmetry::check_noether_invariance(&f, sys, &samples, cfg)
            }
        }
    }

    /// Runs the named checks (all declared checks when `names` is empty)
    /// concurrently; records are ordered by check name.
    pub fn run_checks(&self, names: &[String], opts: &RunOptions) -> Result<Vec<CheckRecord>> {
        let specs: Vec<&CheckSpec> = if names.is_empty() {
            self.scenario.checks.iter().collect()
        } else {
            names.iter().map(|n| self.check_spec(n)).collect::<Result<_>>()?
        };
        let mut records: Vec<CheckRecord> = specs.par_iter().map(|s| self.run_check(s, opts)).collect();
        records.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(records)
    }

    pub fn integration_spec(&self, name: &str) -> Result<&IntegrationSpec> {
        self.scenario
            .integrations
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| schema(format!("unknown integration `{name}`")))
    }

    pub fn run_integration(&self, spec: &IntegrationSpec) -> IntegrationOutcome {
        let start = Instant::now();
        let result = self.evaluate_integration(spec);
        let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        IntegrationOutcome::new(spec, result, wall_time_ms)
    }

    fn evaluate_integration(&self, spec: &IntegrationSpec) -> Result<(IntegrationRecord, String)> {
        let cfg = spec.integrator.config()?;
        let trajectory = match &spec.field {
            Some(f) => dynamics::integrate(&self.field(f)?, &spec.start, spec.span, &cfg)?,
            None => dynamics::integrate_system(&self.system, &spec.start, spec.span, &cfg)?,
        };
        let functions = spec
            .monitors
            .iter()
            .map(|n| {
                self.functions
                    .get(n)
                    .map(|f| (n.as_str(), f))
                    .ok_or_else(|| schema(format!("unknown monitor function `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let series = dynamics::monitor(&trajectory, &functions, &self.system, spec.ratio_threshold)?;
        let mut field_monitors = Vec::new();
        for n in &spec.field_monitors {
            let values = dynamics::monitor_field(&trajectory, &self.field(n)?)?;
            field_monitors.push(FieldMonitorSummary {
                name: n.clone(),
                max: values.iter().copied().fold(0.0, f64::max),
            });
        }
        let monitors: Vec<MonitorSummary> = series
            .iter()
            .map(|s| MonitorSummary {
                name: s.name.clone(),
                max_conservation: s.max_conservation(),
                max_dissipation: s.max_dissipation(),
                ratio_drift: s.ratio_drift(),
                value_drift: s.value_drift(),
            })
            .collect();
        let mut bounds = Vec::new();
        for b in &spec.bounds {
            let value = if b.quantity == MonitorQuantity::Magnitude {
                field_monitors.iter().find(|m| m.name == b.monitor).map(|m| m.max)
            } else {
                monitors
                    .iter()
                    .find(|m| m.name == b.monitor)
                    .and_then(|m| match b.quantity {
                        MonitorQuantity::Conservation => Some(m.max_conservation),
                        MonitorQuantity::Dissipation => Some(m.max_dissipation),
                        MonitorQuantity::RatioDrift => m.ratio_drift,
                        MonitorQuantity::ValueDrift => Some(m.value_drift),
                        MonitorQuantity::Magnitude => None,
                    })
            };
            let value = value.ok_or_else(|| schema(format!("bound on unknown monitor `{}`", b.monitor)))?;
            bounds.push(BoundResult {
                monitor: b.monitor.clone(),
                quantity: b.quantity,
                max: b.max,
                value,
                pass: value <= b.max,
            });
        }
        let horizon_ok = trajectory.termination == Termination::Horizon || spec.require_horizon == Some(false);
        let status = if horizon_ok && bounds.iter().all(|b| b.pass) {
            Status::Pass
        } else {
            Status::Fail
        };
        let csv = trajectory.to_csv(&series);
        let record = IntegrationRecord {
            name: spec.name.clone(),
            status,
            expected: spec.expect.unwrap_or(Status::Pass),
            as_expected: false,
            method: cfg.method,
            termination: Some(trajectory.termination),
            states: trajectory.len(),
            t_start: trajectory.times.first().copied(),
            t_end: trajectory.times.last().copied(),
            final_state: trajectory.last().to_vec(),
            monitors,
            field_monitors,
            bounds,
            csv: None,
            error: None,
            wall_time_ms: 0.0,
        };
        Ok((record, csv))
    }

    pub fn run_integrations(&self, names: &[String]) -> Result<Vec<IntegrationOutcome>> {
        let specs: Vec<&IntegrationSpec> = if names.is_empty() {
            self.scenario.integrations.iter().collect()
        } else {
            names.iter().map(|n| self.integration_spec(n)).collect::<Result<_>>()?
        };
        let mut out: Vec<IntegrationOutcome> = specs.par_iter().map(|s| self.run_integration(s)).collect();
        out.sort_by(|a, b| a.record.name.cmp(&b.record.name));
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckRecord {
    pub name: String,
    pub kind: CheckKind,
    pub status: Status,
    pub expected: Status,
    pub as_expected: bool,
    pub tolerance: f64,
    pub samples: SampleOptions,
    pub sample_count: usize,
    pub identities: Vec<IdentityStats>,
    pub parameters: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub error: Option<String>,
    pub wall_time_ms: f64,
}

impl CheckRecord {
    fn new(
        spec: &CheckSpec,
        tolerance: f64,
        mut samples: SampleOptions,
        outcome: Result<CheckReport>,
        wall_time_ms: f64,
    ) -> CheckRecord {
        let expected = spec.expect.unwrap_or(Status::Pass);
        // Explicit points are echoed by count only.
        samples.points = None;
        let mut record = CheckRecord {
            name: spec.name.clone(),
            kind: spec.kind,
            status: Status::Error,
            expected,
            as_expected: false,
            tolerance,
            samples,
            sample_count: 0,
            identities: Vec::new(),
            parameters: BTreeMap::new(),
            notes: Vec::new(),
            error: None,
            wall_time_ms,
        };
        match outcome {
            Ok(r) => {
                record.status = r.verdict.into();
                record.sample_count = r.samples;
                record.identities = r.identities;
                record.parameters = r.parameters;
                record.notes = r.notes;
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        let failing_ok = spec
            .failing
            .iter()
            .all(|n| record.identities.iter().any(|i| &i.name == n && !i.passes(tolerance)));
        record.as_expected = record.status == expected && failing_ok;
        record
    }

    pub fn max_residual(&self) -> f64 {
        self.identities
            .iter()
            .filter(|i| i.gating)
            .map(|i| i.max)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MonitorSummary {
    pub name: String,
    pub max_conservation: f64,
    pub max_dissipation: f64,
    pub ratio_drift: Option<f64>,
    pub value_drift: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FieldMonitorSummary {
    pub name: String,
    pub max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BoundResult {
    pub monitor: String,
    pub quantity: MonitorQuantity,
    pub max: f64,
    pub value: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IntegrationRecord {
    pub name: String,
    pub status: Status,
    pub expected: Status,
    pub as_expected: bool,
    pub method: Method,
    pub termination: Option<Termination>,
    pub states: usize,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    pub final_state: Vec<f64>,
    pub monitors: Vec<MonitorSummary>,
    pub field_monitors: Vec<FieldMonitorSummary>,
    pub bounds: Vec<BoundResult>,
    /// File name of the trajectory CSV, when written.
    pub csv: Option<String>,
    pub error: Option<String>,
    pub wall_time_ms: f64,
}

/// An integration record with its trajectory CSV text.
#[derive(Clone, Debug)]
pub struct IntegrationOutcome {
    pub record: IntegrationRecord,
    pub csv: Option<String>,
}

impl IntegrationOutcome {
    fn new(spec: &IntegrationSpec, result: Result<(IntegrationRecord, String)>, wall_time_ms: f64) -> Self {
        let (mut record, csv) = match result {
            Ok((r, csv)) => (r, Some(csv)),
            Err(e) => (
                IntegrationRecord {
                    name: spec.name.clone(),
                    status: Status::Error,
                    expected: spec.expect.unwrap_or(Status::Pass),
                    as_expected: false,
                    method: spec
                        .integrator
                        .config()
                        .map(|c| c.method)
                        .unwrap_or(Method::Rk4 { step: f64::NAN }),
                    termination: None,
                    states: 0,
                    t_start: None,
                    t_end: None,
                    final_state: Vec::new(),
                    monitors: Vec::new(),
                    field_monitors: Vec::new(),
                    bounds: Vec::new(),
                    csv: None,
                    error: Some(e.to_string()),
                    wall_time_ms: 0.0,
                },
                None,
            ),
        };
        record.wall_time_ms = wall_time_ms;
        record.as_expected = record.status == record.expected;
        IntegrationOutcome { record, csv }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub checks: usize,
    pub integrations: usize,
    pub passed: usize,
    pub failed: usize,
    pub indeterminate: usize,
    pub errors: usize,
    /// Every record matched its declared expectation.
    pub expectations_met: bool,
    pub exit_code: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ReportBundle {
    pub schema_version: String,
    pub tool_version: String,
    pub scenario: String,
    pub command: String,
    /// RFC 3339 creation time; excluded from determinism comparisons.
    pub generated_at: String,
    pub options: BundleOptions,
    pub checks: Vec<CheckRecord>,
    pub integrations: Vec<IntegrationRecord>,
    pub summary: Summary,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct BundleOptions {
    pub tolerance: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

impl ReportBundle {
    pub fn new(
        scenario: &str,
        command: &str,
        opts: &RunOptions,
        checks: Vec<CheckRecord>,
        integrations: Vec<IntegrationRecord>,
    ) -> Self {
        let statuses: Vec<Status> = checks
            .iter()
            .map(|c| c.status)
            .chain(integrations.iter().map(|i| i.status))
            .collect();
        let count = |s: Status| statuses.iter().filter(|&&x| x == s).count();
        let errors = count(Status::Error);
        let exit_code = if errors > 0 {
            2
        } else if statuses.iter().all(|&s| s == Status::Pass) {
            0
        } else {
            1
        };
        let expectations_met = checks.iter().all(|c| c.as_expected) && integrations.iter().all(|i| i.as_expected);
        ReportBundle {
            schema_version: SCHEMA_VERSION.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            scenario: scenario.into(),
            command: command.into(),
            generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            options: BundleOptions {
                tolerance: opts.tolerance,
                samples: opts.samples,
                seed: opts.seed,
            },
            summary: Summary {
                checks: checks.len(),
                integrations: integrations.len(),
                passed: count(Status::Pass),
                failed: count(Status::Fail),
                indeterminate: count(Status::Indeterminate),
                errors,
                expectations_met,
                exit_code,
            },
            checks,
            integrations,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report bundles serialize")
    }

    /// One row per identity: `check, kind, status, identity, max, mean, count, failures, gating, tolerance`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record([
            "check",
            "kind",
            "status",
            "identity",
            "max",
            "mean",
            "count",
            "failures",
            "gating",
            "tolerance",
        ])
        .map_err(err)?;
        for c in &self.checks {
            let kind = serde_json::to_value(c.kind).expect("kind serializes");
            let status = serde_json::to_value(c.status).expect("status serializes");
            let (kind, status) = (kind.as_str().unwrap_or(""), status.as_str().unwrap_or(""));
            if c.identities.is_empty() {
                w.write_record([
                    c.name.as_str(),
                    kind,
                    status,
                    "",
                    "",
                    "",
                    "",
                    "",
                    "",
                    &c.tolerance.to_string(),
                ])
                .map_err(err)?;
            }
            for i in &c.identities {
                w.write_record([
                    c.name.as_str(),
                    kind,
                    status,
                    &i.name,
                    &format!("{:e}", i.max),
                    &format!("{:e}", i.mean),
                    &i.count.to_string(),
                    &i.failures.to_string(),
                    &i.gating.to_string(),
                    &format!("{:e}", c.tolerance),
                ])
                .map_err(err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// A copy of a serialized bundle without the fields that legitimately differ
/// between identical runs (`generated_at`, `wall_time_ms`).
pub fn strip_volatile(mut value: serde_json::Value) -> serde_json::Value {
    fn walk(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(map) => {
                map.remove("generated_at");
                map.remove("wall_time_ms");
                map.values_mut().for_each(walk);
            }
            serde_json::Value::Array(items) => items.iter_mut().for_each(walk),
            _ => {}
        }
    }
    walk(&mut value);
    value
}

/// Largest magnitude of `f` over `samples`, a convenience for scenario tests.
pub fn max_magnitude(field: &VectorField, samples: &SampleSet) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in samples.points() {
        worst = worst.max(magnitude(&field.at(p)?));
    }
    Ok(worst)
}
