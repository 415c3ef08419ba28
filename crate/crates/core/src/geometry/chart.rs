use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Env, Expression, TIME};

pub const DEFAULT_MARGIN: f64 = 1e-3;
pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 42;

/// A single coordinate patch: ordered coordinate names, an open domain box
/// and zero sets removed from it.
#[derive(Clone, Debug)]
pub struct Chart {
    names: Vec<String>,
    domain: Vec<(f64, f64)>,
    exclusions: Vec<Expression>,
    margin: f64,
    time: Option<usize>,
}

impl PartialEq for Chart {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.time == other.time
    }
}

impl Chart {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Chart> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        if names.len() < 2 {
            return Err(Error::Chart("a chart needs at least two coordinates".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Chart(format!("duplicate coordinate `{n}`")));
            }
            if n == TIME {
                return Err(Error::Chart("`t` is reserved for time".into()));
            }
            if !n.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
                || !n.chars().all(|c| c.is_alphanumeric() || c == '_')
            {
                return Err(Error::Chart(format!("`{n}` is not a valid identifier")));
            }
        }
        Ok(Chart {
            domain: vec![(f64::NEG_INFINITY, f64::INFINITY); names.len()],
            names,
            exclusions: Vec::new(),
            margin: DEFAULT_MARGIN,
            time: None,
        })
    }

    /// Restricts coordinate `name` to the open interval `(lo, hi)`.
    pub fn with_bounds(mut self, name: &str, lo: f64, hi: f64) -> Result<Chart> {
        let i = self.index(name)?;
        if lo >= hi || lo.is_nan() || hi.is_nan() {
            return Err(Error::Chart(format!("empty interval for `{name}`")));
        }
        self.domain[i] = (lo, hi);
        Ok(self)
    }

    /// Removes the zero set of `expr`, up to the chart margin.
    pub fn with_exclusion(mut self, expr: &str) -> Result<Chart> {
        let e = Expression::parse(expr, &self.names)?;
        self.exclusions.push(e);
        Ok(self)
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Chart> {
        if margin.is_nan() || margin < 0.0 {
            return Err(Error::Chart("margin must be non-negative".into()));
        }
        self.margin = margin;
        Ok(self)
    }

    /// `ℝ × chart` with `t` appended as the last coordinate.
    pub fn extended(&self) -> Chart {
        if self.time.is_some() {
            return self.clone();
        }
        let mut c = self.clone();
        c.names.push(TIME.to_string());
        c.domain.push((f64::NEG_INFINITY, f64::INFINITY));
        c.time = Some(self.names.len());
        c
    }

    /// Base chart of an extended chart (identity on base charts).
    pub fn base(&self) -> Chart {
        match self.time {
            None => self.clone(),
            Some(i) => {
                let mut c = self.clone();
                c.names.remove(i);
                c.domain.remove(i);
                c.time = None;
                c
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Dimension without the time coordinate.
    pub fn base_dim(&self) -> usize {
        self.names.len() - usize::from(self.time.is_some())
    }

    pub fn time(&self) -> Option<usize> {
        self.time
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn exclusions(&self) -> &[Expression] {
        &self.exclusions
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownIdentifier(name.to_string()))
    }

    pub fn parse(&self, text: &str) -> Result<Expression> {
        Expression::parse(text, &self.names)
    }

    /// Inside the open domain and at least `margin` away from every excluded
    /// zero set.
    pub fn admissible_with(&self, x: &[f64], margin: f64) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        if x.iter().zip(&self.domain).any(|(&v, &(lo, hi))| v <= lo || v >= hi) {
            return false;
        }
        let env = Env {
            coords: x,
            time: self.time.map(|i| x[i]),
        };
        self.exclusions
            .iter()
            .all(|g| matches!(g.eval(&env), Ok(v) if v.abs() >= margin))
    }

    pub fn admissible(&self, x: &[f64]) -> bool {
        self.admissible_with(x, self.margin)
    }

    /// Whether some exclusion function changes sign between `x` and `y`, i.e.
    /// a straight move from `x` to `y` would jump over an excluded set.
    pub fn separated(&self, x: &[f64], y: &[f64]) -> bool {
        let value = |p: &[f64], g: &Expression| {
            g.eval(&Env {
                coords: p,
                time: self.time.map(|i| p[i]),
            })
        };
        self.exclusions.iter().any(|g| match (value(x, g), value(y, g)) {
            (Ok(a), Ok(b)) => a.signum() != b.signum(),
            _ => true,
        })
    }
}

/// How to draw sample points for a certification run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub count: usize,
    pub seed: u64,
    pub margin: Option<f64>,
    /// Sampling box; defaults to the chart domain, which must then be finite.
    pub region: Option<Vec<(f64, f64)>>,
    /// Explicit points, used in addition to the quasi-random ones.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            count: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            margin: None,
            region: None,
            points: Vec::new(),
        }
    }
}

impl SampleSpec {
    pub fn halton(count: usize, seed: u64, region: Vec<(f64, f64)>) -> Self {
        SampleSpec {
            count,
            seed,
            margin: None,
            region: Some(region),
            points: Vec::new(),
        }
    }

    pub fn explicit(points: Vec<Vec<f64>>) -> Self {
        SampleSpec {
            count: 0,
            seed: DEFAULT_SEED,
            margin: None,
            region: None,
            points,
        }
    }
}

/// Admissible sample points of a chart.
#[derive(Clone, Debug)]
pub struct SampleSet {
    chart: Arc<Chart>,
    points: Vec<Vec<f64>>,
    spec: SampleSpec,
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut inv, mut f) = (0.0, 1.0 / base as f64);
    while i > 0 {
        inv += f * (i % base) as f64;
        i /= base;
        f /= base as f64;
    }
    inv
}

impl SampleSet {
    pub fn new(chart: &Arc<Chart>, spec: &SampleSpec) -> Result<SampleSet> {
        let margin = spec.margin.unwrap_or(chart.margin());
        let mut points = Vec::with_capacity(spec.points.len() + spec.count);
        for p in &spec.points {
            if !chart.admissible_with(p, margin) {
                return Err(Error::InadmissiblePoint(p.clone()));
            }
            points.push(p.clone());
        }
        if spec.count > 0 {
            let m = chart.dim();
            if m > PRIMES.len() {
                return Err(Error::Chart(format!(
                    "Halton sampling supports at most {} coordinates",
                    PRIMES.len()
                )));
            }
            let region = spec.region.clone().unwrap_or_else(|| chart.domain().to_vec());
            if region.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "sample region has {} intervals for a {m}-dimensional chart",
                    region.len()
                )));
            }
            if region
                .iter()
                .any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo > hi)
            {
                return Err(Error::Chart("sampling needs a finite region".into()));
            }
            let mut index = spec.seed + 1;
            let limit = index + 100 * spec.count as u64;
            let mut accepted = 0;
            while accepted < spec.count && index < limit {
                let p: Vec<f64> = region
                    .iter()
                    .zip(PRIMES)
                    .map(|(&(lo, hi), b)| lo + (hi - lo) * radical_inverse(index, b))
                    .collect();
                index += 1;
                if chart.admissible_with(&p, margin) {
                    points.push(p);
                    accepted += 1;
                }
            }
        }
        Ok(SampleSet {
            chart: chart.clone(),
            points,
            spec: spec.clone(),
        })
    }

    pub fn from_points(chart: &Arc<Chart>, points: Vec<Vec<f64>>) -> Result<SampleSet> {
        SampleSet::new(chart, &SampleSpec::explicit(points))
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spec(&self) -> &SampleSpec {
        &self.spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sec4() -> Arc<Chart> {
        Arc::new(
            Chart::new(&["q1", "q2", "p1", "p2"])
                .unwrap()
                .with_bounds("p1", 0.0, f64::INFINITY)
                .unwrap()
                .with_exclusion("q1")
                .unwrap()
                .with_exclusion("q2")
                .unwrap(),
        )
    }

    #[test]
    fn chart_validation() {
        assert!(Chart::new(&["x"]).is_err());
        assert!(Chart::new(&["x", "x"]).is_err());
        assert!(Chart::new(&["x", "t"]).is_err());
        assert!(Chart::new(&["x", "2y"]).is_err());
    }

    #[test]
    fn admissibility() {
        let c = sec4();
        assert!(c.admissible(&[1.0, 1.0, 2.0, 1.0]));
        assert!(!c.admissible(&[1.0, 1.0, -2.0, 1.0]));
        assert!(!c.admissible(&[1.0, 1e-4, 2.0, 1.0]));
    }

    #[test]
    fn halton_is_deterministic_and_admissible() {
        let c = sec4();
        let spec = SampleSpec::halton(200, 42, vec![(-2.0, 2.0), (-2.0, 2.0), (0.1, 2.0), (-2.0, 2.0)]);
        let a = SampleSet::new(&c, &spec).unwrap();
        let b = SampleSet::new(&c, &spec).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.points(), b.points());
        assert!(a.points().iter().all(|p| c.admissible(p)));
        let other = SampleSet::new(&c, &SampleSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(other.points()[0], a.points()[0]);
    }

    #[test]
    fn infinite_domain_needs_region() {
        assert!(SampleSet::new(&sec4(), &SampleSpec::default()).is_err());
    }

    #[test]
    fn explicit_points_are_checked() {
        assert!(matches!(
            SampleSet::from_points(&sec4(), vec![vec![0.0, 1.0, 1.0, 1.0]]),
            Err(Error::InadmissiblePoint(_))
        ));
    }

    #[test]
    fn extended_chart_appends_time() {
        let c = sec4().extended();
        assert_eq!(c.names().last().unwrap(), "t");
        assert_eq!(c.time(), Some(4));
        assert_eq!(c.base_dim(), 4);
        assert!(c.admissible(&[1.0, 1.0, 2.0, 1.0, -3.0]));
        assert_eq!(c.base(), *sec4());
    }
}
