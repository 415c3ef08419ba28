//! Residual statistics and verdicts for identities certified on sample sets.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::SampleSet;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MIN_SAMPLES: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub tolerance: f64,
    pub min_samples: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            tolerance: DEFAULT_TOLERANCE,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

impl CheckConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        CheckConfig {
            tolerance,
            ..Default::default()
        }
    }

    pub fn min_samples(mut self, n: usize) -> Self {
        self.min_samples = n;
        self
    }
}

/// Residual statistics of one identity over a sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityStats {
    pub name: String,
    pub max: f64,
    pub mean: f64,
    /// Points where the identity was evaluated.
    pub count: usize,
    /// Points where evaluation failed (singular Ω, domain errors, ...).
    pub failures: usize,
    /// Diagnostic identities are reported but do not affect the verdict.
    pub gating: bool,
}

impl IdentityStats {
    pub fn passes(&self, tolerance: f64) -> bool {
        !self.gating || (self.failures == 0 && self.max <= tolerance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub identities: Vec<IdentityStats>,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub samples: usize,
    pub parameters: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn identity(&self, name: &str) -> Option<&IdentityStats> {
        self.identities.iter().find(|i| i.name == name)
    }

    /// Largest residual among the gating identities.
    pub fn max_residual(&self) -> f64 {
        self.identities
            .iter()
            .filter(|i| i.gating)
            .map(|i| i.max)
            .fold(0.0, f64::max)
    }

    pub fn parameter(&self, name: &str) -> Option<f64> {
        self.parameters.get(name).copied()
    }

    /// Re-derives the verdict from the identities, tolerance and sample count.
    pub fn finish(mut self, min_samples: usize) -> CheckReport {
        self.verdict = if self.samples < min_samples {
            Verdict::Indeterminate
        } else if self.identities.iter().all(|i| i.passes(self.tolerance)) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        self
    }

    /// A failed report for a check that could not be set up.
    pub fn failed(check: &str, tolerance: f64, note: String) -> CheckReport {
        CheckReport {
            check: check.to_string(),
            identities: Vec::new(),
            tolerance,
            verdict: Verdict::Fail,
            samples: 0,
            parameters: BTreeMap::new(),
            notes: vec![note],
        }
    }
}

type PointFn<'a> = Box<dyn Fn(&[f64]) -> Result<f64> + Send + Sync + 'a>;

/// A pointwise residual to certify.
pub struct Identity<'a> {
    pub name: String,
    pub gating: bool,
    pub eval: PointFn<'a>,
}

impl<'a> Identity<'a> {
    pub fn new(name: &str, eval: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'a) -> Self {
        Identity {
            name: name.to_string(),
            gating: true,
            eval: Box::new(eval),
        }
    }

    pub fn diagnostic(name: &str, eval: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'a) -> Self {
        Identity {
            gating: false,
            ..Identity::new(name, eval)
        }
    }
}

/// Evaluates `f` at every sample point, in parallel, keeping sample order.
pub fn sample_values<T: Send>(samples: &SampleSet, f: impl Fn(&[f64]) -> Result<T> + Send + Sync) -> Vec<Result<T>> {
    samples.points().par_iter().map(|p| f(p)).collect()
}

/// Evaluates every identity at every sample and assembles the report.
pub fn certify(check: &str, samples: &SampleSet, cfg: &CheckConfig, identities: Vec<Identity<'_>>) -> CheckReport {
    let mut notes = Vec::new();
    let stats = identities
        .iter()
        .map(|id| {
            let values = sample_values(samples, |p| (id.eval)(p));
            let mut max: f64 = 0.0;
            let mut sum = 0.0;
            let mut count = 0;
            let mut failures = 0;
            let mut first_error = None;
            for (p, v) in samples.points().iter().zip(values) {
                match v {
                    Ok(r) if r.is_finite() => {
                        max = max.max(r);
                        sum += r;
                        count += 1;
                    }
                    Ok(r) => {
                        failures += 1;
                        first_error.get_or_insert_with(|| format!("non-finite residual {r} at {p:?}"));
                    }
                    Err(e) => {
                        failures += 1;
                        first_error.get_or_insert_with(|| format!("{e} at {p:?}"));
                    }
                }
            }
            if let Some(e) = first_error {
                notes.push(format!("{}: {failures} evaluation failure(s), first: {e}", id.name));
            }
            IdentityStats {
                name: id.name.clone(),
                max,
                mean: if count > 0 { sum / count as f64 } else { 0.0 },
                count,
                failures,
                gating: id.gating,
            }
        })
        .collect();
    CheckReport {
        check: check.to_string(),
        identities: stats,
        tolerance: cfg.tolerance,
        verdict: Verdict::Indeterminate,
        samples: samples.len(),
        parameters: BTreeMap::new(),
        notes,
    }
    .finish(cfg.min_samples)
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median absolute deviation from the median.
pub fn dispersion(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().filter(|x| x.is_finite()).map(|x| (x - m).abs()).collect();
    median(&dev)
}
