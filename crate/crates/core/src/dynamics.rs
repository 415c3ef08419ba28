//! Runge–Kutta integration of vector fields, numerical flow maps and
//! trajectory monitors.
//!
//! The steppers are generic over the AD tower, so a flow map evaluated at
//! dual numbers carries its Jacobian (and higher derivatives) along: the
//! variational equations are integrated by the same scheme as the state.
//! Step-size decisions only look at primal values, which keeps the step
//! sequence identical at every tower level.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::geometry::field::eval;
use crate::geometry::{Chart, ChartMap, Field, FieldRef, Node, ScalarField, Tower, VectorField};
use crate::lcs::HamiltonianSystem;

pub const DEFAULT_ABS_TOL: f64 = 1e-10;
pub const DEFAULT_REL_TOL: f64 = 1e-9;
/// Residuals at or below this are treated as rounding noise by [`convergence_order`].
pub const NOISE_FLOOR: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    /// Classical fourth-order Runge–Kutta with a fixed step.
    Rk4 { step: f64 },
    /// Runge–Kutta–Fehlberg 4(5), propagating the fifth-order solution.
    Rkf45 { abs_tol: f64, rel_tol: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub max_steps: usize,
    /// Distance kept from exclusion sets; the chart's own margin when `None`.
    pub margin: Option<f64>,
    pub min_step: f64,
    /// First trial step of the adaptive method.
    pub initial_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig::rkf45(DEFAULT_ABS_TOL, DEFAULT_REL_TOL)
    }
}

impl IntegratorConfig {
    pub fn rk4(step: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk4 { step },
            max_steps: 1_000_000,
            margin: None,
            min_step: 1e-12,
            initial_step: step,
        }
    }

    pub fn rkf45(abs_tol: f64, rel_tol: f64) -> Self {
        IntegratorConfig {
            method: Method::Rkf45 { abs_tol, rel_tol },
            max_steps: 1_000_000,
            margin: None,
            min_step: 1e-12,
            initial_step: 1e-2,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = Some(margin);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.method {
            Method::Rk4 { step } => step > 0.0 && step.is_finite(),
            Method::Rkf45 { abs_tol, rel_tol } => abs_tol > 0.0 && rel_tol > 0.0 && self.initial_step > 0.0,
        };
        if !ok || self.min_step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || self.max_steps == 0 {
            return Err(Error::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    Inadmissible,
    StepFailure,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    chart: Arc<Chart>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectories hold the initial state")
    }

    /// Writes `t, coordinates…, monitors…` with one row per saved state.
    pub fn write_csv<W: std::io::Write>(&self, out: W, monitors: &[MonitorSeries]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.chart.names().iter().cloned());
        for m in monitors {
            header.extend([
                m.name.clone(),
                format!("{}_conservation", m.name),
                format!("{}_dissipation", m.name),
            ]);
            if m.ratio.is_some() {
                header.push(format!("{}_ratio", m.name));
            }
        }
        w.write_record(&header).map_err(csv_error)?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![format!("{t:e}")];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            for m in monitors {
                row.extend(
                    [m.values[k], m.conservation[k], m.dissipation[k]]
                        .iter()
                        .map(|v| format!("{v:e}")),
                );
                if let Some(r) = &m.ratio {
                    row.push(r[k].map(|v| format!("{v:e}")).unwrap_or_default());
                }
            }
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self, monitors: &[MonitorSeries]) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, monitors).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn axpy<S: Scalar>(x: &[S], terms: &[(f64, &[S])], h: f64) -> Vec<S> {
    let mut out = x.to_vec();
    for (c, k) in terms {
        if *c == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(k.iter()) {
            *o += v.scale(c * h);
        }
    }
    out
}

fn rk4_step<S: Tower>(f: &dyn Field, x: &[S], h: f64) -> Result<Vec<S>> {
    let k1 = eval(f, x)?;
    let k2 = eval(f, &axpy(x, &[(0.5, &k1)], h))?;
    let k3 = eval(f, &axpy(x, &[(0.5, &k2)], h))?;
    let k4 = eval(f, &axpy(x, &[(1.0, &k3)], h))?;
    Ok(axpy(
        x,
        &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
        h,
    ))
}

const FEHLBERG_A: [[f64; 5]; 6] = [
    [0.0; 5],
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const FEHLBERG_B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const FEHLBERG_B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0];

/// One Fehlberg step: the fifth-order solution and the primal error estimate
/// per component.
fn rkf45_step<S: Tower>(f: &dyn Field, x: &[S], h: f64) -> Result<(Vec<S>, Vec<f64>)> {
    let mut k: Vec<Vec<S>> = Vec::with_capacity(6);
    for a in FEHLBERG_A.iter() {
        let terms: Vec<(f64, &[S])> = k.iter().enumerate().map(|(j, kj)| (a[j], kj.as_slice())).collect();
        k.push(eval(f, &axpy(x, &terms, h))?);
    }
    let terms: Vec<(f64, &[S])> = k
        .iter()
        .enumerate()
        .map(|(j, kj)| (FEHLBERG_B5[j], kj.as_slice()))
        .collect();
    let y = axpy(x, &terms, h);
    let err = (0..x.len())
        .map(|i| {
            let e: f64 = (0..6)
                .map(|j| (FEHLBERG_B5[j] - FEHLBERG_B4[j]) * k[j][i].primal())
                .sum();
            (e * h).abs()
        })
        .collect();
    Ok((y, err))
}

fn primal<S: Scalar>(x: &[S]) -> Vec<f64> {
    x.iter().map(Scalar::primal).collect()
}

struct Outcome<S> {
    state: Vec<S>,
    time: f64,
    termination: Termination,
}

/// Advances `x0` from `t0` to `t1` (either direction), calling `record` after
/// every accepted step.
fn advance<S: Tower>(
    field: &dyn Field,
    chart: &Chart,
    cfg: &IntegratorConfig,
    x0: Vec<S>,
    (t0, t1): (f64, f64),
    mut record: impl FnMut(f64, &[S]),
) -> Result<Outcome<S>> {
    cfg.validate()?;
    let margin = cfg.margin.unwrap_or(chart.margin());
    let admissible = |y: &[S]| {
        let p = primal(y);
        p.iter().all(|v| v.is_finite()) && chart.admissible_with(&p, margin)
    };
    if !admissible(&x0) {
        return Err(Error::InadmissibleStart(primal(&x0)));
    }
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut x = x0;
    let mut done = 0.0f64;
    let mut h = match cfg.method {
        Method::Rk4 { step } => step,
        Method::Rkf45 { .. } => cfg.initial_step,
    };
    let mut steps = 0;
    let finish = |x: Vec<S>, done: f64, termination| Outcome {
        state: x,
        time: t0 + dir * done,
        termination,
    };
    while done < span {
        if steps >= cfg.max_steps {
            return Ok(finish(x, done, Termination::StepFailure));
        }
        let remaining = span - done;
        // Absorb a last sliver into the final step instead of taking a tiny one.
        let last = h >= remaining * (1.0 - 1e-12);
        let trial = if last { remaining } else { h };
        if trial < cfg.min_step && !last {
            return Ok(finish(x, done, Termination::StepFailure));
        }
        let attempt = match cfg.method {
            Method::Rk4 { .. } => rk4_step(field, &x, dir * trial).map(|y| (y, None)),
            Method::Rkf45 { abs_tol, rel_tol } => rkf45_step(field, &x, dir * trial).map(|(y, err)| {
                let norm = err
                    .iter()
                    .zip(&x)
                    .zip(&y)
                    .map(|((e, a), b)| e / (abs_tol + rel_tol * a.primal().abs().max(b.primal().abs())))
                    .fold(0.0, f64::max);
                (y, Some(norm))
            }),
        };
        match attempt {
            Ok((y, norm)) if admissible(&y) && !chart.separated(&primal(&x), &primal(&y)) => {
                if let Some(n) = norm.filter(|n| n.is_nan() || *n > 1.0) {
                    let factor = if n.is_finite() {
                        (0.9 * n.powf(-0.2)).clamp(0.1, 0.9)
                    } else {
                        0.25
                    };
                    h = trial * factor;
                    if h < cfg.min_step {
                        return Ok(finish(x, done, Termination::StepFailure));
                    }
                    continue;
                }
                x = y;
                done = if last { span } else { done + trial };
                steps += 1;
                record(t0 + dir * done, &x);
                if let Some(n) = norm {
                    let grow = if n > 0.0 {
                        (0.9 * n.powf(-0.2)).clamp(0.2, 5.0)
                    } else {
                        5.0
                    };
                    h = trial * grow;
                } else if last {
                    h = trial;
                }
            }
            // Left the admissible region or hit a singular evaluation: bisect.
            Ok(_) | Err(Error::SingularMatrix { .. }) | Err(Error::Domain(_)) | Err(Error::Evaluation(_)) => {
                h = trial / 2.0;
                if h < cfg.min_step {
                    return Ok(finish(x, done, Termination::Inadmissible));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(finish(x, done, Termination::Horizon))
}

/// Integrates the autonomous field `field` from `x0` over `span`.
pub fn integrate(field: &VectorField, x0: &[f64], span: (f64, f64), cfg: &IntegratorConfig) -> Result<Trajectory> {
    let chart = field.chart().clone();
    if x0.len() != chart.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial point has {} coordinates, chart has {}",
            x0.len(),
            chart.dim()
        )));
    }
    let mut times = vec![span.0];
    let mut states = vec![x0.to_vec()];
    let out = advance(&**field.node(), &chart, cfg, x0.to_vec(), span, |t, x: &[f64]| {
        times.push(t);
        states.push(x.to_vec());
    })?;
    Ok(Trajectory {
        chart,
        times,
        states,
        termination: out.termination,
    })
}

/// Integrates `X_H`, or its autonomization on `ℝ × M` when `H` depends on
/// time; `x0` is a point of the base chart and `t` starts at `span.0`.
pub fn integrate_system(
    system: &HamiltonianSystem,
    x0: &[f64],
    span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let field = system.dynamics()?;
    let mut start = x0.to_vec();
    if system.is_time_dependent() && x0.len() + 1 == field.chart().dim() {
        start.push(span.0);
    }
    integrate(&field, &start, span, cfg)
}

/// Time-`s` map of an autonomous field.
#[derive(Debug)]
struct FlowNode {
    field: FieldRef,
    chart: Arc<Chart>,
    s: f64,
    cfg: IntegratorConfig,
}

impl Node for FlowNode {
    fn arity(&self) -> usize {
        self.chart.dim()
    }
    fn len(&self) -> usize {
        self.chart.dim()
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let out = advance(
            &*self.field,
            &self.chart,
            &self.cfg,
            x.to_vec(),
            (0.0, self.s),
            |_, _| {},
        )?;
        match out.termination {
            Termination::Horizon => Ok(out.state),
            Termination::Inadmissible => Err(Error::TargetInadmissible(primal(&out.state))),
            Termination::StepFailure => Err(Error::StepFailure {
                t: out.time,
                step: self.cfg.min_step,
            }),
        }
    }
}

/// The numerical flow `Ψ_s` of `field` as a chart map. Its derivatives come
/// from differentiating through the integrator.
pub fn flow_map(field: &VectorField, s: f64, cfg: &IntegratorConfig) -> Result<ChartMap> {
    cfg.validate()?;
    let chart = field.chart().clone();
    let node = Arc::new(FlowNode {
        field: field.node().clone(),
        chart: chart.clone(),
        s,
        cfg: *cfg,
    });
    ChartMap::from_node(&chart, &chart, node)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorSeries {
    pub name: String,
    pub values: Vec<f64>,
    /// `|X_H(f) + ∂f/∂t|`.
    pub conservation: Vec<f64>,
    /// `|X_H(f) − fθ(X_H) + ∂f/∂t|`.
    pub dissipation: Vec<f64>,
    /// `f/H` where `|H|` exceeds the threshold.
    pub ratio: Option<Vec<Option<f64>>>,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

impl MonitorSeries {
    pub fn max_conservation(&self) -> f64 {
        max_of(&self.conservation)
    }

    pub fn max_dissipation(&self) -> f64 {
        max_of(&self.dissipation)
    }

    /// Largest `|f/H − (f/H)(first)|` over the states where the ratio is defined.
    pub fn ratio_drift(&self) -> Option<f64> {
        let r: Vec<f64> = self.ratio.as_ref()?.iter().flatten().copied().collect();
        let first = *r.first()?;
        Some(r.iter().map(|v| (v - first).abs()).fold(0.0, f64::max))
    }

    /// Largest `|f − f(first)|`.
    pub fn value_drift(&self) -> f64 {
        let first = self.values.first().copied().unwrap_or(0.0);
        self.values.iter().map(|v| (v - first).abs()).fold(0.0, f64::max)
    }
}

/// Default `|H|` threshold below which `f/H` is not reported.
pub const RATIO_THRESHOLD: f64 = 0.1;

/// Evaluates each quantity and its conservation and dissipation residuals at
/// every saved state of `trajectory`.
pub fn monitor(
    trajectory: &Trajectory,
    quantities: &[(&str, &ScalarField)],
    system: &HamiltonianSystem,
    ratio_threshold: Option<f64>,
) -> Result<Vec<MonitorSeries>> {
    let xh = system.field()?;
    let theta_xh = xh.contract(system.theta())?.to_scalar();
    let h = system.hamiltonian();
    quantities
        .iter()
        .map(|(name, f)| {
            let f = system.lift_scalar(f)?;
            let xf = xh.apply(&f)?;
            let ft = system.time_derivative(&f)?;
            let mut series = MonitorSeries {
                name: name.to_string(),
                values: Vec::new(),
                conservation: Vec::new(),
                dissipation: Vec::new(),
                ratio: ratio_threshold.map(|_| Vec::new()),
            };
            for x in &trajectory.states {
                let v = f.at(x)?;
                let rate = xf.at(x)? + ft.at(x)?;
                series.values.push(v);
                series.conservation.push(rate.abs());
                series.dissipation.push((rate - v * theta_xh.at(x)?).abs());
                if let (Some(r), Some(th)) = (series.ratio.as_mut(), ratio_threshold) {
                    let hv = h.at(x)?;
                    r.push((hv.abs() > th).then(|| v / hv));
                }
            }
            Ok(series)
        })
        .collect()
}

/// `|Y|` (componentwise residual magnitude) of a vector field along a trajectory.
pub fn monitor_field(trajectory: &Trajectory, field: &VectorField) -> Result<Vec<f64>> {
    trajectory
        .states
        .iter()
        .map(|x| Ok(crate::geometry::magnitude(&field.at(x)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderEstimate {
    pub order: f64,
    pub steps: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Richardson estimate of the order of a step-dependent residual from the
/// steps `h0`, `h0/2`, `h0/4`: the least-squares slope of `log r` against
/// `log h`.
pub fn convergence_order(h0: f64, residual: impl Fn(f64) -> Result<f64>) -> Result<OrderEstimate> {
    convergence_order_with(h0, NOISE_FLOOR, residual)
}

pub fn convergence_order_with(h0: f64, floor: f64, residual: impl Fn(f64) -> Result<f64>) -> Result<OrderEstimate> {
    let steps = vec![h0, h0 / 2.0, h0 / 4.0];
    let residuals = steps.iter().map(|&h| residual(h)).collect::<Result<Vec<_>>>()?;
    let clean = residuals.iter().all(|r| r.is_finite() && *r > floor) && residuals.windows(2).all(|w| w[1] < w[0]);
    if !clean {
        return Err(Error::NoiseFloor(residuals));
    }
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(OrderEstimate {
        order: sxy / sxx,
        steps,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> VectorField {
        let c = Arc::new(Chart::new(&["a", "b"]).unwrap());
        VectorField::parse(&c, &["-b", "a"]).unwrap()
    }

    #[test]
    fn rk4_rotation_error_is_fourth_order() {
        let x = circle();
        let est = convergence_order(0.2, |h| {
            let tr = integrate(&x, &[1.0, 0.0], (0.0, 1.0), &IntegratorConfig::rk4(h))?;
            let end = tr.last();
            Ok(((end[0] - 1f64.cos()).powi(2) + (end[1] - 1f64.sin()).powi(2)).sqrt())
        })
        .unwrap();
        assert!((est.order - 4.0).abs() < 0.2, "{est:?}");
    }

    #[test]
    fn adaptive_rotation_meets_tolerance() {
        let tr = integrate(&circle(), &[1.0, 0.0], (0.0, 6.0), &IntegratorConfig::default()).unwrap();
        assert_eq!(tr.termination, Termination::Horizon);
        let end = tr.last();
        assert!((end[0] - 6f64.cos()).abs() < 1e-8 && (end[1] - 6f64.sin()).abs() < 1e-8);
        assert_eq!(*tr.times.last().unwrap(), 6.0);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn backward_integration_runs_time_downward() {
        let tr = integrate(&circle(), &[1.0, 0.0], (0.0, -1.0), &IntegratorConfig::rk4(0.01)).unwrap();
        assert!(tr.times.windows(2).all(|w| w[1] < w[0]));
        assert!((tr.last()[1] + 1f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(IntegratorConfig::rk4(0.0).validate().is_err());
        assert!(IntegratorConfig::rkf45(-1.0, 1e-9).validate().is_err());
    }

    #[test]
    fn noise_floor_is_reported() {
        assert!(matches!(convergence_order(0.1, |_| Ok(0.0)), Err(Error::NoiseFloor(_))));
        assert!(matches!(
            convergence_order(0.1, |_| Ok(1e-3)),
            Err(Error::NoiseFloor(_))
        ));
    }
}
