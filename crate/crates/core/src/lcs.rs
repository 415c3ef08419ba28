//! Locally conformal symplectic structures and Hamiltonian dynamics on them.
//!
//! Sign convention: the Hamiltonian vector field of `f` is defined by
//! `X_f⌟Ω = d^θ f = df − fθ`. On `T*Q` with `Ω = dp∧dq` this gives
//! `q̇ = −∂H/∂p`, `ṗ = ∂H/∂q`, the opposite of the common textbook sign.

use std::sync::Arc;

use crate::ad::{solve_linear_with, Matrix, Scalar, DEFAULT_PIVOT_THRESHOLD};
use crate::error::{Error, Result};
use crate::geometry::field::{eval, jet, Constant, FieldRef, Linear, Node, Reindex, Scatter, Tower};
use crate::geometry::multi_index::{avoiding, binomial, combinations, rank};
use crate::geometry::{magnitude, residual, Chart, KForm, SampleSet, ScalarField, VectorField};
use crate::report::{certify, sample_values, CheckConfig, CheckReport, Identity};

/// `Ω` as the antisymmetric matrix `A[i][j] = Ω(∂_i, ∂_j)` from its
/// increasing-index coefficients on an `n`-dimensional chart.
pub fn two_form_matrix<S: Scalar>(coeffs: &[S], n: usize) -> Matrix<S> {
    let mut a = Matrix::zeros(n, n);
    for (idx, &c) in combinations(n, 2).iter().zip(coeffs) {
        a[(idx[0], idx[1])] = c;
        a[(idx[1], idx[0])] = -c;
    }
    a
}

/// Solves `v⌟Ω = α`, i.e. `Aᵀ v = α`.
fn sharp_values<S: Scalar>(omega: &[S], alpha: &[S], n: usize) -> Result<(Vec<S>, f64)> {
    let a = two_form_matrix(omega, n).transpose();
    let sol = solve_linear_with(&a, alpha, DEFAULT_PIVOT_THRESHOLD)?;
    Ok((sol.x, sol.min_pivot))
}

/// `Ω♯(α)` pointwise. `omega` lives on the base chart; `alpha` is a 1-form on
/// a chart whose coordinates at `base` are the base coordinates. Components
/// off the base (time) are left zero.
#[derive(Debug)]
struct Sharp {
    omega: FieldRef,
    alpha: FieldRef,
    base: Vec<usize>,
}

impl Node for Sharp {
    fn arity(&self) -> usize {
        self.alpha.arity()
    }
    fn len(&self) -> usize {
        self.alpha.arity()
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let y: Vec<S> = self.base.iter().map(|&i| x[i]).collect();
        let omega = eval(&*self.omega, &y)?;
        let alpha = eval(&*self.alpha, x)?;
        let a: Vec<S> = self.base.iter().map(|&i| alpha[i]).collect();
        let (v, _) = sharp_values(&omega, &a, self.base.len())?;
        let mut out = vec![S::zero(); x.len()];
        for (&i, vi) in self.base.iter().zip(v) {
            out[i] = vi;
        }
        Ok(out)
    }
}

/// A nondegenerate 2-form `Ω` and closed 1-form `θ` with `dΩ = θ∧Ω`; the
/// conditions are certified by [`LcsStructure::validate`], not assumed.
#[derive(Clone, Debug)]
pub struct LcsStructure {
    chart: Arc<Chart>,
    omega: KForm,
    theta: KForm,
}

impl LcsStructure {
    pub fn new(omega: KForm, theta: KForm) -> Result<LcsStructure> {
        let chart = omega.chart().clone();
        if **theta.chart() != *chart {
            return Err(Error::DimensionMismatch("Ω and θ live on different charts".into()));
        }
        if omega.degree() != 2 || theta.degree() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected a 2-form and a 1-form, got degrees {} and {}",
                omega.degree(),
                theta.degree()
            )));
        }
        if chart.time().is_some() {
            return Err(Error::Chart("an LCS structure lives on a chart without time".into()));
        }
        if !chart.dim().is_multiple_of(2) {
            return Err(Error::ChartShapeMismatch(format!(
                "an LCS chart has even dimension, got {}",
                chart.dim()
            )));
        }
        Ok(LcsStructure { chart, omega, theta })
    }

    /// Structure from coefficient tables: `omega` entries are `(a, b, coeff)`
    /// for `coeff·da∧db`, `theta` entries `(a, coeff)` for `coeff·da`.
    pub fn parse(chart: &Arc<Chart>, omega: &[(&str, &str, &str)], theta: &[(&str, &str)]) -> Result<LcsStructure> {
        let o: Vec<([&str; 2], &str)> = omega.iter().map(|(a, b, c)| ([*a, *b], *c)).collect();
        let o: Vec<(&[&str], &str)> = o.iter().map(|(n, c)| (&n[..], *c)).collect();
        let t: Vec<([&str; 1], &str)> = theta.iter().map(|(a, c)| ([*a], *c)).collect();
        let t: Vec<(&[&str], &str)> = t.iter().map(|(n, c)| (&n[..], *c)).collect();
        LcsStructure::new(KForm::parse(chart, 2, &o)?, KForm::parse(chart, 1, &t)?)
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn omega(&self) -> &KForm {
        &self.omega
    }

    pub fn theta(&self) -> &KForm {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn omega_matrix<S: Tower>(&self, x: &[S]) -> Result<Matrix<S>> {
        Ok(two_form_matrix(&self.omega.eval(x)?, self.dim()))
    }

    /// The unique `v` with `Ω_x(v, ·) = α`.
    pub fn sharp_at(&self, x: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
        Ok(sharp_values(&self.omega.at(x)?, alpha, self.dim())?.0)
    }

    /// `v⌟Ω` at `x`.
    pub fn flat_at(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let a = self.omega_matrix(x)?;
        Ok((0..self.dim())
            .map(|k| (0..self.dim()).map(|i| v[i] * a[(i, k)]).sum())
            .collect())
    }

    /// Smallest relative pivot of the solve against `Ω` at `x`.
    pub fn min_pivot(&self, x: &[f64]) -> Result<f64> {
        Ok(sharp_values(&self.omega.at(x)?, &vec![0.0; self.dim()], self.dim())?.1)
    }

    pub fn sharp(&self, alpha: &KForm) -> Result<VectorField> {
        if alpha.degree() != 1 {
            return Err(Error::DimensionMismatch("♯ takes a 1-form".into()));
        }
        let node = Arc::new(Sharp {
            omega: self.omega.node().clone(),
            alpha: alpha.node().clone(),
            base: (0..self.dim()).collect(),
        });
        VectorField::from_node(&self.chart, node)
    }

    pub fn flat(&self, x: &VectorField) -> Result<KForm> {
        x.contract(&self.omega)
    }

    /// `d^θ f = df − fθ`.
    pub fn twisted_differential(&self, f: &ScalarField) -> Result<KForm> {
        f.d().try_sub(&self.theta.mul(f)?)
    }

    /// `d^θ ω = dω − θ∧ω`.
    pub fn twisted_d(&self, w: &KForm) -> Result<KForm> {
        w.d()?.try_sub(&self.theta.wedge(w)?)
    }

    /// `X_f` with `X_f⌟Ω = d^θ f`.
    pub fn hamiltonian_vector_field(&self, f: &ScalarField) -> Result<VectorField> {
        self.sharp(&self.twisted_differential(f)?)
    }

    /// `{f, g} = Ω(X_f, X_g)`.
    pub fn jacobi_bracket(&self, f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
        let xf = self.hamiltonian_vector_field(f)?;
        let xg = self.hamiltonian_vector_field(g)?;
        Ok(xg.contract(&xf.contract(&self.omega)?)?.to_scalar())
    }

    /// The same bracket as `X_g f − fθ(X_g)`.
    pub fn jacobi_bracket_by_derivation(&self, f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
        let xg = self.hamiltonian_vector_field(g)?;
        let theta_xg = xg.contract(&self.theta)?.to_scalar();
        xg.apply(f)?.try_sub(&f.try_mul(&theta_xg)?)
    }

    /// Certifies nondegeneracy, `dθ = 0` and `dΩ = θ∧Ω` on `samples`.
    pub fn validate(&self, samples: &SampleSet, cfg: &CheckConfig) -> CheckReport {
        let dtheta = self.theta.d();
        // On a surface there are no 3-forms and dΩ = θ∧Ω holds trivially.
        let lcs = if self.chart().dim() < 3 {
            Ok(None)
        } else {
            self.omega
                .d()
                .and_then(|d| Ok(Some((d, self.theta.wedge(&self.omega)?))))
        };
        let (dtheta, lcs) = match (dtheta, lcs) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return CheckReport::failed("validate_lcs", cfg.tolerance, e.to_string()),
        };
        let mut report = certify(
            "validate_lcs",
            samples,
            cfg,
            vec![
                Identity::new("nondegeneracy", |p| self.min_pivot(p).map(|_| 0.0)),
                Identity::new("d_theta", |p| Ok(magnitude(&dtheta.at(p)?))),
                Identity::new("d_omega_minus_theta_wedge_omega", |p| match &lcs {
                    Some((d_omega, theta_omega)) => Ok(residual(&d_omega.at(p)?, &theta_omega.at(p)?)),
                    None => Ok(0.0),
                }),
            ],
        );
        let pivots: Vec<f64> = sample_values(samples, |p| self.min_pivot(p))
            .into_iter()
            .flatten()
            .collect();
        if let Some(min) = pivots.iter().copied().reduce(f64::min) {
            report.parameters.insert("min_pivot".into(), min);
        }
        report
    }

    pub fn extend(&self) -> ExtendedStructure {
        ExtendedStructure::new(self)
    }
}

/// `ℝ × M` with `Ω̂ = pr*Ω` and `θ̂ = pr*θ`; time is the last coordinate.
#[derive(Clone, Debug)]
pub struct ExtendedStructure {
    base: LcsStructure,
    chart: Arc<Chart>,
    omega: KForm,
    theta: KForm,
    time: usize,
}

impl ExtendedStructure {
    fn new(base: &LcsStructure) -> ExtendedStructure {
        let chart = Arc::new(base.chart.extended());
        let time = chart.time().expect("extended chart has time");
        let lift = |w: &KForm| lift_form(&chart, w);
        ExtendedStructure {
            omega: lift(&base.omega),
            theta: lift(&base.theta),
            base: base.clone(),
            chart,
            time,
        }
    }

    pub fn base(&self) -> &LcsStructure {
        &self.base
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn omega(&self) -> &KForm {
        &self.omega
    }

    pub fn theta(&self) -> &KForm {
        &self.theta
    }

    pub fn time_index(&self) -> usize {
        self.time
    }

    /// Positions of the `k`-form components that do not involve `dt`.
    pub fn frozen_components(&self, k: usize) -> Vec<usize> {
        avoiding(self.chart.dim(), k, self.time)
    }

    pub fn lift_scalar(&self, f: &ScalarField) -> Result<ScalarField> {
        Ok(lift_form(&self.chart, &f.as_form()).to_scalar())
    }

    pub fn lift_form(&self, w: &KForm) -> KForm {
        lift_form(&self.chart, w)
    }

    /// A base field seen on `ℝ × M`, with zero `t`-component.
    pub fn lift_field(&self, x: &VectorField) -> Result<VectorField> {
        let n = self.base.dim();
        let node = Arc::new(Scatter {
            inner: Arc::new(Reindex {
                inner: x.node().clone(),
                take: (0..n).collect(),
                arity: n + 1,
            }),
            positions: (0..n).collect(),
            len: n + 1,
        });
        VectorField::from_node(&self.chart, node)
    }

    pub fn parse_scalar(&self, text: &str) -> Result<ScalarField> {
        ScalarField::parse(&self.chart, text)
    }

    /// `∂/∂t`.
    pub fn time_vector(&self) -> VectorField {
        let mut values = vec![0.0; self.chart.dim()];
        values[self.time] = 1.0;
        VectorField::from_node(
            &self.chart,
            Arc::new(Constant {
                values,
                arity: self.chart.dim(),
            }),
        )
        .expect("shape matches")
    }

    /// `d^θ̂ f = df − fθ̂` on `ℝ × M`.
    pub fn twisted_differential(&self, f: &ScalarField) -> Result<KForm> {
        f.d().try_sub(&self.theta.mul(f)?)
    }

    pub fn twisted_d(&self, w: &KForm) -> Result<KForm> {
        w.d()?.try_sub(&self.theta.wedge(w)?)
    }

    /// The extended Hamiltonian field: zero `t`-component and, at each frozen
    /// time, `X⌟Ω = d^θ f_t`. Solves only the base block; `Ω̂` itself is
    /// degenerate.
    pub fn hamiltonian_vector_field(&self, f: &ScalarField) -> Result<VectorField> {
        let alpha = self.twisted_differential(f)?;
        let node = Arc::new(Sharp {
            omega: self.base.omega.node().clone(),
            alpha: alpha.node().clone(),
            base: (0..self.base.dim()).collect(),
        });
        VectorField::from_node(&self.chart, node)
    }

    /// `X̃_f = X_f + ∂/∂t`, whose integral curves project to those of `X_f`.
    pub fn autonomized(&self, f: &ScalarField) -> Result<VectorField> {
        self.hamiltonian_vector_field(f)?.try_add(&self.time_vector())
    }
}

fn lift_form(chart: &Arc<Chart>, w: &KForm) -> KForm {
    let n = w.chart().dim();
    let m = chart.dim();
    let k = w.degree();
    let positions = combinations(n, k).iter().map(|idx| rank(m, idx)).collect();
    let node = Arc::new(Scatter {
        inner: Arc::new(Reindex {
            inner: w.node().clone(),
            take: (0..n).collect(),
            arity: m,
        }),
        positions,
        len: binomial(m, k),
    });
    KForm::from_node(chart, k, node).expect("lifted shape matches")
}

/// `(M, Ω, θ, H)`, with `H` on `ℝ × M` when time-dependent.
#[derive(Clone, Debug)]
pub struct HamiltonianSystem {
    structure: LcsStructure,
    extended: Option<ExtendedStructure>,
    h: ScalarField,
}

impl HamiltonianSystem {
    pub fn new(structure: &LcsStructure, h: &str, time_dependent: bool) -> Result<HamiltonianSystem> {
        if time_dependent {
            let ext = structure.extend();
            let h = ext.parse_scalar(h)?;
            Ok(HamiltonianSystem {
                structure: structure.clone(),
                extended: Some(ext),
                h,
            })
        } else {
            HamiltonianSystem::from_field(structure, ScalarField::parse(structure.chart(), h)?)
        }
    }

    /// `h` on the base chart (autonomous) or on the extended chart.
    pub fn from_field(structure: &LcsStructure, h: ScalarField) -> Result<HamiltonianSystem> {
        let extended = if h.chart().time().is_some() {
            let ext = structure.extend();
            if **h.chart() != **ext.chart() {
                return Err(Error::DimensionMismatch("Hamiltonian lives on a foreign chart".into()));
            }
            Some(ext)
        } else {
            if **h.chart() != **structure.chart() {
                return Err(Error::DimensionMismatch("Hamiltonian lives on a foreign chart".into()));
            }
            None
        };
        Ok(HamiltonianSystem {
            structure: structure.clone(),
            extended,
            h,
        })
    }

    pub fn structure(&self) -> &LcsStructure {
        &self.structure
    }

    pub fn is_time_dependent(&self) -> bool {
        self.extended.is_some()
    }

    pub fn extended(&self) -> Option<&ExtendedStructure> {
        self.extended.as_ref()
    }

    /// The chart dynamics live on: `M`, or `ℝ × M` when time-dependent.
    pub fn chart(&self) -> &Arc<Chart> {
        match &self.extended {
            Some(e) => e.chart(),
            None => self.structure.chart(),
        }
    }

    pub fn hamiltonian(&self) -> &ScalarField {
        &self.h
    }

    pub fn omega(&self) -> &KForm {
        match &self.extended {
            Some(e) => e.omega(),
            None => self.structure.omega(),
        }
    }

    pub fn theta(&self) -> &KForm {
        match &self.extended {
            Some(e) => e.theta(),
            None => self.structure.theta(),
        }
    }

    /// Components of a `k`-form on [`Self::chart`] that survive at frozen time.
    pub fn frozen_components(&self, k: usize) -> Vec<usize> {
        match &self.extended {
            Some(e) => e.frozen_components(k),
            None => (0..binomial(self.chart().dim(), k)).collect(),
        }
    }

    /// Parses a function on [`Self::chart`].
    pub fn parse_scalar(&self, text: &str) -> Result<ScalarField> {
        ScalarField::parse(self.chart(), text)
    }

    /// Brings a base-chart field onto [`Self::chart`].
    pub fn lift_scalar(&self, f: &ScalarField) -> Result<ScalarField> {
        match &self.extended {
            Some(e) if f.chart().time().is_none() => e.lift_scalar(f),
            _ => Ok(f.clone()),
        }
    }

    pub fn lift_field(&self, x: &VectorField) -> Result<VectorField> {
        match &self.extended {
            Some(e) if x.chart().time().is_none() => e.lift_field(x),
            _ => Ok(x.clone()),
        }
    }

    pub fn twisted_differential(&self, f: &ScalarField) -> Result<KForm> {
        match &self.extended {
            Some(e) => e.twisted_differential(&self.lift_scalar(f)?),
            None => self.structure.twisted_differential(f),
        }
    }

    /// `d^θ ω` on [`Self::chart`]; pick [`Self::frozen_components`] for the
    /// frozen-time restriction.
    pub fn twisted_d(&self, w: &KForm) -> Result<KForm> {
        match &self.extended {
            Some(e) => e.twisted_d(w),
            None => self.structure.twisted_d(w),
        }
    }

    pub fn hamiltonian_vector_field(&self, f: &ScalarField) -> Result<VectorField> {
        match &self.extended {
            Some(e) => e.hamiltonian_vector_field(&self.lift_scalar(f)?),
            None => self.structure.hamiltonian_vector_field(f),
        }
    }

    /// `X_H`.
    pub fn field(&self) -> Result<VectorField> {
        self.hamiltonian_vector_field(&self.h)
    }

    /// The field to integrate: `X_H`, or `X_H + ∂/∂t` when time-dependent.
    pub fn dynamics(&self) -> Result<VectorField> {
        match &self.extended {
            Some(e) => e.autonomized(&self.h),
            None => self.field(),
        }
    }

    /// `∂f/∂t`, zero for autonomous systems.
    pub fn time_derivative(&self, f: &ScalarField) -> Result<ScalarField> {
        match &self.extended {
            Some(_) => self.lift_scalar(f)?.partial(crate::expr::TIME),
            None => Ok(ScalarField::constant(self.chart(), 0.0)),
        }
    }

    /// `{f, g} = Ω(X_f, X_g)` at frozen time.
    pub fn jacobi_bracket(&self, f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
        let xf = self.hamiltonian_vector_field(f)?;
        let xg = self.hamiltonian_vector_field(g)?;
        Ok(xg.contract(&xf.contract(self.omega())?)?.to_scalar())
    }
}

/// The closed-form Hamilton equations on `T*Q` for `Ω = d^θ λ`, `λ = p_i dq_i`,
/// with `θ = θ_i(q) dq_i`:
/// `q̇_k = −∂H/∂p_k`,
/// `ṗ_k = ∂H/∂q_k − Hθ_k − p_k θ_j ∂H/∂p_j + θ_k p_j ∂H/∂p_j`.
/// The chart is `(q_1…q_n, p_1…p_n)`; `θ`'s `dp` components are ignored.
pub fn cotangent_hamilton_equations(theta: &KForm, h: &ScalarField) -> Result<VectorField> {
    let chart = h.chart().clone();
    if !chart.dim().is_multiple_of(2) || chart.time().is_some() {
        return Err(Error::ChartShapeMismatch(format!(
            "cotangent equations need a (q, p) chart of even dimension, got {}",
            chart.dim()
        )));
    }
    if theta.degree() != 1 || **theta.chart() != *chart {
        return Err(Error::ChartShapeMismatch("θ must be a 1-form on the same chart".into()));
    }
    let node = Arc::new(CotangentEquations {
        h: h.node().clone(),
        theta: theta.node().clone(),
        n: chart.dim() / 2,
    });
    VectorField::from_node(&chart, node)
}

#[derive(Debug)]
struct CotangentEquations {
    h: FieldRef,
    theta: FieldRef,
    n: usize,
}

impl Node for CotangentEquations {
    fn arity(&self) -> usize {
        2 * self.n
    }
    fn len(&self) -> usize {
        2 * self.n
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let n = self.n;
        let j = jet(&*self.h, x, &crate::geometry::field::all_dirs(2 * n))?;
        let h = j.value[0];
        let dh = |i: usize| j.grad[i][0];
        let theta = eval(&*self.theta, x)?;
        let p = &x[n..];
        let theta_dh_dp = (0..n).fold(S::zero(), |acc, i| acc + theta[i] * dh(n + i));
        let p_dh_dp = (0..n).fold(S::zero(), |acc, i| acc + p[i] * dh(n + i));
        let mut out = Vec::with_capacity(2 * n);
        out.extend((0..n).map(|k| -dh(n + k)));
        out.extend((0..n).map(|k| dh(k) - h * theta[k] - p[k] * theta_dh_dp + theta[k] * p_dh_dp));
        Ok(out)
    }
}

/// `Ω = d^θ λ` for `λ = p_i dq_i` on a `(q, p)` chart.
pub fn cotangent_structure(theta: &KForm) -> Result<LcsStructure> {
    let chart = theta.chart().clone();
    if !chart.dim().is_multiple_of(2) {
        return Err(Error::ChartShapeMismatch("a (q, p) chart has even dimension".into()));
    }
    let n = chart.dim() / 2;
    let names = chart.names().to_vec();
    let terms: Vec<(Vec<usize>, crate::expr::Expression)> = (0..n)
        .map(|i| Ok((vec![i], chart.parse(&names[n + i])?)))
        .collect::<Result<_>>()?;
    let lambda = KForm::from_indexed(&chart, 1, terms)?;
    let omega = lambda.d()?.try_sub(&theta.wedge(&lambda)?)?;
    LcsStructure::new(omega, theta.clone())
}

/// `Σ c_k X_k` with constant coefficients.
pub fn combine_fields(terms: &[(f64, &VectorField)]) -> Result<VectorField> {
    let first = terms
        .first()
        .ok_or_else(|| Error::DimensionMismatch("empty combination".into()))?;
    let chart = first.1.chart().clone();
    let m = chart.dim();
    let node = Arc::new(Linear {
        terms: terms.iter().map(|(c, x)| (*c, x.node().clone())).collect(),
        arity: m,
        len: m,
    });
    VectorField::from_node(&chart, node)
}
