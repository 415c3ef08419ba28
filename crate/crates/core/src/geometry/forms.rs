//! Scalar fields, vector fields, differential forms and chart maps, with the
//! exterior-calculus operators between them.
//!
//! A `k`-form on an `m`-dimensional chart stores `C(m, k)` coefficients, one
//! per strictly increasing multi-index in lexicographic order. All operators
//! build new lazily evaluated nodes; nothing is simplified symbolically.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use crate::ad::{Matrix, Scalar};
use crate::error::{Error, Result};
use crate::expr::Expression;

use super::chart::Chart;
use super::field::{self, eval, jet, Constant, ExprNode, FieldRef, Linear, Node, Product, Quotient, Tower};
use super::multi_index::{binomial, combinations, normalize, rank};

fn check_chart(a: &Arc<Chart>, b: &Arc<Chart>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "charts differ: ({}) vs ({})",
            a.names().join(", "),
            b.names().join(", ")
        )))
    }
}

fn expr_values(chart: &Chart, exprs: Vec<Expression>) -> Result<ExprNode> {
    if chart.time().is_none() && exprs.iter().any(Expression::uses_time) {
        return Err(Error::Chart(
            "expression uses `t` on a chart without a time coordinate".into(),
        ));
    }
    Ok(ExprNode {
        exprs,
        arity: chart.dim(),
        time: chart.time(),
    })
}

fn expr_node(chart: &Chart, exprs: Vec<Expression>) -> Result<FieldRef> {
    Ok(Arc::new(expr_values(chart, exprs)?))
}

fn linear(arity: usize, len: usize, terms: Vec<(f64, FieldRef)>) -> FieldRef {
    Arc::new(Linear { terms, arity, len })
}

fn eval_point<S: Tower>(f: &FieldRef, x: &[S]) -> Result<Vec<S>> {
    eval(&**f, x)
}

// ---------------------------------------------------------------------------
// Nodes
// ---------------------------------------------------------------------------

/// Picks a subset of the outputs of `inner`.
#[derive(Debug)]
pub struct Select {
    pub inner: FieldRef,
    pub picks: Vec<usize>,
}

impl Node for Select {
    fn arity(&self) -> usize {
        self.inner.arity()
    }
    fn len(&self) -> usize {
        self.picks.len()
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let v = eval(&*self.inner, x)?;
        Ok(self.picks.iter().map(|&i| v[i]).collect())
    }
}

/// `outer ∘ inner`: evaluates `outer` at the outputs of `inner`.
#[derive(Debug)]
pub struct Compose {
    pub outer: FieldRef,
    pub inner: FieldRef,
}

impl Node for Compose {
    fn arity(&self) -> usize {
        self.inner.arity()
    }
    fn len(&self) -> usize {
        self.outer.len()
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let y = eval(&*self.inner, x)?;
        eval(&*self.outer, &y)
    }
}

/// Sparse coefficient table of expressions with signs, summed per slot.
#[derive(Debug)]
struct Coefficients {
    terms: Vec<(usize, f64, Expression)>,
    inner: ExprNode,
    len: usize,
}

impl Node for Coefficients {
    fn arity(&self) -> usize {
        self.inner.arity
    }
    fn len(&self) -> usize {
        self.len
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let values = self.inner.eval(x)?;
        let mut out = vec![S::zero(); self.len];
        for ((slot, sign, _), v) in self.terms.iter().zip(values) {
            out[*slot] += v.scale(*sign);
        }
        Ok(out)
    }
}

/// Exterior derivative of a `k`-form.
#[derive(Debug)]
struct ExteriorD {
    inner: FieldRef,
    m: usize,
    k: usize,
}

impl Node for ExteriorD {
    fn arity(&self) -> usize {
        self.m
    }
    fn len(&self) -> usize {
        binomial(self.m, self.k + 1)
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let j = jet(&*self.inner, x, &field::all_dirs(self.m))?;
        let mut out = Vec::with_capacity(Node::len(self));
        for idx in combinations(self.m, self.k + 1) {
            let mut acc = S::zero();
            for (pos, &i) in idx.iter().enumerate() {
                let mut rest = idx.clone();
                rest.remove(pos);
                let term = j.grad[i][rank(self.m, &rest)];
                if pos % 2 == 0 {
                    acc += term;
                } else {
                    acc -= term;
                }
            }
            out.push(acc);
        }
        Ok(out)
    }
}

/// `(a, b, out, sign)` entries of a product table.
type Table = Vec<(usize, usize, usize, f64)>;

#[derive(Debug)]
struct Wedge {
    a: FieldRef,
    b: FieldRef,
    table: Table,
    len: usize,
}

fn wedge_table(m: usize, k: usize, l: usize) -> Table {
    let mut table = Vec::new();
    for (ia, i) in combinations(m, k).iter().enumerate() {
        for (jb, j) in combinations(m, l).iter().enumerate() {
            let joined: Vec<usize> = i.iter().chain(j).copied().collect();
            if let Some((sorted, sign)) = normalize(&joined) {
                table.push((ia, jb, rank(m, &sorted), sign));
            }
        }
    }
    table
}

impl Node for Wedge {
    fn arity(&self) -> usize {
        self.a.arity()
    }
    fn len(&self) -> usize {
        self.len
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let a = eval(&*self.a, x)?;
        let b = eval(&*self.b, x)?;
        let mut out = vec![S::zero(); self.len];
        for &(ia, jb, o, sign) in &self.table {
            out[o] += (a[ia] * b[jb]).scale(sign);
        }
        Ok(out)
    }
}

/// `X⌟ω`; table entries are `(component of X, coefficient of ω, out, sign)`.
#[derive(Debug)]
struct Interior {
    x: FieldRef,
    w: FieldRef,
    table: Table,
    len: usize,
}

fn interior_table(m: usize, k: usize) -> Table {
    let mut table = Vec::new();
    for (o, idx) in combinations(m, k - 1).iter().enumerate() {
        for j in 0..m {
            if idx.contains(&j) {
                continue;
            }
            let before = idx.iter().filter(|&&i| i < j).count();
            let mut full = idx.clone();
            full.insert(before, j);
            let sign = if before % 2 == 0 { 1.0 } else { -1.0 };
            table.push((j, rank(m, &full), o, sign));
        }
    }
    table
}

impl Node for Interior {
    fn arity(&self) -> usize {
        self.x.arity()
    }
    fn len(&self) -> usize {
        self.len
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let v = eval(&*self.x, x)?;
        let w = eval(&*self.w, x)?;
        let mut out = vec![S::zero(); self.len];
        for &(j, c, o, sign) in &self.table {
            out[o] += (v[j] * w[c]).scale(sign);
        }
        Ok(out)
    }
}

#[derive(Debug)]
struct Bracket {
    x: FieldRef,
    y: FieldRef,
}

impl Node for Bracket {
    fn arity(&self) -> usize {
        self.x.arity()
    }
    fn len(&self) -> usize {
        self.x.len()
    }
    fn eval<S: Tower>(&self, p: &[S]) -> Result<Vec<S>> {
        let m = self.x.arity();
        let dirs = field::all_dirs(m);
        let jx = jet(&*self.x, p, &dirs)?;
        let jy = jet(&*self.y, p, &dirs)?;
        let mut out = vec![S::zero(); Node::len(self)];
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..m {
                *o += jx.value[j] * jy.grad[j][i] - jy.value[j] * jx.grad[j][i];
            }
        }
        Ok(out)
    }
}

/// Pullback of a `k`-form on the target chart along a map.
#[derive(Debug)]
struct Pullback {
    map: FieldRef,
    w: FieldRef,
    target: Arc<Chart>,
    k: usize,
}

impl Node for Pullback {
    fn arity(&self) -> usize {
        self.map.arity()
    }
    fn len(&self) -> usize {
        binomial(self.map.arity(), self.k)
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let m = self.map.arity();
        let n = self.map.len();
        let (y, jac) = if self.k == 0 {
            (eval(&*self.map, x)?, Matrix::zeros(n, m))
        } else {
            let j = jet(&*self.map, x, &field::all_dirs(m))?;
            let mut jac = Matrix::zeros(n, m);
            for (c, col) in j.grad.iter().enumerate() {
                for (r, v) in col.iter().enumerate() {
                    jac[(r, c)] = *v;
                }
            }
            (j.value, jac)
        };
        let primal: Vec<f64> = y.iter().map(Scalar::primal).collect();
        if !self.target.admissible(&primal) {
            return Err(Error::TargetInadmissible(primal));
        }
        let w = eval(&*self.w, &y)?;
        if self.k == 0 {
            return Ok(w);
        }
        let rows = combinations(n, self.k);
        let mut out = Vec::with_capacity(Node::len(self));
        for cols in combinations(m, self.k) {
            let mut acc = S::zero();
            for (r, wr) in rows.iter().zip(&w) {
                acc += *wr * jac.minor(r, &cols);
            }
            out.push(acc);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Scalar fields
// ---------------------------------------------------------------------------

/// A function on a chart.
#[derive(Clone, Debug)]
pub struct ScalarField {
    chart: Arc<Chart>,
    node: FieldRef,
}

impl ScalarField {
    pub fn parse(chart: &Arc<Chart>, text: &str) -> Result<ScalarField> {
        let e = chart.parse(text)?;
        ScalarField::from_expression(chart, e)
    }

    pub fn from_expression(chart: &Arc<Chart>, e: Expression) -> Result<ScalarField> {
        Ok(ScalarField {
            chart: chart.clone(),
            node: expr_node(chart, vec![e])?,
        })
    }

    pub fn constant(chart: &Arc<Chart>, value: f64) -> ScalarField {
        ScalarField {
            chart: chart.clone(),
            node: Arc::new(Constant {
                values: vec![value],
                arity: chart.dim(),
            }),
        }
    }

    pub fn from_node(chart: &Arc<Chart>, node: FieldRef) -> Result<ScalarField> {
        if node.arity() != chart.dim() || node.len() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "scalar field node has arity {} and length {}",
                node.arity(),
                node.len()
            )));
        }
        Ok(ScalarField {
            chart: chart.clone(),
            node,
        })
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn node(&self) -> &FieldRef {
        &self.node
    }

    pub fn eval<S: Tower>(&self, x: &[S]) -> Result<S> {
        Ok(eval_point(&self.node, x)?[0])
    }

    pub fn at(&self, x: &[f64]) -> Result<f64> {
        self.eval(x)
    }

    /// `∂f/∂name`.
    pub fn partial(&self, name: &str) -> Result<ScalarField> {
        let coord = self.chart.index(name)?;
        Ok(ScalarField {
            chart: self.chart.clone(),
            node: Arc::new(field::Partial {
                inner: self.node.clone(),
                coord,
            }),
        })
    }

    pub fn d(&self) -> KForm {
        self.as_form().d().expect("a chart has at least two coordinates")
    }

    pub fn as_form(&self) -> KForm {
        KForm {
            chart: self.chart.clone(),
            degree: 0,
            node: self.node.clone(),
        }
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.combine(&[(c, self)])
    }

    pub fn try_add(&self, other: &ScalarField) -> Result<ScalarField> {
        check_chart(&self.chart, &other.chart)?;
        Ok(self.combine(&[(1.0, self), (1.0, other)]))
    }

    pub fn try_sub(&self, other: &ScalarField) -> Result<ScalarField> {
        check_chart(&self.chart, &other.chart)?;
        Ok(self.combine(&[(1.0, self), (-1.0, other)]))
    }

    pub fn try_mul(&self, other: &ScalarField) -> Result<ScalarField> {
        check_chart(&self.chart, &other.chart)?;
        Ok(ScalarField {
            chart: self.chart.clone(),
            node: Arc::new(Product {
                scalar: self.node.clone(),
                field: other.node.clone(),
            }),
        })
    }

    pub fn try_div(&self, other: &ScalarField) -> Result<ScalarField> {
        check_chart(&self.chart, &other.chart)?;
        Ok(ScalarField {
            chart: self.chart.clone(),
            node: Arc::new(Quotient {
                field: self.node.clone(),
                scalar: other.node.clone(),
            }),
        })
    }

    fn combine(&self, terms: &[(f64, &ScalarField)]) -> ScalarField {
        ScalarField {
            chart: self.chart.clone(),
            node: linear(
                self.chart.dim(),
                1,
                terms.iter().map(|(c, f)| (*c, f.node.clone())).collect(),
            ),
        }
    }

    /// `f ∘ Φ` for a map into this field's chart.
    pub fn pullback(&self, map: &ChartMap) -> Result<ScalarField> {
        Ok(self.as_form().pullback(map)?.to_scalar())
    }
}

macro_rules! ops {
    ($ty:ident, $add:ident, $sub:ident) => {
        impl Add for &$ty {
            type Output = $ty;
            fn add(self, rhs: &$ty) -> $ty {
                self.$add(rhs).expect("operands live on different charts")
            }
        }
        impl Sub for &$ty {
            type Output = $ty;
            fn sub(self, rhs: &$ty) -> $ty {
                self.$sub(rhs).expect("operands live on different charts")
            }
        }
        impl Neg for &$ty {
            type Output = $ty;
            fn neg(self) -> $ty {
                self.scale(-1.0)
            }
        }
        impl Mul<&$ty> for f64 {
            type Output = $ty;
            fn mul(self, rhs: &$ty) -> $ty {
                rhs.scale(self)
            }
        }
    };
}

ops!(ScalarField, try_add, try_sub);
ops!(VectorField, try_add, try_sub);
ops!(KForm, try_add, try_sub);

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.try_mul(rhs).expect("operands live on different charts")
    }
}

// ---------------------------------------------------------------------------
// Vector fields
// ---------------------------------------------------------------------------

/// A vector field, as its components along the coordinate vectors.
#[derive(Clone, Debug)]
pub struct VectorField {
    chart: Arc<Chart>,
    node: FieldRef,
}

impl VectorField {
    pub fn parse<S: AsRef<str>>(chart: &Arc<Chart>, components: &[S]) -> Result<VectorField> {
        if components.len() != chart.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} components for a {}-dimensional chart",
                components.len(),
                chart.dim()
            )));
        }
        let exprs = components
            .iter()
            .map(|c| chart.parse(c.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorField {
            chart: chart.clone(),
            node: expr_node(chart, exprs)?,
        })
    }

    pub fn zero(chart: &Arc<Chart>) -> VectorField {
        VectorField {
            chart: chart.clone(),
            node: Arc::new(Constant {
                values: vec![0.0; chart.dim()],
                arity: chart.dim(),
            }),
        }
    }

    /// `∂/∂name`.
    pub fn coordinate(chart: &Arc<Chart>, name: &str) -> Result<VectorField> {
        let i = chart.index(name)?;
        let mut values = vec![0.0; chart.dim()];
        values[i] = 1.0;
        Ok(VectorField {
            chart: chart.clone(),
            node: Arc::new(Constant {
                values,
                arity: chart.dim(),
            }),
        })
    }

    pub fn from_node(chart: &Arc<Chart>, node: FieldRef) -> Result<VectorField> {
        if node.arity() != chart.dim() || node.len() != chart.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector field node has arity {} and length {} on a {}-dimensional chart",
                node.arity(),
                node.len(),
                chart.dim()
            )));
        }
        Ok(VectorField {
            chart: chart.clone(),
            node,
        })
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn node(&self) -> &FieldRef {
        &self.node
    }

    pub fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        eval_point(&self.node, x)
    }

    pub fn at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval(x)
    }

    pub fn component(&self, i: usize) -> ScalarField {
        ScalarField {
            chart: self.chart.clone(),
            node: Arc::new(Select {
                inner: self.node.clone(),
                picks: vec![i],
            }),
        }
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField {
            chart: self.chart.clone(),
            node: linear(self.chart.dim(), self.chart.dim(), vec![(c, self.node.clone())]),
        }
    }

    pub fn try_add(&self, other: &VectorField) -> Result<VectorField> {
        self.lin(other, 1.0)
    }

    pub fn try_sub(&self, other: &VectorField) -> Result<VectorField> {
        self.lin(other, -1.0)
    }

    fn lin(&self, other: &VectorField, c: f64) -> Result<VectorField> {
        check_chart(&self.chart, &other.chart)?;
        let m = self.chart.dim();
        Ok(VectorField {
            chart: self.chart.clone(),
            node: linear(m, m, vec![(1.0, self.node.clone()), (c, other.node.clone())]),
        })
    }

    /// `f·X`.
    pub fn mul(&self, f: &ScalarField) -> Result<VectorField> {
        check_chart(&self.chart, &f.chart)?;
        Ok(VectorField {
            chart: self.chart.clone(),
            node: Arc::new(Product {
                scalar: f.node.clone(),
                field: self.node.clone(),
            }),
        })
    }

    /// `X/f`.
    pub fn div(&self, f: &ScalarField) -> Result<VectorField> {
        check_chart(&self.chart, &f.chart)?;
        Ok(VectorField {
            chart: self.chart.clone(),
            node: Arc::new(Quotient {
                field: self.node.clone(),
                scalar: f.node.clone(),
            }),
        })
    }

    /// Directional derivative `X(f)`.
    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField> {
        Ok(self.contract(&f.d())?.to_scalar())
    }

    /// `X⌟ω`.
    pub fn contract(&self, w: &KForm) -> Result<KForm> {
        interior_product(self, w)
    }

    /// `[self, other]`.
    pub fn bracket(&self, other: &VectorField) -> Result<VectorField> {
        lie_bracket(self, other)
    }
}

// ---------------------------------------------------------------------------
// Forms
// ---------------------------------------------------------------------------

/// A differential `k`-form with coefficients on increasing multi-indices.
#[derive(Clone, Debug)]
pub struct KForm {
    chart: Arc<Chart>,
    degree: usize,
    node: FieldRef,
}

impl KForm {
    pub fn from_node(chart: &Arc<Chart>, degree: usize, node: FieldRef) -> Result<KForm> {
        let m = chart.dim();
        if degree > m {
            return Err(Error::DegreeOverflow { degree, dim: m });
        }
        if node.arity() != m || node.len() != binomial(m, degree) {
            return Err(Error::DimensionMismatch(format!(
                "{degree}-form node has arity {} and length {} on a {m}-dimensional chart",
                node.arity(),
                node.len()
            )));
        }
        Ok(KForm {
            chart: chart.clone(),
            degree,
            node,
        })
    }

    pub fn zero(chart: &Arc<Chart>, degree: usize) -> Result<KForm> {
        let m = chart.dim();
        let node = Arc::new(Constant {
            values: vec![0.0; binomial(m, degree)],
            arity: m,
        });
        KForm::from_node(chart, degree, node)
    }

    /// Builds a form from `(coordinate names, coefficient)` terms, e.g.
    /// `(["q1", "p1"], "1/p1")` for `(1/p1) dq1∧dp1`. Names may come in any
    /// order; the coefficient is re-signed accordingly and repeated
    /// multi-indices are summed.
    pub fn parse<N: AsRef<str>, T: AsRef<str>>(
        chart: &Arc<Chart>,
        degree: usize,
        terms: &[(&[N], T)],
    ) -> Result<KForm> {
        let mut indexed = Vec::with_capacity(terms.len());
        for (names, text) in terms {
            let idx = names
                .iter()
                .map(|n| chart.index(n.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            indexed.push((idx, chart.parse(text.as_ref())?));
        }
        KForm::from_indexed(chart, degree, indexed)
    }

    pub fn from_indexed(chart: &Arc<Chart>, degree: usize, terms: Vec<(Vec<usize>, Expression)>) -> Result<KForm> {
        let m = chart.dim();
        if degree > m {
            return Err(Error::DegreeOverflow { degree, dim: m });
        }
        let mut table = Vec::with_capacity(terms.len());
        for (idx, e) in terms {
            if idx.len() != degree || idx.iter().any(|&i| i >= m) {
                return Err(Error::DimensionMismatch(format!(
                    "multi-index {idx:?} does not fit a {degree}-form on a {m}-dimensional chart"
                )));
            }
            let (sorted, sign) =
                normalize(&idx).ok_or_else(|| Error::DimensionMismatch(format!("repeated index in {idx:?}")))?;
            table.push((rank(m, &sorted), sign, e));
        }
        let inner = expr_values(chart, table.iter().map(|t| t.2.clone()).collect())?;
        let node = Arc::new(Coefficients {
            terms: table,
            inner,
            len: binomial(m, degree),
        });
        KForm::from_node(chart, degree, node)
    }

    /// Constant-coefficient form; `values` in multi-index order.
    pub fn constant(chart: &Arc<Chart>, degree: usize, values: Vec<f64>) -> Result<KForm> {
        let node = Arc::new(Constant {
            values,
            arity: chart.dim(),
        });
        KForm::from_node(chart, degree, node)
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn node(&self) -> &FieldRef {
        &self.node
    }

    /// Coefficients at `x`, in the order of [`KForm::indices`].
    pub fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        eval_point(&self.node, x)
    }

    pub fn at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval(x)
    }

    pub fn indices(&self) -> Vec<Vec<usize>> {
        combinations(self.chart.dim(), self.degree)
    }

    /// Coefficient of `dx^{i1}∧…` for an arbitrary (not necessarily sorted)
    /// list of coordinate names.
    pub fn coefficient(&self, names: &[&str]) -> Result<ScalarField> {
        let idx = names.iter().map(|n| self.chart.index(n)).collect::<Result<Vec<_>>>()?;
        if idx.len() != self.degree {
            return Err(Error::DimensionMismatch("wrong number of indices".into()));
        }
        match normalize(&idx) {
            None => Ok(ScalarField::constant(&self.chart, 0.0)),
            Some((sorted, sign)) => Ok(ScalarField {
                chart: self.chart.clone(),
                node: Arc::new(Select {
                    inner: self.node.clone(),
                    picks: vec![rank(self.chart.dim(), &sorted)],
                }),
            }
            .scale(sign)),
        }
    }

    /// A 0-form as a scalar field.
    pub fn to_scalar(&self) -> ScalarField {
        debug_assert_eq!(self.degree, 0);
        ScalarField {
            chart: self.chart.clone(),
            node: self.node.clone(),
        }
    }

    pub fn scale(&self, c: f64) -> KForm {
        KForm {
            chart: self.chart.clone(),
            degree: self.degree,
            node: linear(self.chart.dim(), self.node.len(), vec![(c, self.node.clone())]),
        }
    }

    pub fn try_add(&self, other: &KForm) -> Result<KForm> {
        self.lin(other, 1.0)
    }

    pub fn try_sub(&self, other: &KForm) -> Result<KForm> {
        self.lin(other, -1.0)
    }

    fn lin(&self, other: &KForm, c: f64) -> Result<KForm> {
        check_chart(&self.chart, &other.chart)?;
        if self.degree != other.degree {
            return Err(Error::DimensionMismatch(format!(
                "cannot add a {}-form and a {}-form",
                self.degree, other.degree
            )));
        }
        Ok(KForm {
            chart: self.chart.clone(),
            degree: self.degree,
            node: linear(
                self.chart.dim(),
                self.node.len(),
                vec![(1.0, self.node.clone()), (c, other.node.clone())],
            ),
        })
    }

    /// `f·ω`.
    pub fn mul(&self, f: &ScalarField) -> Result<KForm> {
        check_chart(&self.chart, &f.chart)?;
        Ok(KForm {
            chart: self.chart.clone(),
            degree: self.degree,
            node: Arc::new(Product {
                scalar: f.node.clone(),
                field: self.node.clone(),
            }),
        })
    }

    pub fn d(&self) -> Result<KForm> {
        exterior_derivative(self)
    }

    pub fn wedge(&self, other: &KForm) -> Result<KForm> {
        wedge(self, other)
    }

    pub fn pullback(&self, map: &ChartMap) -> Result<KForm> {
        pullback_form(map, self)
    }
}

// ---------------------------------------------------------------------------
// Chart maps
// ---------------------------------------------------------------------------

/// A smooth map between charts of equal dimension.
#[derive(Clone, Debug)]
pub struct ChartMap {
    source: Arc<Chart>,
    target: Arc<Chart>,
    node: FieldRef,
    time_passthrough: bool,
}

/// Appends `t` to the outputs of a map written on an extended chart.
#[derive(Debug)]
struct TimePassthrough {
    inner: FieldRef,
    time: usize,
}

impl Node for TimePassthrough {
    fn arity(&self) -> usize {
        self.inner.arity()
    }
    fn len(&self) -> usize {
        self.inner.len() + 1
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let mut out = eval(&*self.inner, x)?;
        out.push(x[self.time]);
        Ok(out)
    }
}

impl ChartMap {
    /// Map given by one expression per target coordinate, written in the
    /// source coordinates.
    pub fn parse<S: AsRef<str>>(source: &Arc<Chart>, target: &Arc<Chart>, components: &[S]) -> Result<ChartMap> {
        if components.len() != target.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} components for a {}-dimensional target",
                components.len(),
                target.dim()
            )));
        }
        let exprs = components
            .iter()
            .map(|c| source.parse(c.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        ChartMap::from_node(source, target, expr_node(source, exprs)?)
    }

    /// Map on an extended chart that preserves `t`: `components` give the base
    /// coordinates only and may depend on `t`.
    pub fn parse_time_passthrough<S: AsRef<str>>(chart: &Arc<Chart>, components: &[S]) -> Result<ChartMap> {
        let Some(time) = chart.time() else {
            return Err(Error::Chart("time passthrough needs an extended chart".into()));
        };
        if components.len() != chart.base_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} components for {} base coordinates",
                components.len(),
                chart.base_dim()
            )));
        }
        let exprs = components
            .iter()
            .map(|c| chart.parse(c.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let inner = expr_node(chart, exprs)?;
        let mut map = ChartMap::from_node(chart, chart, Arc::new(TimePassthrough { inner, time }))?;
        map.time_passthrough = true;
        Ok(map)
    }

    pub fn from_node(source: &Arc<Chart>, target: &Arc<Chart>, node: FieldRef) -> Result<ChartMap> {
        if node.arity() != source.dim() || node.len() != target.dim() {
            return Err(Error::ChartShapeMismatch(format!(
                "map node has arity {} and length {}, charts have dimensions {} and {}",
                node.arity(),
                node.len(),
                source.dim(),
                target.dim()
            )));
        }
        Ok(ChartMap {
            source: source.clone(),
            target: target.clone(),
            node,
            time_passthrough: false,
        })
    }

    pub fn identity(chart: &Arc<Chart>) -> ChartMap {
        let m = chart.dim();
        ChartMap {
            source: chart.clone(),
            target: chart.clone(),
            node: Arc::new(IdentityNode { m }),
            time_passthrough: chart.time().is_some(),
        }
    }

    /// `F(t, x) = (Φ(x), t)` on the extended chart for a map `Φ` of the base chart.
    pub fn extend_frozen(&self, extended: &Arc<Chart>) -> Result<ChartMap> {
        let Some(time) = extended.time() else {
            return Err(Error::Chart("extension needs an extended chart".into()));
        };
        if self.source.time().is_some() || extended.base() != *self.source || extended.base() != *self.target {
            return Err(Error::ChartShapeMismatch(
                "map must act on the base of the extended chart".into(),
            ));
        }
        let base: Vec<usize> = (0..extended.dim()).filter(|&i| i != time).collect();
        let inner = Arc::new(field::Reindex {
            inner: self.node.clone(),
            take: base,
            arity: extended.dim(),
        });
        let mut map = ChartMap::from_node(extended, extended, Arc::new(TimePassthrough { inner, time }))?;
        map.time_passthrough = true;
        Ok(map)
    }

    /// Marks a map as preserving time without changing its components.
    pub fn with_time_passthrough(mut self, flag: bool) -> ChartMap {
        self.time_passthrough = flag;
        self
    }

    pub fn source(&self) -> &Arc<Chart> {
        &self.source
    }

    pub fn target(&self) -> &Arc<Chart> {
        &self.target
    }

    pub fn node(&self) -> &FieldRef {
        &self.node
    }

    pub fn time_passthrough(&self) -> bool {
        self.time_passthrough
    }

    pub fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        eval_point(&self.node, x)
    }

    pub fn at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval(x)
    }

    /// `DΦ` at `x`; entry `(i, j)` is `∂Φ_i/∂x_j`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix<f64>> {
        let m = self.source.dim();
        let j = jet(&*self.node, x, &field::all_dirs(m))?;
        let mut out = Matrix::zeros(self.target.dim(), m);
        for (c, col) in j.grad.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        Ok(out)
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &ChartMap) -> Result<ChartMap> {
        check_chart(&inner.target, &self.source)?;
        Ok(ChartMap {
            source: inner.source.clone(),
            target: self.target.clone(),
            node: Arc::new(Compose {
                outer: self.node.clone(),
                inner: inner.node.clone(),
            }),
            time_passthrough: self.time_passthrough && inner.time_passthrough,
        })
    }
}

#[derive(Debug)]
struct IdentityNode {
    m: usize,
}

impl Node for IdentityNode {
    fn arity(&self) -> usize {
        self.m
    }
    fn len(&self) -> usize {
        self.m
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(x.to_vec())
    }
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

pub fn exterior_derivative(w: &KForm) -> Result<KForm> {
    let m = w.chart.dim();
    if w.degree + 1 > m {
        return Err(Error::DegreeOverflow {
            degree: w.degree + 1,
            dim: m,
        });
    }
    Ok(KForm {
        chart: w.chart.clone(),
        degree: w.degree + 1,
        node: Arc::new(ExteriorD {
            inner: w.node.clone(),
            m,
            k: w.degree,
        }),
    })
}

pub fn wedge(a: &KForm, b: &KForm) -> Result<KForm> {
    check_chart(&a.chart, &b.chart)?;
    let m = a.chart.dim();
    let degree = a.degree + b.degree;
    if degree > m {
        return Err(Error::DegreeOverflow { degree, dim: m });
    }
    Ok(KForm {
        chart: a.chart.clone(),
        degree,
        node: Arc::new(Wedge {
            a: a.node.clone(),
            b: b.node.clone(),
            table: wedge_table(m, a.degree, b.degree),
            len: binomial(m, degree),
        }),
    })
}

pub fn interior_product(x: &VectorField, w: &KForm) -> Result<KForm> {
    check_chart(&x.chart, &w.chart)?;
    if w.degree == 0 {
        return Err(Error::DegreeUnderflow);
    }
    let m = w.chart.dim();
    Ok(KForm {
        chart: w.chart.clone(),
        degree: w.degree - 1,
        node: Arc::new(Interior {
            x: x.node.clone(),
            w: w.node.clone(),
            table: interior_table(m, w.degree),
            len: binomial(m, w.degree - 1),
        }),
    })
}

/// `L_X ω = d(X⌟ω) + X⌟dω`.
pub fn lie_derivative_form(x: &VectorField, w: &KForm) -> Result<KForm> {
    check_chart(&x.chart, &w.chart)?;
    let m = w.chart.dim();
    match w.degree {
        0 => interior_product(x, &exterior_derivative(w)?),
        k if k == m => exterior_derivative(&interior_product(x, w)?),
        _ => exterior_derivative(&interior_product(x, w)?)?.try_add(&interior_product(x, &exterior_derivative(w)?)?),
    }
}

pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField> {
    check_chart(&x.chart, &y.chart)?;
    Ok(VectorField {
        chart: x.chart.clone(),
        node: Arc::new(Bracket {
            x: x.node.clone(),
            y: y.node.clone(),
        }),
    })
}

/// `Φ*ω` for `ω` on the target chart of `Φ`.
pub fn pullback_form(map: &ChartMap, w: &KForm) -> Result<KForm> {
    check_chart(&map.target, &w.chart)?;
    Ok(KForm {
        chart: map.source.clone(),
        degree: w.degree,
        node: Arc::new(Pullback {
            map: map.node.clone(),
            w: w.node.clone(),
            target: map.target.clone(),
            k: w.degree,
        }),
    })
}
