//! Lazily evaluated fields.
//!
//! Every field, vector field and form coefficient table is a [`Field`]: a map
//! from a chart point to a fixed-length vector of values, evaluable over the
//! dual tower `f64 → D1 → … → D4`. Nodes that need derivatives of their
//! children evaluate them one level up the tower, so nested constructions
//! (the exterior derivative of a Lie bracket of a Hamiltonian field, say)
//! differentiate through each other without any symbolic step.

use std::fmt;
use std::sync::Arc;

use crate::ad::{seed, Dual, Scalar, D1, D2, D3, D4};
use crate::error::{Error, Result};
use crate::expr::{Env, Expression};

pub type FieldRef = Arc<dyn Field>;

/// Object-safe evaluation interface; implemented for every [`Node`].
pub trait Field: fmt::Debug + Send + Sync {
    /// Number of chart coordinates the field is evaluated at.
    fn arity(&self) -> usize;
    /// Number of output values.
    fn len(&self) -> usize;
    fn eval_f64(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn eval_d1(&self, x: &[D1]) -> Result<Vec<D1>>;
    fn eval_d2(&self, x: &[D2]) -> Result<Vec<D2>>;
    fn eval_d3(&self, x: &[D3]) -> Result<Vec<D3>>;
    fn eval_d4(&self, x: &[D4]) -> Result<Vec<D4>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generic implementation side of [`Field`].
#[allow(clippy::len_without_is_empty)]
pub trait Node: fmt::Debug + Send + Sync {
    fn arity(&self) -> usize;
    fn len(&self) -> usize;
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>>;
}

impl<T: Node> Field for T {
    fn arity(&self) -> usize {
        Node::arity(self)
    }
    fn len(&self) -> usize {
        Node::len(self)
    }
    fn eval_f64(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval(x)
    }
    fn eval_d1(&self, x: &[D1]) -> Result<Vec<D1>> {
        self.eval(x)
    }
    fn eval_d2(&self, x: &[D2]) -> Result<Vec<D2>> {
        self.eval(x)
    }
    fn eval_d3(&self, x: &[D3]) -> Result<Vec<D3>> {
        self.eval(x)
    }
    fn eval_d4(&self, x: &[D4]) -> Result<Vec<D4>> {
        self.eval(x)
    }
}

/// The scalars fields can be evaluated over, and how to reach the next level.
pub trait Tower: Scalar {
    fn call(f: &dyn Field, x: &[Self]) -> Result<Vec<Self>>;
    fn call_lifted(f: &dyn Field, x: &[Dual<Self>]) -> Result<Vec<Dual<Self>>>;
}

impl Tower for f64 {
    fn call(f: &dyn Field, x: &[Self]) -> Result<Vec<Self>> {
        f.eval_f64(x)
    }
    fn call_lifted(f: &dyn Field, x: &[D1]) -> Result<Vec<D1>> {
        f.eval_d1(x)
    }
}

impl Tower for D1 {
    fn call(f: &dyn Field, x: &[Self]) -> Result<Vec<Self>> {
        f.eval_d1(x)
    }
    fn call_lifted(f: &dyn Field, x: &[D2]) -> Result<Vec<D2>> {
        f.eval_d2(x)
    }
}

impl Tower for D2 {
    fn call(f: &dyn Field, x: &[Self]) -> Result<Vec<Self>> {
        f.eval_d2(x)
    }
    fn call_lifted(f: &dyn Field, x: &[D3]) -> Result<Vec<D3>> {
        f.eval_d3(x)
    }
}

impl Tower for D3 {
    fn call(f: &dyn Field, x: &[Self]) -> Result<Vec<Self>> {
        f.eval_d3(x)
    }
    fn call_lifted(f: &dyn Field, x: &[D4]) -> Result<Vec<D4>> {
        f.eval_d4(x)
    }
}

impl Tower for D4 {
    fn call(f: &dyn Field, x: &[Self]) -> Result<Vec<Self>> {
        f.eval_d4(x)
    }
    fn call_lifted(_: &dyn Field, _: &[Dual<D4>]) -> Result<Vec<Dual<D4>>> {
        Err(Error::DepthExceeded)
    }
}

pub fn eval<S: Tower>(f: &dyn Field, x: &[S]) -> Result<Vec<S>> {
    if x.len() != f.arity() {
        return Err(Error::DimensionMismatch(format!(
            "field of arity {} evaluated at a point of length {}",
            f.arity(),
            x.len()
        )));
    }
    let out = S::call(f, x)?;
    debug_assert_eq!(out.len(), f.len());
    Ok(out)
}

/// Value and first partials of a field.
#[derive(Clone, Debug)]
pub struct Jet<S> {
    pub value: Vec<S>,
    /// `grad[j][i] = ∂f_i/∂x_{dirs[j]}`.
    pub grad: Vec<Vec<S>>,
}

/// Evaluates `f` and its partials along `dirs`, one lifted pass per direction.
pub fn jet<S: Tower>(f: &dyn Field, x: &[S], dirs: &[usize]) -> Result<Jet<S>> {
    if dirs.is_empty() {
        return Ok(Jet {
            value: eval(f, x)?,
            grad: Vec::new(),
        });
    }
    let mut value = Vec::new();
    let mut grad = Vec::with_capacity(dirs.len());
    for (n, &j) in dirs.iter().enumerate() {
        let out = S::call_lifted(f, &seed(x, j))?;
        if n == 0 {
            value = out.iter().map(|d| d.re).collect();
        }
        grad.push(out.into_iter().map(|d| d.eps).collect());
    }
    Ok(Jet { value, grad })
}

pub fn all_dirs(m: usize) -> Vec<usize> {
    (0..m).collect()
}

/// Outputs given by expressions over the chart coordinates.
#[derive(Debug)]
pub struct ExprNode {
    pub exprs: Vec<Expression>,
    pub arity: usize,
    pub time: Option<usize>,
}

impl Node for ExprNode {
    fn arity(&self) -> usize {
        self.arity
    }
    fn len(&self) -> usize {
        self.exprs.len()
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let env = Env {
            coords: x,
            time: self.time.map(|i| x[i]),
        };
        self.exprs.iter().map(|e| e.eval(&env)).collect()
    }
}

#[derive(Debug)]
pub struct Constant {
    pub values: Vec<f64>,
    pub arity: usize,
}

impl Node for Constant {
    fn arity(&self) -> usize {
        self.arity
    }
    fn len(&self) -> usize {
        self.values.len()
    }
    fn eval<S: Tower>(&self, _: &[S]) -> Result<Vec<S>> {
        Ok(self.values.iter().map(|&v| S::from_f64(v)).collect())
    }
}

/// `Σ c_k F_k` with constant coefficients.
#[derive(Debug)]
pub struct Linear {
    pub terms: Vec<(f64, FieldRef)>,
    pub arity: usize,
    pub len: usize,
}

impl Node for Linear {
    fn arity(&self) -> usize {
        self.arity
    }
    fn len(&self) -> usize {
        self.len
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let mut acc = vec![S::zero(); self.len];
        for (c, f) in &self.terms {
            for (a, v) in acc.iter_mut().zip(eval(&**f, x)?) {
                *a += v.scale(*c);
            }
        }
        Ok(acc)
    }
}

/// Pointwise product of a scalar field with a multi-valued field.
#[derive(Debug)]
pub struct Product {
    pub scalar: FieldRef,
    pub field: FieldRef,
}

impl Node for Product {
    fn arity(&self) -> usize {
        self.field.arity()
    }
    fn len(&self) -> usize {
        self.field.len()
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let s = eval(&*self.scalar, x)?[0];
        Ok(eval(&*self.field, x)?.into_iter().map(|v| s * v).collect())
    }
}

/// Multi-valued field divided by a scalar field.
#[derive(Debug)]
pub struct Quotient {
    pub field: FieldRef,
    pub scalar: FieldRef,
}

impl Node for Quotient {
    fn arity(&self) -> usize {
        self.field.arity()
    }
    fn len(&self) -> usize {
        self.field.len()
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let s = eval(&*self.scalar, x)?[0];
        if s.primal() == 0.0 {
            return Err(Error::Domain("division by a vanishing field".into()));
        }
        let inv = s.recip();
        Ok(eval(&*self.field, x)?.into_iter().map(|v| v * inv).collect())
    }
}

/// `∂F/∂x_coord`, all outputs at once.
#[derive(Debug)]
pub struct Partial {
    pub inner: FieldRef,
    pub coord: usize,
}

impl Node for Partial {
    fn arity(&self) -> usize {
        self.inner.arity()
    }
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(jet(&*self.inner, x, &[self.coord])?.grad.remove(0))
    }
}

/// Evaluates `inner` at `x[take[0]], x[take[1]], …`; realizes pullback of
/// functions along coordinate projections.
#[derive(Debug)]
pub struct Reindex {
    pub inner: FieldRef,
    pub take: Vec<usize>,
    pub arity: usize,
}

impl Node for Reindex {
    fn arity(&self) -> usize {
        self.arity
    }
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let y: Vec<S> = self.take.iter().map(|&i| x[i]).collect();
        eval(&*self.inner, &y)
    }
}

/// Scatters the outputs of `inner` into a longer zero vector.
#[derive(Debug)]
pub struct Scatter {
    pub inner: FieldRef,
    pub positions: Vec<usize>,
    pub len: usize,
}

impl Node for Scatter {
    fn arity(&self) -> usize {
        self.inner.arity()
    }
    fn len(&self) -> usize {
        self.len
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let mut out = vec![S::zero(); self.len];
        for (v, &p) in eval(&*self.inner, x)?.into_iter().zip(&self.positions) {
            out[p] = v;
        }
        Ok(out)
    }
}

/// Concatenation of the outputs of several fields of equal arity.
#[derive(Debug)]
pub struct Stack {
    pub parts: Vec<FieldRef>,
    pub arity: usize,
}

impl Node for Stack {
    fn arity(&self) -> usize {
        self.arity
    }
    fn len(&self) -> usize {
        self.parts.iter().map(|p| p.len()).sum()
    }
    fn eval<S: Tower>(&self, x: &[S]) -> Result<Vec<S>> {
        let mut out = Vec::with_capacity(Node::len(self));
        for p in &self.parts {
            out.extend(eval(&**p, x)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expr_field(src: &[&str], names: &[&str]) -> FieldRef {
        Arc::new(ExprNode {
            exprs: src.iter().map(|s| Expression::parse(s, names).unwrap()).collect(),
            arity: names.len(),
            time: None,
        })
    }

    #[test]
    fn jet_second_level() {
        let f = expr_field(&["x^2*y"], &["x", "y"]);
        let d = Arc::new(Partial { inner: f, coord: 1 });
        // ∂/∂x of ∂f/∂y = 2x.
        let j = jet::<f64>(&*d, &[1.5, -2.0], &[0]).unwrap();
        assert_eq!(j.value, vec![2.25]);
        assert_eq!(j.grad[0], vec![3.0]);
    }

    #[test]
    fn depth_is_bounded() {
        let mut f: FieldRef = expr_field(&["exp(x)*y"], &["x", "y"]);
        for _ in 0..4 {
            f = Arc::new(Partial { inner: f, coord: 0 });
        }
        assert!((eval::<f64>(&*f, &[0.0, 2.0]).unwrap()[0] - 2.0).abs() < 1e-15);
        let f = Arc::new(Partial { inner: f, coord: 0 });
        assert_eq!(eval::<f64>(&*f, &[0.0, 2.0]), Err(Error::DepthExceeded));
    }

    #[test]
    fn arity_checked() {
        let f = expr_field(&["x"], &["x", "y"]);
        assert!(matches!(eval::<f64>(&*f, &[1.0]), Err(Error::DimensionMismatch(_))));
    }
}
