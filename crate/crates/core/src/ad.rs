//! Forward-mode automatic differentiation and dense linear algebra over a
//! generic scalar.
//!
//! [`Dual<S>`] is itself a [`Scalar`] whenever `S` is, so second and higher
//! derivatives come from nesting. Everything in this module is written against
//! the trait so that a linear solve performed on dual entries carries the
//! derivative of its solution.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Numeric value usable by every evaluator in the crate.
///
/// Comparisons are always made on [`Scalar::primal`], the innermost real
/// part, so that derivative information never changes control flow.
pub trait Scalar:
    Copy
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(v: f64) -> Self;
    fn primal(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    /// `self^e` for a positive base.
    fn powf(self, e: Self) -> Self {
        (e * self.ln()).exp()
    }

    fn recip(self) -> Self {
        Self::one() / self
    }

    fn scale(self, k: f64) -> Self {
        self * Self::from_f64(k)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn primal(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn powf(self, e: Self) -> Self {
        f64::powf(self, e)
    }
}

/// Dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Default, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Dual { re, eps }
    }

    pub fn constant(re: S) -> Self {
        Dual { re, eps: S::zero() }
    }

    pub fn variable(re: S) -> Self {
        Dual { re, eps: S::one() }
    }

    fn chain(self, value: S, slope: S) -> Self {
        Dual {
            re: value,
            eps: self.eps * slope,
        }
    }
}

impl<S: fmt::Debug> fmt::Debug for Dual<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dual({:?}, {:?})", self.re, self.eps)
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let re = self.re / o.re;
        Dual::new(re, (self.eps - re * o.eps) / o.re)
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<S: Scalar> AddAssign for Dual<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Scalar> SubAssign for Dual<S> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<S: Scalar> MulAssign for Dual<S> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(S::from_f64(v))
    }
    fn primal(&self) -> f64 {
        self.re.primal()
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), self.re.recip())
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, (s + s).recip())
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Dual::constant(S::one()),
            _ => self.chain(self.re.powi(n), self.re.powi(n - 1).scale(n as f64)),
        }
    }
    fn powf(self, e: Self) -> Self {
        let v = self.re.powf(e.re);
        Dual::new(v, v * (e.eps * self.re.ln() + e.re * self.eps / self.re))
    }
}

pub type D1 = Dual<f64>;
pub type D2 = Dual<D1>;
pub type D3 = Dual<D2>;
pub type D4 = Dual<D3>;

/// Dense row-major square (or rectangular) matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged matrix rows".into()));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(v.len(), self.cols, "matrix-vector size mismatch");
        (0..self.rows)
            .map(|i| {
                let mut acc = S::zero();
                for j in 0..self.cols {
                    acc += self[(i, j)] * v[j];
                }
                acc
            })
            .collect()
    }

    pub fn mul(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, other.rows, "matrix product size mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// Determinant of the submatrix picked by `rows` × `cols`.
    pub fn minor(&self, rows: &[usize], cols: &[usize]) -> S {
        let n = rows.len();
        debug_assert_eq!(n, cols.len());
        match n {
            0 => S::one(),
            1 => self[(rows[0], cols[0])],
            2 => {
                self[(rows[0], cols[0])] * self[(rows[1], cols[1])]
                    - self[(rows[0], cols[1])] * self[(rows[1], cols[0])]
            }
            _ => {
                // Laplace expansion along the first row; n is at most 4 here.
                let mut acc = S::zero();
                let mut rest = Vec::with_capacity(n - 1);
                for (c, &col) in cols.iter().enumerate() {
                    rest.clear();
                    rest.extend(cols.iter().enumerate().filter(|&(i, _)| i != c).map(|(_, &x)| x));
                    let term = self[(rows[0], col)] * self.minor(&rows[1..], &rest);
                    if c % 2 == 0 {
                        acc += term;
                    } else {
                        acc -= term;
                    }
                }
                acc
            }
        }
    }

    pub fn max_primal_abs(&self) -> f64 {
        self.data.iter().map(|x| x.primal().abs()).fold(0.0, f64::max)
    }
}

impl<S> std::ops::Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for Matrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

pub const DEFAULT_PIVOT_THRESHOLD: f64 = 1e-12;

/// Solution of a linear system together with the smallest relative pivot met
/// during elimination.
#[derive(Clone, Debug)]
pub struct Solution<S> {
    pub x: Vec<S>,
    pub min_pivot: f64,
}

/// Solves `a · x = b` by Gaussian elimination with partial pivoting on the
/// primal magnitude.
pub fn solve_linear<S: Scalar>(a: &Matrix<S>, b: &[S]) -> Result<Vec<S>> {
    solve_linear_with(a, b, DEFAULT_PIVOT_THRESHOLD).map(|s| s.x)
}

/// As [`solve_linear`], with an explicit pivot threshold relative to the
/// largest primal entry of `a`.
pub fn solve_linear_with<S: Scalar>(a: &Matrix<S>, b: &[S], threshold: f64) -> Result<Solution<S>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve_linear: {}x{} matrix with rhs of length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let scale = a.max_primal_abs();
    if n > 0 && scale == 0.0 {
        return Err(Error::SingularMatrix {
            index: 0,
            magnitude: 0.0,
        });
    }
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let mut min_pivot = f64::INFINITY;
    for col in 0..n {
        let (piv, mag) = (col..n)
            .map(|r| (r, m[(r, col)].primal().abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let rel = mag / scale;
        min_pivot = min_pivot.min(rel);
        if rel < threshold {
            return Err(Error::SingularMatrix {
                index: col,
                magnitude: rel,
            });
        }
        if piv != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            rhs.swap(col, piv);
        }
        let inv = m[(col, col)].recip();
        for r in col + 1..n {
            let factor = m[(r, col)] * inv;
            for j in col..n {
                let v = m[(col, j)];
                m[(r, j)] -= factor * v;
            }
            let v = rhs[col];
            rhs[r] -= factor * v;
        }
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for j in i + 1..n {
            acc -= m[(i, j)] * x[j];
        }
        x[i] = acc / m[(i, i)];
    }
    Ok(Solution {
        x,
        min_pivot: if n == 0 { f64::INFINITY } else { min_pivot },
    })
}

/// Seeds `point` along coordinate `dir`.
pub fn seed<S: Scalar>(point: &[S], dir: usize) -> Vec<Dual<S>> {
    point
        .iter()
        .enumerate()
        .map(|(i, &x)| if i == dir { Dual::variable(x) } else { Dual::constant(x) })
        .collect()
}

/// Value and Jacobian of `f` at `point`; entry `(i, j)` is `∂f_i/∂x_j`,
/// assembled from one forward pass per coordinate.
pub fn jacobian_at<S, F>(f: F, point: &[S]) -> Result<(Vec<S>, Matrix<S>)>
where
    S: Scalar,
    F: Fn(&[Dual<S>]) -> Result<Vec<Dual<S>>>,
{
    let m = point.len();
    let mut value = Vec::new();
    let mut jac: Option<Matrix<S>> = None;
    for j in 0..m {
        let out = f(&seed(point, j))?;
        let jm = jac.get_or_insert_with(|| Matrix::zeros(out.len(), m));
        if out.len() != jm.rows() {
            return Err(Error::DimensionMismatch(
                "map output length changed between passes".into(),
            ));
        }
        for (i, d) in out.iter().enumerate() {
            jm[(i, j)] = d.eps;
        }
        if j == 0 {
            value = out.iter().map(|d| d.re).collect();
        }
    }
    let jac = match jac {
        Some(j) => j,
        None => Matrix::zeros(0, 0),
    };
    Ok((value, jac))
}

/// Jacobian of a real map at a real point.
pub fn jacobian<F>(f: F, point: &[f64]) -> Result<Matrix<f64>>
where
    F: Fn(&[D1]) -> Result<Vec<D1>>,
{
    jacobian_at(f, point).map(|(_, j)| j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_solve() {
        let a = Matrix::<f64>::identity(2);
        assert_eq!(solve_linear(&a, &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn symplectic_block_solve() {
        let a = Matrix::from_rows(vec![vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let x = solve_linear(&a, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(x[0], 0.0);
        assert_relative_eq!(x[1], 1.0);
    }

    #[test]
    fn singular_matrix_reports_pivot() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        match solve_linear(&a, &[1.0, 1.0]) {
            Err(Error::SingularMatrix { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected singular matrix, got {other:?}"),
        }
    }

    #[test]
    fn dual_solve_matches_finite_differences() {
        // A(s) = A0 + s·A1, b(s) = b0 + s·b1; tangent of x(s) at s = 0.
        let a0 = [
            [4.0, 1.0, -0.5, 0.3],
            [0.2, 3.0, 0.7, -1.0],
            [-0.4, 0.5, 5.0, 0.9],
            [1.1, -0.6, 0.2, 2.5],
        ];
        let a1 = [
            [0.3, -0.2, 0.1, 0.0],
            [0.5, 0.1, -0.7, 0.2],
            [0.0, 0.4, 0.3, -0.1],
            [-0.2, 0.6, 0.0, 0.8],
        ];
        let b0 = [1.0, -2.0, 0.5, 3.0];
        let b1 = [0.1, 0.0, -0.3, 0.2];
        let build = |s: f64| {
            let a = Matrix::from_rows(
                (0..4)
                    .map(|i| (0..4).map(|j| a0[i][j] + s * a1[i][j]).collect())
                    .collect(),
            )
            .unwrap();
            let b: Vec<f64> = (0..4).map(|i| b0[i] + s * b1[i]).collect();
            solve_linear(&a, &b).unwrap()
        };
        let ad = Matrix::from_rows(
            (0..4)
                .map(|i| (0..4).map(|j| Dual::new(a0[i][j], a1[i][j])).collect())
                .collect(),
        )
        .unwrap();
        let bd: Vec<D1> = (0..4).map(|i| Dual::new(b0[i], b1[i])).collect();
        let x = solve_linear(&ad, &bd).unwrap();
        let h = 1e-6;
        let (xp, xm) = (build(h), build(-h));
        for i in 0..4 {
            let fd = (xp[i] - xm[i]) / (2.0 * h);
            assert!(
                (x[i].eps - fd).abs() <= 1e-6 * fd.abs().max(1e-3),
                "{i}: {} vs {fd}",
                x[i].eps
            );
        }
    }

    #[test]
    fn jacobian_product_sum() {
        let j = jacobian(|v| Ok(vec![v[0] * v[1], v[0] + v[1]]), &[2.0, 3.0]).unwrap();
        assert_eq!(j, Matrix::from_rows(vec![vec![3.0, 2.0], vec![1.0, 1.0]]).unwrap());
    }

    #[test]
    fn jacobian_of_linear_map_is_the_matrix() {
        let a = Matrix::from_rows(vec![vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0], vec![4.0, 0.0, -1.0]]).unwrap();
        let ad = a.clone();
        let j = jacobian(
            move |v| {
                Ok((0..3)
                    .map(|i| (0..3).fold(D1::zero(), |acc, k| acc + Dual::constant(ad[(i, k)]) * v[k]))
                    .collect())
            },
            &[0.3, -1.0, 2.0],
        )
        .unwrap();
        assert_eq!(j, a);
    }

    #[test]
    fn nested_duals_give_mixed_partials() {
        // f(x, y) = x² y ; ∂²f/∂x∂y = 2x.
        for &(x, y) in &[(0.5, 2.0), (-1.3, 0.7), (3.0, -4.0)] {
            let xs = Dual::new(Dual::constant(x), Dual::constant(1.0));
            let ys = Dual::constant(Dual::variable(y));
            let f: D2 = xs * xs * ys;
            assert_eq!(f.eps.eps, 2.0 * x);
        }
    }

    #[test]
    fn elementary_functions_chain_rule() {
        let x = D1::variable(0.7);
        let checks: [(D1, f64); 6] = [
            (x.exp(), 0.7f64.exp()),
            (x.ln(), 1.0 / 0.7),
            (x.sin(), 0.7f64.cos()),
            (x.cos(), -0.7f64.sin()),
            (x.sqrt(), 0.5 / 0.7f64.sqrt()),
            (x.powi(3), 3.0 * 0.49),
        ];
        for (v, d) in checks {
            assert_relative_eq!(v.eps, d, max_relative = 1e-14);
        }
        assert_relative_eq!(
            x.powf(D1::constant(2.5)).eps,
            2.5 * 0.7f64.powf(1.5),
            max_relative = 1e-14
        );
    }

    #[test]
    fn minor_matches_explicit_determinant() {
        let a = Matrix::from_rows(vec![
            vec![2.0, 0.0, 1.0, 3.0],
            vec![1.0, 1.0, 0.0, -1.0],
            vec![0.0, 2.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_relative_eq!(a.minor(&[0, 1], &[0, 3]), -2.0 - 3.0);
        // Cofactor expansion along the last row: −1·1 + 1·4.
        assert_relative_eq!(a.minor(&[0, 1, 2, 3], &[0, 1, 2, 3]), 3.0, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn well_conditioned() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
            (
                proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 4),
                proptest::collection::vec(-5.0f64..5.0, 4),
            )
                .prop_map(|(mut rows, b)| {
                    for (i, r) in rows.iter_mut().enumerate() {
                        r[i] += 6.0;
                    }
                    (rows, b)
                })
        }

        proptest! {
            #[test]
            fn solve_then_multiply_is_identity((rows, b) in well_conditioned()) {
                let a = Matrix::from_rows(rows).unwrap();
                let x = solve_linear(&a, &b).unwrap();
                let back = a.mul_vec(&x);
                for i in 0..4 {
                    prop_assert!((back[i] - b[i]).abs() <= 1e-12 * (1.0 + b[i].abs()));
                }
            }
        }
    }
}
