#![allow(dead_code)]

pub mod fixtures;

use std::sync::Arc;

use lcskit::geometry::{Chart, KForm, ScalarField, VectorField};

pub const X4: [&str; 4] = ["x0", "x1", "x2", "x3"];

pub fn chart4() -> Arc<Chart> {
    Arc::new(Chart::new(&X4).unwrap())
}

/// Smooth test function built from seven coefficients.
pub fn poly(c: &[f64]) -> String {
    format!(
        "{} + {}*x0*x1 + {}*x2^2 + {}*sin(x3 + x0) + {}*x1*x2*x3 + {}*exp(0.3*x2) + {}*x0^3",
        c[0], c[1], c[2], c[3], c[4], c[5], c[6]
    )
    .replace("+ -", "- ")
}

pub fn scalar(chart: &Arc<Chart>, c: &[f64]) -> ScalarField {
    ScalarField::parse(chart, &rename(chart, &poly(c))).unwrap()
}

/// Rewrites `x0..x3` to the chart's own coordinate names.
pub fn rename(chart: &Arc<Chart>, text: &str) -> String {
    let mut out = text.to_string();
    for (i, name) in chart.names().iter().enumerate().take(4) {
        out = out.replace(&format!("x{i}"), name);
    }
    out
}

pub fn vector(chart: &Arc<Chart>, c: &[f64]) -> VectorField {
    let comps: Vec<String> = (0..chart.dim()).map(|i| poly(&rotate(c, i))).collect();
    VectorField::parse(chart, &comps).unwrap()
}

/// Random `k`-form with one smooth coefficient per multi-index.
pub fn form(chart: &Arc<Chart>, k: usize, c: &[f64]) -> KForm {
    let m = chart.dim();
    let idx = lcskit::geometry::multi_index::combinations(m, k);
    let terms: Vec<(Vec<usize>, lcskit::expr::Expression)> = idx
        .into_iter()
        .enumerate()
        .map(|(n, i)| (i, chart.parse(&poly(&rotate(c, n + 3))).unwrap()))
        .collect();
    KForm::from_indexed(chart, k, terms).unwrap()
}

fn rotate(c: &[f64], by: usize) -> Vec<f64> {
    (0..c.len())
        .map(|i| c[(i + by) % c.len()] * if (i + by).is_multiple_of(3) { -1.0 } else { 1.0 })
        .collect()
}

/// `ω(v_1, …, v_k) = Σ_I ω_I det(v_j^{I_a})`, the alternating multilinear map.
pub fn apply_form(coeffs: &[f64], m: usize, k: usize, vs: &[Vec<f64>]) -> f64 {
    let idx = lcskit::geometry::multi_index::combinations(m, k);
    idx.iter()
        .zip(coeffs)
        .map(|(i, c)| {
            let mat: Vec<Vec<f64>> = i.iter().map(|&a| vs.iter().map(|v| v[a]).collect()).collect();
            c * det(&mat)
        })
        .sum()
}

pub fn det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    (0..n)
        .map(|c| {
            let minor: Vec<Vec<f64>> = a[1..]
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|&(j, _)| j != c)
                        .map(|(_, v)| *v)
                        .collect()
                })
                .collect();
            let s = if c % 2 == 0 { 1.0 } else { -1.0 };
            s * a[0][c] * det(&minor)
        })
        .sum()
}

/// All permutations of `0..n` with their signs.
pub fn permutations(n: usize) -> Vec<(Vec<usize>, f64)> {
    if n == 0 {
        return vec![(vec![], 1.0)];
    }
    let mut out = Vec::new();
    for (p, s) in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            let moved = p.len() - pos;
            out.push((q, if moved % 2 == 0 { s } else { -s }));
        }
    }
    out
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).product::<usize>() as f64
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}
