//! Charts, fields and exterior calculus on a single coordinate patch.

pub mod chart;
pub mod field;
pub mod forms;
pub mod multi_index;

pub use chart::{Chart, SampleSet, SampleSpec, DEFAULT_MARGIN, DEFAULT_SAMPLES, DEFAULT_SEED};
pub use field::{Field, FieldRef, Node, Tower};
pub use forms::{
    exterior_derivative, interior_product, lie_bracket, lie_derivative_form, pullback_form, wedge, ChartMap, KForm,
    ScalarField, VectorField,
};

/// Hybrid absolute/relative distance between two tensors:
/// `max_i |a_i − b_i| / (1 + max(|a_i|, |b_i|))`.
pub fn residual(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "residual of tensors of different sizes");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs().max(y.abs())))
        .fold(0.0, f64::max)
}

/// [`residual`] against zero.
pub fn magnitude(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs() / (1.0 + x.abs())).fold(0.0, f64::max)
}
