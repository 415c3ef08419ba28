//! The worked examples used across the test suites.

use std::sync::Arc;

use lcskit::geometry::{Chart, SampleSet, SampleSpec, VectorField};
use lcskit::lcs::{HamiltonianSystem, LcsStructure};

/// `(q1, q2, p1, p2)`, `p1 > 0`, `q1, q2 ≠ 0`;
/// `Ω = (1/p1)(dq1∧dp1 + dq2∧dp2)`, `θ = −dp1/p1`.
pub fn scaling_chart() -> Arc<Chart> {
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

pub fn scaling_structure() -> LcsStructure {
    LcsStructure::parse(
        &scaling_chart(),
        &[("q1", "p1", "1/p1"), ("q2", "p2", "1/p1")],
        &[("p1", "-1/p1")],
    )
    .unwrap()
}

pub fn scaling_system() -> HamiltonianSystem {
    HamiltonianSystem::new(&scaling_structure(), "(p1^2 + p2^2)/2 - 1/q1 - 1/q2", false).unwrap()
}

pub fn scaling_field(s: &LcsStructure) -> VectorField {
    VectorField::parse(s.chart(), &["q1", "q2", "-p1/2", "-p2/2"]).unwrap()
}

pub fn scaling_samples(n: usize) -> SampleSet {
    SampleSet::new(
        &scaling_chart(),
        &SampleSpec::halton(n, 42, vec![(-2.0, 2.0), (-2.0, 2.0), (0.2, 3.0), (-2.0, 2.0)]),
    )
    .unwrap()
}

/// `(x, y, w, z)`, `w ≠ 0`; `Ω = e^x(dx∧dy + dw∧dz)`, `θ = dx`.
pub fn dissipative_chart() -> Arc<Chart> {
    Arc::new(Chart::new(&["x", "y", "w", "z"]).unwrap().with_exclusion("w").unwrap())
}

pub fn dissipative_structure() -> LcsStructure {
    LcsStructure::parse(
        &dissipative_chart(),
        &[("x", "y", "exp(x)"), ("w", "z", "exp(x)")],
        &[("x", "1")],
    )
    .unwrap()
}

pub fn dissipative_system() -> HamiltonianSystem {
    HamiltonianSystem::new(&dissipative_structure(), "z + y/w", false).unwrap()
}

pub fn dissipative_samples(n: usize) -> SampleSet {
    SampleSet::new(
        &dissipative_chart(),
        &SampleSpec::halton(n, 42, vec![(-1.0, 1.0), (-2.0, 2.0), (0.2, 2.0), (-2.0, 2.0)]),
    )
    .unwrap()
}

/// `(q1, q2, p1, p2)`; `Ω = dp1∧dq1 + dp2∧dq2 − p2 q1 dq1∧dq2`, `θ = q1 dq1`.
pub fn cotangent_chart() -> Arc<Chart> {
    Arc::new(Chart::new(&["q1", "q2", "p1", "p2"]).unwrap())
}

pub fn cotangent_example_structure() -> LcsStructure {
    LcsStructure::parse(
        &cotangent_chart(),
        &[("p1", "q1", "1"), ("p2", "q2", "1"), ("q1", "q2", "-p2*q1")],
        &[("q1", "q1")],
    )
    .unwrap()
}

pub fn cotangent_samples(n: usize) -> SampleSet {
    SampleSet::new(&cotangent_chart(), &SampleSpec::halton(n, 42, vec![(-2.0, 2.0); 4])).unwrap()
}
