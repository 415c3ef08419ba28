mod common;

use std::sync::Arc;

use approx::assert_relative_eq;
use common::fixtures::*;
use common::*;
use lcskit::geometry::{residual, Chart, KForm, SampleSet, SampleSpec, ScalarField, VectorField};
use lcskit::lcs::{cotangent_hamilton_equations, cotangent_structure, HamiltonianSystem, LcsStructure};
use lcskit::report::{CheckConfig, Verdict};
use lcskit::Error;
use proptest::prelude::*;

#[test]
fn worked_examples_validate() {
    let cfg = CheckConfig::default();
    let r = scaling_structure().validate(&scaling_samples(1000), &cfg);
    assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    assert!(r.max_residual() <= 1e-9);
    let r = cotangent_example_structure().validate(&cotangent_samples(1000), &cfg);
    assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    assert!(r.parameter("min_pivot").unwrap() > 0.0);
    let r = dissipative_structure().validate(&dissipative_samples(1000), &cfg);
    assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
}

#[test]
fn surfaces_validate_without_three_forms() {
    let c = Arc::new(Chart::new(&["q", "p"]).unwrap());
    let samples = SampleSet::new(&c, &SampleSpec::halton(50, 42, vec![(-1.0, 1.0); 2])).unwrap();
    // Any closed θ works on a surface, including a nonzero one.
    let s = LcsStructure::parse(&c, &[("q", "p", "exp(q)")], &[("q", "1")]).unwrap();
    let r = s.validate(&samples, &CheckConfig::default());
    assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    let s = LcsStructure::parse(&c, &[("q", "p", "1")], &[("q", "p")]).unwrap();
    let r = s.validate(&samples, &CheckConfig::default());
    assert_eq!(r.verdict, Verdict::Fail);
    assert!(r.identity("d_theta").unwrap().max > 0.4);
}

#[test]
fn mismatched_lee_form_fails_validation() {
    let c = cotangent_chart();
    let s = LcsStructure::parse(&c, &[("q1", "p1", "1"), ("q2", "p2", "1")], &[("q1", "q1")]).unwrap();
    let samples = cotangent_samples(100);
    let r = s.validate(&samples, &CheckConfig::default());
    assert_eq!(r.verdict, Verdict::Fail);
    assert!(r.identity("d_theta").unwrap().max < 1e-15);
    // Oracle: dΩ = 0 while θ∧Ω = q1 dq1∧dq2∧dp2 has a single nonzero coefficient.
    let tw = s.theta().wedge(s.omega()).unwrap();
    for p in samples.points().iter().take(10) {
        assert_relative_eq!(max_abs(&tw.at(p).unwrap()), p[0].abs(), max_relative = 1e-14);
    }
    let worst = r.identity("d_omega_minus_theta_wedge_omega").unwrap().max;
    assert!(worst > 0.3, "{worst}");
}

#[test]
fn broken_lee_form_fails_with_dtheta() {
    let s = LcsStructure::parse(
        &scaling_chart(),
        &[("q1", "p1", "1/p1"), ("q2", "p2", "1/p1")],
        &[("q1", "p1")],
    )
    .unwrap();
    let r = s.validate(&scaling_samples(200), &CheckConfig::default());
    assert_eq!(r.verdict, Verdict::Fail);
    assert!(r.identity("d_theta").unwrap().max >= 1e-3);
}

#[test]
fn degenerate_omega_is_a_failed_verdict() {
    let c = cotangent_chart();
    let s = LcsStructure::parse(&c, &[("q1", "p1", "1")], &[]).unwrap();
    let r = s.validate(&cotangent_samples(30), &CheckConfig::default());
    assert_eq!(r.verdict, Verdict::Fail);
    assert_eq!(r.identity("nondegeneracy").unwrap().failures, 30);
}

#[test]
fn too_few_samples_is_indeterminate() {
    let r = scaling_structure().validate(&scaling_samples(10), &CheckConfig::default());
    assert_eq!(r.verdict, Verdict::Indeterminate);
}

#[test]
fn twisted_differential_at_worked_point() {
    let sys = dissipative_system();
    let dh = sys.structure().twisted_differential(sys.hamiltonian()).unwrap();
    assert_eq!(dh.at(&[0.0, 1.0, 1.0, 1.0]).unwrap(), vec![-2.0, 1.0, -1.0, 1.0]);
    let zero = ScalarField::constant(sys.chart(), 0.0);
    let d0 = sys.structure().twisted_differential(&zero).unwrap();
    assert_eq!(d0.at(&[0.3, 1.0, 2.0, 1.0]).unwrap(), vec![0.0; 4]);
}

#[test]
fn hamiltonian_field_matches_closed_form() {
    let sys = dissipative_system();
    let c = sys.chart().clone();
    let xh = sys.field().unwrap();
    let xf = sys
        .hamiltonian_vector_field(&ScalarField::parse(&c, "w").unwrap())
        .unwrap();
    let xh_closed = VectorField::parse(&c, &["exp(-x)/w", "exp(-x)*(z + y/w)", "exp(-x)", "exp(-x)*y/w^2"]).unwrap();
    let xf_closed = VectorField::parse(&c, &["0", "exp(-x)*w", "0", "-exp(-x)"]).unwrap();
    let theta = sys.structure().theta();
    let theta_xh = xh.contract(theta).unwrap();
    let theta_xf = xf.contract(theta).unwrap();
    assert_eq!(xh.at(&[0.0, 1.0, 1.0, 1.0]).unwrap(), vec![1.0, 2.0, 1.0, 1.0]);
    for p in dissipative_samples(100).points() {
        let (a, b) = (xh.at(p).unwrap(), xh_closed.at(p).unwrap());
        assert!(max_abs(&a.iter().zip(&b).map(|(u, v)| u - v).collect::<Vec<_>>()) <= 1e-10);
        let (a, b) = (xf.at(p).unwrap(), xf_closed.at(p).unwrap());
        assert!(max_abs(&a.iter().zip(&b).map(|(u, v)| u - v).collect::<Vec<_>>()) <= 1e-10);
        assert!(theta_xf.at(p).unwrap()[0].abs() <= 1e-12);
        assert!((theta_xh.at(p).unwrap()[0] - (-p[0]).exp() / p[2]).abs() <= 1e-12);
    }
}

#[test]
fn zero_hamiltonian_has_zero_field() {
    let s = scaling_structure();
    let x = s
        .hamiltonian_vector_field(&ScalarField::constant(s.chart(), 0.0))
        .unwrap();
    assert_eq!(x.at(&[1.0, 1.0, 2.0, 1.0]).unwrap(), vec![0.0; 4]);
}

#[test]
fn sharp_inverts_flat() {
    let s = cotangent_example_structure();
    assert_eq!(s.sharp_at(&[0.5, 1.0, -1.0, 2.0], &[0.0; 4]).unwrap(), vec![0.0; 4]);
    for (i, p) in cotangent_samples(50).points().iter().enumerate() {
        let alpha: Vec<f64> = (0..4).map(|k| ((i * 7 + k * 3) as f64).sin()).collect();
        let v = s.sharp_at(p, &alpha).unwrap();
        assert!(residual(&s.flat_at(p, &v).unwrap(), &alpha) <= 1e-10);
    }
}

#[test]
fn sharp_at_worked_point() {
    let s = dissipative_structure();
    let v = s.sharp_at(&[0.0, 1.0, 1.0, 1.0], &[-2.0, 1.0, -1.0, 1.0]).unwrap();
    assert!(residual(&v, &[1.0, 2.0, 1.0, 1.0]) < 1e-15);
}

#[test]
fn twisted_differential_squares_to_zero_on_functions() {
    let s = cotangent_example_structure();
    for k in 0..5 {
        let f = scalar(s.chart(), &[0.2 * k as f64, 1.0, -0.5, 0.3, 0.8, -0.1, 0.4]);
        let dd = s.twisted_d(&s.twisted_differential(&f).unwrap()).unwrap();
        for p in cotangent_samples(20).points() {
            assert!(max_abs(&dd.at(p).unwrap()) <= 1e-9);
        }
    }
}

#[test]
fn cotangent_equations_reduce_without_lee_form() {
    let c = cotangent_chart();
    let theta = KForm::zero(&c, 1).unwrap();
    let h = ScalarField::parse(&c, "p1^2/2 + q1*p2 + sin(q2)").unwrap();
    let x = cotangent_hamilton_equations(&theta, &h).unwrap();
    let p = [0.3, -0.4, 1.2, 0.7];
    // q̇ = −∂H/∂p, ṗ = ∂H/∂q.
    let expected = [-1.2, -0.3, 0.7, (-0.4f64).cos()];
    assert!(residual(&x.at(&p).unwrap(), &expected) < 1e-15);
}

#[test]
fn cotangent_equations_match_generic_solve_on_example() {
    let s = cotangent_example_structure();
    let built = cotangent_structure(s.theta()).unwrap();
    let h = ScalarField::parse(s.chart(), "exp(q2)").unwrap();
    let closed = cotangent_hamilton_equations(s.theta(), &h).unwrap();
    let generic = s.hamiltonian_vector_field(&h).unwrap();
    for p in cotangent_samples(100).points() {
        assert!(residual(&built.omega().at(p).unwrap(), &s.omega().at(p).unwrap()) < 1e-15);
        assert!(residual(&closed.at(p).unwrap(), &generic.at(p).unwrap()) <= 1e-10);
    }
}

#[test]
fn cotangent_equations_one_degree_of_freedom() {
    let c = Arc::new(Chart::new(&["q1", "p1"]).unwrap());
    let theta = KForm::parse(&c, 1, &[(&["q1"][..], "q1")]).unwrap();
    let h = ScalarField::parse(&c, "p1").unwrap();
    let closed = cotangent_hamilton_equations(&theta, &h).unwrap();
    let generic = cotangent_structure(&theta)
        .unwrap()
        .hamiltonian_vector_field(&h)
        .unwrap();
    for p in [[0.5, 1.0], [-1.2, 0.3], [2.0, -0.7]] {
        let v = closed.at(&p).unwrap();
        // q̇ = −1, ṗ = −Hθ1 − p1θ1 + θ1p1 = −p1 q1.
        assert!(residual(&v, &[-1.0, -p[0] * p[1]]) < 1e-15);
        assert!(residual(&v, &generic.at(&p).unwrap()) <= 1e-10);
    }
}

#[test]
fn cotangent_equations_reject_odd_charts() {
    let c = Arc::new(Chart::new(&["a", "b", "c"]).unwrap());
    let theta = KForm::zero(&c, 1).unwrap();
    let h = ScalarField::parse(&c, "a").unwrap();
    assert!(matches!(
        cotangent_hamilton_equations(&theta, &h),
        Err(Error::ChartShapeMismatch(_))
    ));
}

#[test]
fn flat_of_hamiltonian_field_is_twisted_differential() {
    for (sys, samples) in [
        (dissipative_system(), dissipative_samples(200)),
        (scaling_system(), scaling_samples(200)),
    ] {
        let lhs = sys.field().unwrap().contract(sys.omega()).unwrap();
        let rhs = sys.twisted_differential(sys.hamiltonian()).unwrap();
        for p in samples.points() {
            assert!(residual(&lhs.at(p).unwrap(), &rhs.at(p).unwrap()) <= 1e-10);
        }
    }
}

#[test]
fn hamiltonian_fields_rescale_omega_by_theta() {
    // L_{X_f}Ω = θ(X_f)Ω for arbitrary f, on each structure.
    let cases = [
        (scaling_structure(), scaling_samples(40)),
        (dissipative_structure(), dissipative_samples(40)),
        (cotangent_example_structure(), cotangent_samples(40)),
    ];
    for (s, samples) in cases {
        for k in 0..5 {
            let c: Vec<f64> = (0..7).map(|i| ((k * 7 + i) as f64 * 0.7).sin()).collect();
            let f = scalar(s.chart(), &c);
            let xf = s.hamiltonian_vector_field(&f).unwrap();
            let lhs = lcskit::geometry::lie_derivative_form(&xf, s.omega()).unwrap();
            let rhs = s.omega().mul(&xf.contract(s.theta()).unwrap().to_scalar()).unwrap();
            for p in samples.points() {
                let r = residual(&lhs.at(p).unwrap(), &rhs.at(p).unwrap());
                assert!(r <= 1e-8, "{r}");
            }
        }
    }
}

#[test]
fn bracket_of_hamiltonian_with_w_vanishes() {
    let sys = dissipative_system();
    let w = ScalarField::parse(sys.chart(), "w").unwrap();
    let b = sys.jacobi_bracket(sys.hamiltonian(), &w).unwrap();
    for p in dissipative_samples(1000).points() {
        assert!(b.at(p).unwrap().abs() <= 1e-12);
    }
}

#[test]
fn bracket_formulas_agree() {
    let s = scaling_structure();
    let q1 = ScalarField::parse(s.chart(), "q1").unwrap();
    let p1 = ScalarField::parse(s.chart(), "p1").unwrap();
    let at = [1.0, 1.0, 2.0, 1.0];
    let a = s.jacobi_bracket(&q1, &p1).unwrap().at(&at).unwrap();
    let b = s.jacobi_bracket_by_derivation(&q1, &p1).unwrap().at(&at).unwrap();
    // By hand: X_{p1}⌟Ω = dp1 + dp1 = 2dp1, so X_{p1} = 2p1 ∂q1 and
    // X_{p1}(q1) − q1 θ(X_{p1}) = 2p1 = 4.
    assert_relative_eq!(a, 4.0, max_relative = 1e-12);
    assert!((a - b).abs() <= 1e-10);
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 7)
}

fn cubic(c: &[f64]) -> String {
    format!(
        "{} + {}*q1 + {}*p2*q2 + {}*p1^2 + {}*q1*q2*p1 + {}*p2^3 + {}*q2",
        c[0], c[1], c[2], c[3], c[4], c[5], c[6]
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bracket_is_antisymmetric(a in coeffs(), b in coeffs(), i in 0usize..200) {
        let s = cotangent_example_structure();
        let f = ScalarField::parse(s.chart(), &cubic(&a)).unwrap();
        let g = ScalarField::parse(s.chart(), &cubic(&b)).unwrap();
        let p = &cotangent_samples(200).points()[i].clone();
        let fg = s.jacobi_bracket(&f, &g).unwrap().at(p).unwrap();
        let gf = s.jacobi_bracket(&g, &f).unwrap().at(p).unwrap();
        prop_assert!((fg + gf).abs() / (1.0 + fg.abs()) <= 1e-9);
        let ff = s.jacobi_bracket(&f, &f).unwrap().at(p).unwrap();
        prop_assert!(ff.abs() <= 1e-9 * (1.0 + fg.abs()));
        let alt = s.jacobi_bracket_by_derivation(&f, &g).unwrap().at(p).unwrap();
        prop_assert!((fg - alt).abs() / (1.0 + fg.abs()) <= 1e-10);
    }

    #[test]
    fn bracket_satisfies_jacobi_identity(a in coeffs(), b in coeffs(), c in coeffs(), i in 0usize..200) {
        let s = cotangent_example_structure();
        let parse = |c: &[f64]| ScalarField::parse(s.chart(), &cubic(c)).unwrap();
        let (f, g, h) = (parse(&a), parse(&b), parse(&c));
        let br = |u: &ScalarField, v: &ScalarField| s.jacobi_bracket(u, v).unwrap();
        let p = &cotangent_samples(200).points()[i].clone();
        let terms = [
            br(&f, &br(&g, &h)).at(p).unwrap(),
            br(&g, &br(&h, &f)).at(p).unwrap(),
            br(&h, &br(&f, &g)).at(p).unwrap(),
        ];
        let scale = 1.0 + terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        prop_assert!(terms.iter().sum::<f64>().abs() / scale <= 1e-6, "{terms:?}");
    }
}

#[test]
fn dissipated_times_conserved_is_dissipated() {
    // f = w is dissipated; g = w/H is conserved where H ≠ 0.
    let sys = dissipative_system();
    let c = sys.chart();
    let xh = sys.field().unwrap();
    let theta_xh = xh.contract(sys.theta()).unwrap().to_scalar();
    let f = ScalarField::parse(c, "w").unwrap();
    let g = ScalarField::parse(c, "w/(z + y/w)").unwrap();
    let fg = &f * &g;
    let law = xh.apply(&fg).unwrap().try_sub(&theta_xh.try_mul(&fg).unwrap()).unwrap();
    let conserved = xh.apply(&g).unwrap();
    for p in dissipative_samples(300).points() {
        let h = sys.hamiltonian().at(p).unwrap();
        if h.abs() > 0.1 {
            assert!(law.at(p).unwrap().abs() / (1.0 + fg.at(p).unwrap().abs()) <= 1e-9);
            assert!(conserved.at(p).unwrap().abs() <= 1e-9 * (1.0 + g.at(p).unwrap().abs()));
        }
    }
}

#[test]
fn extension_keeps_autonomous_fields() {
    let sys = dissipative_system();
    let ext = sys.structure().extend();
    let lifted = ext.lift_scalar(sys.hamiltonian()).unwrap();
    let xe = ext.hamiltonian_vector_field(&lifted).unwrap();
    let xb = sys.field().unwrap();
    for (i, p) in dissipative_samples(50).points().iter().enumerate() {
        let mut q = p.clone();
        q.push(i as f64 * 0.37 - 3.0);
        let v = xe.at(&q).unwrap();
        assert_eq!(v[4], 0.0);
        assert!(residual(&v[..4], &xb.at(p).unwrap()) <= 1e-15);
    }
    // Ω̂ has no dt components and does not depend on t.
    let frozen = ext.frozen_components(2);
    let q = [0.1, 0.2, 0.7, -0.4, 5.0];
    let om = ext.omega().at(&q).unwrap();
    for (n, v) in om.iter().enumerate() {
        if !frozen.contains(&n) {
            assert_eq!(*v, 0.0);
        }
    }
    let q2 = [0.1, 0.2, 0.7, -0.4, -2.0];
    assert_eq!(om, ext.omega().at(&q2).unwrap());
}

#[test]
fn time_dependent_field_is_frozen_time_solve() {
    let base = dissipative_structure();
    let sys = HamiltonianSystem::new(&base, "t*w", true).unwrap();
    let xh = sys.field().unwrap();
    let xw = base
        .hamiltonian_vector_field(&ScalarField::parse(base.chart(), "w").unwrap())
        .unwrap();
    for p in dissipative_samples(50).points() {
        let mut q = p.clone();
        q.push(2.0);
        let v = xh.at(&q).unwrap();
        let expected: Vec<f64> = xw.at(p).unwrap().iter().map(|c| 2.0 * c).collect();
        assert!(residual(&v[..4], &expected) <= 1e-12);
        assert_eq!(v[4], 0.0);
    }
    let auto = sys.dynamics().unwrap().at(&[0.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
    assert_eq!(auto[4], 1.0);
}

#[test]
fn time_derivative_of_hamiltonian_field_is_field_of_time_derivative() {
    let base = dissipative_structure();
    let ext = base.extend();
    let g = ext.parse_scalar("t*w").unwrap();
    let xg = ext.hamiltonian_vector_field(&g).unwrap();
    let lhs = ext.time_vector().bracket(&xg).unwrap();
    let rhs = ext.hamiltonian_vector_field(&g.partial("t").unwrap()).unwrap();
    let samples = SampleSet::new(
        ext.chart(),
        &SampleSpec::halton(
            200,
            42,
            vec![(-1.0, 1.0), (-2.0, 2.0), (0.2, 2.0), (-2.0, 2.0), (-3.0, 3.0)],
        ),
    )
    .unwrap();
    for p in samples.points() {
        assert!(residual(&lhs.at(p).unwrap(), &rhs.at(p).unwrap()) <= 1e-9);
    }
}

#[test]
fn structure_rejects_bad_shapes() {
    let c = Arc::new(Chart::new(&["a", "b", "c"]).unwrap());
    let o = KForm::zero(&c, 2).unwrap();
    let t = KForm::zero(&c, 1).unwrap();
    assert!(matches!(LcsStructure::new(o, t), Err(Error::ChartShapeMismatch(_))));
    let s = scaling_structure();
    assert!(LcsStructure::new(s.theta().clone(), s.omega().clone()).is_err());
}
