mod common;

use common::fixtures::*;
use lcskit::dynamics::*;
use lcskit::geometry::{residual, ScalarField, VectorField};
use lcskit::lcs::{cotangent_hamilton_equations, HamiltonianSystem};
use lcskit::Error;

#[test]
fn zero_field_gives_constant_trajectory() {
    let c = dissipative_chart();
    let tr = integrate(
        &VectorField::zero(&c),
        &[0.0, 1.0, 1.0, 1.0],
        (0.0, 1.0),
        &IntegratorConfig::rk4(0.1),
    )
    .unwrap();
    assert_eq!(tr.termination, Termination::Horizon);
    assert_eq!(tr.len(), 11);
    assert!(tr.states.iter().all(|x| x == &vec![0.0, 1.0, 1.0, 1.0]));
    let csv = tr.to_csv(&[]);
    assert!(csv.starts_with("t,x,y,w,z\n"));
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn inadmissible_start_is_an_error() {
    let c = dissipative_chart();
    let err = integrate(
        &VectorField::zero(&c),
        &[0.0, 1.0, 0.0, 1.0],
        (0.0, 1.0),
        &IntegratorConfig::default(),
    );
    assert!(matches!(err, Err(Error::InadmissibleStart(_))));
}

#[test]
fn dissipative_example_obeys_its_laws_along_the_flow() {
    let sys = dissipative_system();
    let tr = integrate_system(
        &sys,
        &[0.0, 1.0, 1.0, 1.0],
        (0.0, 2.0),
        &IntegratorConfig::rkf45(1e-10, 1e-10),
    )
    .unwrap();
    assert_eq!(tr.termination, Termination::Horizon);
    let w = ScalarField::parse(sys.chart(), "w").unwrap();
    let ratio = ScalarField::parse(sys.chart(), "w/(z + y/w)").unwrap();
    let series = monitor(&tr, &[("w", &w), ("ratio", &ratio)], &sys, Some(RATIO_THRESHOLD)).unwrap();
    assert!(series[0].max_dissipation() <= 1e-9);
    assert!(
        series[0].ratio_drift().unwrap() <= 1e-6,
        "{:?}",
        series[0].ratio_drift()
    );
    assert!(series[1].value_drift() <= 1e-6);
    // w is dissipated, not conserved: the conservation residual is |wθ(X_H)|.
    let xh = sys.field().unwrap();
    let theta_xh = xh.contract(sys.theta()).unwrap();
    for (x, c) in tr.states.iter().zip(&series[0].conservation) {
        let expected = (x[2] * theta_xh.at(x).unwrap()[0]).abs();
        assert!((c - expected).abs() <= 1e-12 && expected > 0.0);
    }
    let csv = tr.to_csv(&series);
    assert!(csv
        .lines()
        .next()
        .unwrap()
        .ends_with("w,w_conservation,w_dissipation,w_ratio,ratio,ratio_conservation,ratio_dissipation,ratio_ratio"));
}

#[test]
fn cotangent_trajectory_matches_closed_form_equations() {
    let s = cotangent_example_structure();
    let sys = HamiltonianSystem::new(&s, "exp(q2)", false).unwrap();
    let closed = cotangent_hamilton_equations(s.theta(), sys.hamiltonian()).unwrap();
    let xh = sys.field().unwrap();
    let tr = integrate_system(&sys, &[0.5, -0.3, 0.2, 0.7], (0.0, 1.0), &IntegratorConfig::rk4(0.05)).unwrap();
    assert_eq!(tr.len(), 21);
    for x in tr.states.iter().skip(1) {
        assert!(residual(&closed.at(x).unwrap(), &xh.at(x).unwrap()) <= 1e-8);
    }
}

#[test]
fn scaling_flow_matches_exponential() {
    let s = scaling_structure();
    let x = scaling_field(&s);
    let phi = flow_map(&x, 0.3, &IntegratorConfig::default()).unwrap();
    for p in scaling_samples(20).points() {
        let (a, b) = (0.3f64.exp(), (-0.15f64).exp());
        let exact = [a * p[0], a * p[1], b * p[2], b * p[3]];
        assert!(residual(&phi.at(p).unwrap(), &exact) <= 1e-8);
        let j = phi.jacobian(p).unwrap();
        for i in 0..4 {
            for k in 0..4 {
                let expected = if i != k {
                    0.0
                } else if i < 2 {
                    a
                } else {
                    b
                };
                assert!((j[(i, k)] - expected).abs() <= 1e-8);
            }
        }
    }
    let id = flow_map(&x, 0.0, &IntegratorConfig::default()).unwrap();
    assert_eq!(id.at(&[1.0, 1.0, 2.0, 1.0]).unwrap(), vec![1.0, 1.0, 2.0, 1.0]);
}

#[test]
fn flows_compose() {
    let sys = dissipative_system();
    let xh = sys.field().unwrap();
    let cfg = IntegratorConfig::default();
    let a = flow_map(&xh, 0.2, &cfg).unwrap();
    let b = flow_map(&xh, 0.3, &cfg).unwrap();
    let ab = flow_map(&xh, 0.5, &cfg).unwrap();
    let composed = a.compose(&b).unwrap();
    for p in dissipative_samples(20).points() {
        let (u, v) = (composed.at(p), ab.at(p));
        if let (Ok(u), Ok(v)) = (u, v) {
            assert!(residual(&u, &v) <= 1e-6);
        }
    }
}

#[test]
fn time_reversal_returns_to_start() {
    let sys = dissipative_system();
    let xh = sys.field().unwrap();
    let cfg = IntegratorConfig::rk4(0.01);
    let x0 = [0.1, 0.5, 1.2, -0.3];
    let fwd = integrate(&xh, &x0, (0.0, 0.5), &cfg).unwrap();
    let back = integrate(&xh, fwd.last(), (0.5, 0.0), &cfg).unwrap();
    assert!(residual(back.last(), &x0) <= 1e-9);
}

#[test]
fn autonomized_system_follows_reparametrized_flow() {
    // H = t·w gives X_H = t·X_w, so x(t) is the X_w flow at time t²/2.
    let base = dissipative_structure();
    let sys = HamiltonianSystem::new(&base, "t*w", true).unwrap();
    let tr = integrate_system(
        &sys,
        &[0.1, 0.5, 1.2, -0.3],
        (0.0, 2.0),
        &IntegratorConfig::rkf45(1e-12, 1e-12),
    )
    .unwrap();
    assert_eq!(tr.termination, Termination::Horizon);
    assert_eq!(tr.chart().dim(), 5);
    let xw = base
        .hamiltonian_vector_field(&ScalarField::parse(base.chart(), "w").unwrap())
        .unwrap();
    for (t, x) in tr.times.iter().zip(&tr.states) {
        assert!((x[4] - t).abs() <= 1e-12);
        let exact = flow_map(&xw, t * t / 2.0, &IntegratorConfig::rk4(0.5))
            .unwrap()
            .at(&[0.1, 0.5, 1.2, -0.3])
            .unwrap();
        assert!(residual(&x[..4], &exact) <= 1e-10);
    }
}

#[test]
fn trajectories_stop_short_of_exclusions() {
    let c = dissipative_chart();
    let toward = VectorField::parse(&c, &["0", "0", "-1", "0"]).unwrap();
    let tr = integrate(&toward, &[0.0, 0.0, 0.5, 0.0], (0.0, 1.0), &IntegratorConfig::rk4(0.1)).unwrap();
    assert_eq!(tr.termination, Termination::Inadmissible);
    assert!(tr.states.iter().all(|x| c.admissible(x)));
    let end = tr.last()[2];
    assert!(end >= c.margin() && end < c.margin() + 1e-9, "{end}");
    assert!(tr.times.windows(2).all(|w| w[1] > w[0]));

    let adaptive = integrate(&toward, &[0.0, 0.0, 0.5, 0.0], (0.0, 1.0), &IntegratorConfig::default()).unwrap();
    assert_eq!(adaptive.termination, Termination::Inadmissible);
    let phi = flow_map(&toward, 1.0, &IntegratorConfig::default()).unwrap();
    assert!(matches!(
        phi.at(&[0.0, 0.0, 0.5, 0.0]),
        Err(Error::TargetInadmissible(_))
    ));
}

#[test]
fn max_steps_reports_step_failure() {
    let c = dissipative_chart();
    let cfg = IntegratorConfig {
        max_steps: 3,
        ..IntegratorConfig::rk4(0.1)
    };
    let tr = integrate(&VectorField::zero(&c), &[0.0, 1.0, 1.0, 1.0], (0.0, 1.0), &cfg).unwrap();
    assert_eq!(tr.termination, Termination::StepFailure);
    assert_eq!(tr.len(), 4);
}

#[test]
fn exact_flows_hit_the_noise_floor() {
    // X_w has constant velocity along its flow: RK4 is exact at every step.
    let sys = dissipative_system();
    let xw = sys
        .hamiltonian_vector_field(&ScalarField::parse(sys.chart(), "w").unwrap())
        .unwrap();
    let samples = dissipative_samples(20);
    let omega = sys.omega();
    let out = convergence_order(0.5, |h| {
        let pulled = omega.pullback(&flow_map(&xw, 0.5, &IntegratorConfig::rk4(h))?)?;
        let mut worst: f64 = 0.0;
        for p in samples.points() {
            worst = worst.max(residual(&pulled.at(p)?, &omega.at(p)?));
        }
        Ok(worst)
    });
    assert!(matches!(out, Err(Error::NoiseFloor(_))), "{out:?}");
    let zero = VectorField::zero(sys.chart());
    let out = convergence_order(0.5, |h| {
        let tr = integrate(&zero, &[0.0, 1.0, 1.0, 1.0], (0.0, 1.0), &IntegratorConfig::rk4(h))?;
        Ok(residual(tr.last(), &[0.0, 1.0, 1.0, 1.0]))
    });
    assert!(matches!(out, Err(Error::NoiseFloor(_))));
}

#[test]
fn rk4_flow_of_hamiltonian_field_is_fourth_order() {
    let sys = dissipative_system();
    let xh = sys.field().unwrap();
    let p = [0.1, 0.5, 1.2, -0.3];
    let reference = flow_map(&xh, 1.0, &IntegratorConfig::rkf45(1e-14, 1e-14))
        .unwrap()
        .at(&p)
        .unwrap();
    let est = convergence_order(0.2, |h| {
        let q = flow_map(&xh, 1.0, &IntegratorConfig::rk4(h))?.at(&p)?;
        Ok(residual(&q, &reference))
    })
    .unwrap();
    assert!((est.order - 4.0).abs() <= 0.5, "{est:?}");
}

#[test]
fn drift_shrinks_with_tolerance() {
    let sys = dissipative_system();
    let ratio = ScalarField::parse(sys.chart(), "w/(z + y/w)").unwrap();
    let drift = |tol: f64| {
        let tr = integrate_system(
            &sys,
            &[0.0, 1.0, 1.0, 1.0],
            (0.0, 2.0),
            &IntegratorConfig::rkf45(tol, tol),
        )
        .unwrap();
        monitor(&tr, &[("r", &ratio)], &sys, None).unwrap()[0].value_drift()
    };
    let d: Vec<f64> = [1e-6, 1e-8, 1e-10].iter().map(|&t| drift(t)).collect();
    assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
}
