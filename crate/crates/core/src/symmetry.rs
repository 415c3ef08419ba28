//! Certificates for canonical and canonoid transformations, scaling
//! symmetries, dissipated quantities and Noether invariance.
//!
//! Every check evaluates its defining identities pointwise on a sample set
//! and reports residual statistics. "Hamiltonian" verdicts are local: a
//! 1-form is certified `d^θ`-closed, not `d^θ`-exact.

use crate::ad::{solve_linear_with, Matrix};
use crate::error::{Error, Result};
use crate::geometry::{magnitude, residual, ChartMap, KForm, SampleSet, ScalarField, VectorField};
use crate::lcs::{ExtendedStructure, HamiltonianSystem, LcsStructure};
use crate::report::{certify, dispersion, median, sample_values, CheckConfig, CheckReport, Identity};

/// Minimum `|H|` for a sample to enter the estimate of Λ.
pub const DEGREE_THRESHOLD: f64 = 0.1;
/// Smallest admissible `|1 − θ(X)|` for [`companion_scaling_form`].
pub const DENOMINATOR_THRESHOLD: f64 = 1e-6;

fn pick(values: Vec<f64>, idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| values[i]).collect()
}

/// `dω − θ∧ω` for an arbitrary closed `θ`.
fn twisted_d_with(theta: &KForm, w: &KForm) -> Result<KForm> {
    w.d()?.try_sub(&theta.wedge(w)?)
}

fn range_parameters(report: &mut CheckReport, name: &str, samples: &SampleSet, f: &ScalarField) {
    let values: Vec<f64> = sample_values(samples, |p| f.at(p)).into_iter().flatten().collect();
    if let (Some(lo), Some(hi)) = (
        values.iter().copied().reduce(f64::min),
        values.iter().copied().reduce(f64::max),
    ) {
        report.parameters.insert(format!("{name}_min"), lo);
        report.parameters.insert(format!("{name}_max"), hi);
    }
}

/// `Φ*Ω = Ω` and `Φ*θ = θ`.
pub fn check_canonical_map(
    map: &ChartMap,
    structure: &LcsStructure,
    samples: &SampleSet,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let pulled_omega = structure.omega().pullback(map)?;
    let pulled_theta = structure.theta().pullback(map)?;
    let mut report = certify(
        "canonical_map",
        samples,
        cfg,
        vec![
            Identity::new("pullback_omega", |p| {
                Ok(residual(&pulled_omega.at(p)?, &structure.omega().at(p)?))
            }),
            Identity::new("pullback_theta", |p| {
                Ok(residual(&pulled_theta.at(p)?, &structure.theta().at(p)?))
            }),
        ],
    );
    jacobian_pivot(&mut report, map, samples);
    Ok(report)
}

/// Smallest relative pivot of `DΦ` over the samples: an invertibility probe.
fn jacobian_pivot(report: &mut CheckReport, map: &ChartMap, samples: &SampleSet) {
    let pivots = sample_values(samples, |p| {
        let j: Matrix<f64> = map.jacobian(p)?;
        Ok(solve_linear_with(&j, &vec![0.0; j.rows()], 0.0).map_or(0.0, |s| s.min_pivot))
    });
    if let Some(min) = pivots.into_iter().flatten().reduce(f64::min) {
        report.parameters.insert("min_jacobian_pivot".into(), min);
    }
}

/// Conditions (ii)–(iv) of an extended canonical transformation of `ℝ × M`:
/// `F` preserves `t`, `F*θ̂ = θ̂` and `F*Ω̂ = Ω̂ + d^θ̂K_F ∧ dt`; also the
/// frozen-time consequence `(F|_t)*Ω = Ω`.
pub fn check_extended_canonical(
    map: &ChartMap,
    k_f: &ScalarField,
    ext: &ExtendedStructure,
    samples: &SampleSet,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    if !map.time_passthrough() {
        return Err(Error::ChartShapeMismatch(
            "extended canonical maps must be flagged as preserving time".into(),
        ));
    }
    let time = ext.time_index();
    let k_f = if k_f.chart().time().is_none() {
        ext.lift_scalar(k_f)?
    } else {
        k_f.clone()
    };
    let pulled_omega = ext.omega().pullback(map)?;
    let pulled_theta = ext.theta().pullback(map)?;
    let dt = KForm::parse(ext.chart(), 1, &[(&["t"][..], "1")])?;
    let expected = ext.omega().try_add(&ext.twisted_differential(&k_f)?.wedge(&dt)?)?;
    let frozen = ext.frozen_components(2);
    Ok(certify(
        "extended_canonical",
        samples,
        cfg,
        vec![
            Identity::new("time_preserved", |p| {
                let t = map.at(p)?[time];
                Ok(residual(&[t], &[p[time]]))
            }),
            Identity::new("pullback_theta", |p| {
                Ok(residual(&pulled_theta.at(p)?, &ext.theta().at(p)?))
            }),
            Identity::new("pullback_omega", |p| {
                Ok(residual(&pulled_omega.at(p)?, &expected.at(p)?))
            }),
            Identity::new("frozen_time", |p| {
                Ok(residual(
                    &pick(pulled_omega.at(p)?, &frozen),
                    &pick(ext.omega().at(p)?, &frozen),
                ))
            }),
        ],
    ))
}

/// Generator of a one-parameter group of canonical transformations:
/// `X⌟dt = 0`, `θ̂(X) = 0`, `X⌟Ω̂` locally Hamiltonian at frozen time and
/// `L_XΩ̂ = 0`. Fields on the base chart are lifted first.
pub fn check_canonical_generator(
    x: &VectorField,
    ext: &ExtendedStructure,
    samples: &SampleSet,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let x = if x.chart().time().is_none() {
        ext.lift_field(x)?
    } else {
        x.clone()
    };
    let time = ext.time_index();
    let theta_x = x.contract(ext.theta())?.to_scalar();
    let nu = x.contract(ext.omega())?;
    let closed = ext.twisted_d(&nu)?;
    let lie = crate::geometry::lie_derivative_form(&x, ext.omega())?;
    let frozen = ext.frozen_components(2);
    let mut report = certify(
        "canonical_generator",
        samples,
        cfg,
        vec![
            Identity::new("time_component", |p| Ok(magnitude(&[x.at(p)?[time]]))),
            Identity::new("theta_of_x", |p| Ok(magnitude(&[theta_x.at(p)?]))),
            Identity::new("locally_hamiltonian", |p| Ok(magnitude(&pick(closed.at(p)?, &frozen)))),
            Identity::new("lie_omega", |p| Ok(magnitude(&pick(lie.at(p)?, &frozen)))),
        ],
    );
    range_parameters(&mut report, "theta_of_x", samples, &theta_x);
    Ok(report)
}

/// `X_H⌟Ψ*Ω = d^{Ψ*θ}K` when `K` is given; otherwise the local existence
/// criterion `d^{Ψ*θ}(X_H⌟Ψ*Ω) = 0`.
pub fn check_canonoid_map(
    map: &ChartMap,
    system: &HamiltonianSystem,
    samples: &SampleSet,
    k: Option<&ScalarField>,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let pulled_omega = system.omega().pullback(map)?;
    let pulled_theta = system.theta().pullback(map)?;
    let nu = system.field()?.contract(&pulled_omega)?;
    let frozen1 = system.frozen_components(1);
    let frozen2 = system.frozen_components(2);
    let mut report = match k {
        Some(k) => {
            let k = system.lift_scalar(k)?;
            let rhs = k.d().try_sub(&pulled_theta.mul(&k)?)?;
            certify(
                "canonoid_map",
                samples,
                cfg,
                vec![Identity::new("defining_equation", |p| {
                    Ok(residual(&pick(nu.at(p)?, &frozen1), &pick(rhs.at(p)?, &frozen1)))
                })],
            )
        }
        None => {
            let closed = twisted_d_with(&pulled_theta, &nu)?;
            let mut r = certify(
                "canonoid_map",
                samples,
                cfg,
                vec![Identity::new("locally_hamiltonian", |p| {
                    Ok(magnitude(&pick(closed.at(p)?, &frozen2)))
                })],
            );
            r.notes
                .push("no K given: verdict certifies a locally canonoid map".into());
            r
        }
    };
    jacobian_pivot(&mut report, map, samples);
    Ok(report)
}

/// Per-point least-squares `c` with `a ≈ c·b`, or `None` where `b` vanishes.
fn ratio_fit(a: &[f64], b: &[f64]) -> Option<f64> {
    let bb: f64 = b.iter().map(|v| v * v).sum();
    (bb > 1e-24).then(|| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / bb)
}

/// `[X, X_H]` is locally Hamiltonian: `d^θ([X, X_H]⌟Ω) = 0`. Reports the
/// best-fit `c` in `[X, X_H] ≈ c·X_H` as a diagnostic.
pub fn check_canonoid_generator(
    x: &VectorField,
    system: &HamiltonianSystem,
    samples: &SampleSet,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let x = system.lift_field(x)?;
    let xh = system.field()?;
    let y = x.bracket(&xh)?;
    let closed = system.twisted_d(&y.contract(system.omega())?)?;
    let frozen = system.frozen_components(2);
    let fits: Vec<f64> = sample_values(samples, |p| Ok(ratio_fit(&y.at(p)?, &xh.at(p)?)))
        .into_iter()
        .flatten()
        .flatten()
        .collect();
    let c = median(&fits);
    let mut identities = vec![Identity::new("locally_hamiltonian", |p| {
        Ok(magnitude(&pick(closed.at(p)?, &frozen)))
    })];
    if let Some(c) = c {
        let (y, xh) = (&y, &xh);
        identities.push(Identity::diagnostic("proportional_to_dynamics", move |p| {
            let target: Vec<f64> = xh.at(p)?.iter().map(|v| c * v).collect();
            Ok(residual(&y.at(p)?, &target))
        }));
    }
    let mut report = certify("canonoid_generator", samples, cfg, identities);
    if let Some(c) = c {
        report.parameters.insert("proportionality".into(), c);
    }
    report
        .notes
        .push("verdict certifies that [X, X_H] is locally Hamiltonian".into());
    Ok(report)
}

/// Scaling symmetry of degree `(Λ, β)`: `L_XΩ = βΩ`, `L_Xθ = 0`, `L_XH = ΛH`,
/// with the consequence `[X, X_H] = (Λ − β)X_H`.
///
/// Λ̂ is the median of `L_XH / H` over samples with `|H| > 0.1`; β̂ the median
/// of the per-point least-squares fit of `L_XΩ ≈ βΩ`. Residuals are taken at
/// `expected` when given, otherwise at the estimates.
pub fn check_scaling_symmetry(
    x: &VectorField,
    system: &HamiltonianSystem,
    samples: &SampleSet,
    expected: Option<(f64, f64)>,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let x = system.lift_field(x)?;
    let h = system.hamiltonian();
    let xh_h = x.apply(h)?;
    let lie_omega = crate::geometry::lie_derivative_form(&x, system.omega())?;
    let lie_theta = crate::geometry::lie_derivative_form(&x, system.theta())?;
    let frozen2 = system.frozen_components(2);

    let ratios: Vec<f64> = sample_values(samples, |p| {
        let hv = h.at(p)?;
        (hv.abs() > DEGREE_THRESHOLD)
            .then(|| xh_h.at(p).map(|v| v / hv))
            .transpose()
    })
    .into_iter()
    .flatten()
    .flatten()
    .collect();
    let required = cfg.min_samples.min(samples.len()).max(1);
    if ratios.len() < required {
        return Err(Error::IndeterminateDegree {
            usable: ratios.len(),
            required,
        });
    }
    let betas: Vec<f64> = sample_values(samples, |p| Ok(ratio_fit(&lie_omega.at(p)?, &system.omega().at(p)?)))
        .into_iter()
        .flatten()
        .flatten()
        .collect();
    let lambda_hat = median(&ratios).unwrap_or(f64::NAN);
    let beta_hat = median(&betas).unwrap_or(f64::NAN);
    let (lambda, beta) = expected.unwrap_or((lambda_hat, beta_hat));

    let xh = system.field()?;
    let rescaled = x.bracket(&xh)?;
    let mut report = certify(
        "scaling_symmetry",
        samples,
        cfg,
        vec![
            Identity::new("lie_omega", |p| {
                let target: Vec<f64> = system.omega().at(p)?.iter().map(|v| beta * v).collect();
                Ok(residual(&pick(lie_omega.at(p)?, &frozen2), &pick(target, &frozen2)))
            }),
            Identity::new("lie_theta", |p| Ok(magnitude(&lie_theta.at(p)?))),
            Identity::new("lie_hamiltonian", |p| {
                Ok(residual(&[xh_h.at(p)?], &[lambda * h.at(p)?]))
            }),
            Identity::new("rescaled_dynamics", |p| {
                let target: Vec<f64> = xh.at(p)?.iter().map(|v| (lambda - beta) * v).collect();
                Ok(residual(&rescaled.at(p)?, &target))
            }),
        ],
    );
    let params = &mut report.parameters;
    params.insert("lambda".into(), lambda_hat);
    params.insert("beta".into(), beta_hat);
    params.insert("lambda_dispersion".into(), dispersion(&ratios).unwrap_or(f64::NAN));
    params.insert("beta_dispersion".into(), dispersion(&betas).unwrap_or(f64::NAN));
    if let Some((l, b)) = expected {
        params.insert("lambda_expected".into(), l);
        params.insert("beta_expected".into(), b);
    }
    Ok(report)
}

/// `X/β`: a symmetry of degree `(Λ, β)` becomes one of degree `(Λ/β, 1)`.
/// The inverse direction is `rescale_symmetry(Y, 1/β)`.
pub fn rescale_symmetry(x: &VectorField, beta: f64) -> Result<VectorField> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::ZeroBeta);
    }
    Ok(x.scale(1.0 / beta))
}

/// The 1-form relating two degree-Λ scaling symmetries `X`, `X′`:
/// `α = X′⌟Ω − r·X⌟Ω` with `r = (1 − θ(X′))/(1 − θ(X))`. Certifies
/// `d^θα = 0` and `X_H⌟α = (rΛ − Λ′ + θ(X′) − rθ(X))·H`.
pub fn companion_scaling_form(
    x: &VectorField,
    x_prime: &VectorField,
    system: &HamiltonianSystem,
    samples: &SampleSet,
    cfg: &CheckConfig,
) -> Result<(KForm, CheckReport)> {
    let x = system.lift_field(x)?;
    let x_prime = system.lift_field(x_prime)?;
    let first = check_scaling_symmetry(&x, system, samples, None, cfg)?;
    let second = check_scaling_symmetry(&x_prime, system, samples, None, cfg)?;
    let one = ScalarField::constant(system.chart(), 1.0);
    let theta_x = x.contract(system.theta())?.to_scalar();
    let theta_xp = x_prime.contract(system.theta())?.to_scalar();
    let denominator = one.try_sub(&theta_x)?;
    for v in sample_values(samples, |p| denominator.at(p)).into_iter().flatten() {
        if v.abs() < DENOMINATOR_THRESHOLD {
            return Err(Error::DenominatorNearZero { value: v });
        }
    }
    let r = one.try_sub(&theta_xp)?.try_div(&denominator)?;
    let alpha = x_prime
        .contract(system.omega())?
        .try_sub(&x.contract(system.omega())?.mul(&r)?)?;

    let mut notes = Vec::new();
    let mut degree = |report: &CheckReport, label: &str| {
        let lambda = report.parameter("lambda").unwrap_or(f64::NAN);
        let beta = report.parameter("beta").unwrap_or(f64::NAN);
        if !report.passed() || (beta - 1.0).abs() > cfg.tolerance.max(1e-9) {
            notes.push(format!("{label} is not a degree-Λ scaling symmetry (β̂ = {beta})"));
        }
        lambda
    };
    let lambda = degree(&first, "X");
    let lambda_prime = degree(&second, "X′");

    let closed = system.twisted_d(&alpha)?;
    let contraction = system.field()?.contract(&alpha)?.to_scalar();
    let h = system.hamiltonian();
    let frozen = system.frozen_components(2);
    let mut report = certify(
        "companion_scaling_form",
        samples,
        cfg,
        vec![
            Identity::new("twisted_closed", |p| Ok(magnitude(&pick(closed.at(p)?, &frozen)))),
            Identity::new("contraction", |p| {
                let (rv, tx, txp) = (r.at(p)?, theta_x.at(p)?, theta_xp.at(p)?);
                let expected = (rv * lambda - lambda_prime + txp - rv * tx) * h.at(p)?;
                Ok(residual(&[contraction.at(p)?], &[expected]))
            }),
        ],
    );
    report.parameters.insert("lambda".into(), lambda);
    report.parameters.insert("lambda_prime".into(), lambda_prime);
    if !notes.is_empty() {
        report.notes.extend(notes);
        report.verdict = crate::report::Verdict::Fail;
    }
    Ok((alpha, report))
}

/// `{H, f} = 0`, i.e. `X_H(f) + ∂f/∂t = fθ(X_H)`. Also reports `θ(X_f)`.
pub fn check_dissipated(
    f: &ScalarField,
    system: &HamiltonianSystem,
    samples: &SampleSet,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let f = system.lift_scalar(f)?;
    let xh = system.field()?;
    let rate = xh.apply(&f)?.try_add(&system.time_derivative(&f)?)?;
    let law = f.try_mul(&xh.contract(system.theta())?.to_scalar())?;
    let theta_xf = system
        .hamiltonian_vector_field(&f)?
        .contract(system.theta())?
        .to_scalar();
    let mut report = certify(
        "dissipated",
        samples,
        cfg,
        vec![
            Identity::new("dissipation", |p| Ok(residual(&[rate.at(p)?], &[law.at(p)?]))),
            Identity::diagnostic("theta_of_generator", |p| Ok(magnitude(&[theta_xf.at(p)?]))),
        ],
    );
    range_parameters(&mut report, "theta_of_generator", samples, &theta_xf);
    Ok(report)
}

/// `{f, H} + fθ(X_H) + ∂f/∂t = 0`, i.e. `X_H(f) + ∂f/∂t = 0`.
pub fn check_constant_of_motion(
    f: &ScalarField,
    system: &HamiltonianSystem,
    samples: &SampleSet,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let f = system.lift_scalar(f)?;
    let rate = system.field()?.apply(&f)?.try_add(&system.time_derivative(&f)?)?;
    Ok(certify(
        "constant_of_motion",
        samples,
        cfg,
        vec![Identity::new("conservation", |p| Ok(magnitude(&[rate.at(p)?])))],
    ))
}

/// A dissipated `f` whose field generates canonical invariance
/// transformations: `θ(X_f) = 0`, `L_{X_f}Ω = 0` and `X_f(H) = 0`.
pub fn check_noether_invariance(
    f: &ScalarField,
    system: &HamiltonianSystem,
    samples: &SampleSet,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let f = system.lift_scalar(f)?;
    let xh = system.field()?;
    let rate = xh.apply(&f)?.try_add(&system.time_derivative(&f)?)?;
    let law = f.try_mul(&xh.contract(system.theta())?.to_scalar())?;
    let xf = system.hamiltonian_vector_field(&f)?;
    let theta_xf = xf.contract(system.theta())?.to_scalar();
    let lie = crate::geometry::lie_derivative_form(&xf, system.omega())?;
    let invariance = xf.apply(system.hamiltonian())?;
    let frozen = system.frozen_components(2);
    let mut report = certify(
        "noether_invariance",
        samples,
        cfg,
        vec![
            Identity::new("dissipation", |p| Ok(residual(&[rate.at(p)?], &[law.at(p)?]))),
            Identity::new("theta_of_generator", |p| Ok(magnitude(&[theta_xf.at(p)?]))),
            Identity::new("lie_omega", |p| Ok(magnitude(&pick(lie.at(p)?, &frozen)))),
            Identity::new("invariance", |p| Ok(magnitude(&[invariance.at(p)?]))),
        ],
    );
    range_parameters(&mut report, "theta_of_generator", samples, &theta_xf);
    Ok(report)
}
