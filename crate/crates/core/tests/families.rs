use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpcurv_core::connection::curvature_via_relation;
use warpcurv_core::einstein::{einstein_deviation, TimeGrid};
use warpcurv_core::families::*;
use warpcurv_core::ode::SecondOrderOde;
use warpcurv_core::{Connection, FiberSpec, GeometryError, PointCoords, ProductManifoldSpec, ScalarExpr, TorsionField};

const UNIT: (f64, f64) = (0.0, 1.0);

fn e(s: &str) -> ScalarExpr {
    ScalarExpr::parse(s).unwrap()
}

fn eval(expr: &ScalarExpr, t: f64) -> f64 {
    expr.jet1("t", t).unwrap()[0]
}

fn assert_family_passes(fam: &SolutionFamily, constants: &[f64]) {
    let inst = fam.instantiate(constants, UNIT).unwrap();
    for r in family_residuals(&inst, FAMILY_GRID_POINTS, FAMILY_TOLERANCE).unwrap() {
        assert!(r.pass, "{} / {}: {} = {:e}", fam.id, fam.case, r.check, r.max_abs_residual);
    }
}

/// Draws constants until `n` admissible instances pass their residual check.
fn assert_random_instances_pass(fam: &SolutionFamily, seed: u64, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passed = 0;
    for _ in 0..500 {
        let cs: Vec<f64> = fam.free_constants.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
        if fam.instantiate(&cs, UNIT).is_ok() {
            assert_family_passes(fam, &cs);
            passed += 1;
            if passed == n {
                return;
            }
        }
    }
    panic!("{} / {}: only {passed} admissible draws", fam.id, fam.case);
}

/// GRW scalar curvature written directly in `f`, as an oracle for the
/// `v`/`w` reductions.
fn grw_scalar_oracle(l: f64, sf: f64, [f, d1, d2]: [f64; 3]) -> f64 {
    sf / (f * f) - 2.0 * l * d2 / f - l * (l - 1.0) * d1 * d1 / (f * f) + l + l * l * d1 / f
}

fn chart_curvature(spec: &ProductManifoldSpec, t: f64, fiber_point: &[f64]) -> warpcurv_core::CurvatureAtPoint {
    let mut x = vec![t];
    x.extend_from_slice(fiber_point);
    curvature_via_relation(&Connection::SemiSymmetric(TorsionField::time()), spec, &PointCoords(x)).unwrap()
}

// ------------------------------------------------------------ invariants --

#[test]
fn kasner_invariant_examples() {
    assert_eq!(kasner_invariants(&[1.0, 1.0, -1.0], &[1, 1, 1]).unwrap(), (1.0, 3.0));
    assert_eq!(kasner_invariants(&[1.0, -0.5], &[1, 2]).unwrap(), (0.0, 1.5));
    assert_eq!(kasner_invariants(&[0.0, 0.0], &[1, 2]).unwrap(), (0.0, 0.0));
    assert!(matches!(kasner_invariants(&[1.0], &[1, 2]), Err(GeometryError::LengthMismatch { expected: 2, got: 1 })));
}

#[test]
fn kasner_type_from_dims() {
    assert_eq!(KasnerType::from_dims(&[1, 2]).unwrap(), KasnerType::II);
    assert_eq!(KasnerType::from_dims(&[1, 1, 1]).unwrap(), KasnerType::III);
    assert!(matches!(KasnerType::from_dims(&[3]), Err(GeometryError::UnsupportedType(_))));
    let err = kasner_einstein_families(KasnerType::II, &[1.0, 1.0, 1.0], &[1, 1, 1], 0.0, &[0.0; 3]);
    assert!(matches!(err, Err(GeometryError::UnsupportedType(_))));
}

#[test]
fn kasner_spec_metric_matches_powers() {
    let k = KasnerSpec::new(vec![1.0, 2.0], vec![1, 2], e("exp(t)")).unwrap();
    let spec = k.to_spec(vec![FiberSpec::circle(), FiberSpec::torus(2)], 0.0, 2.0).unwrap();
    let g = spec.metric_diag::<f64>(&[1.0, 0.1, 0.2, 0.3]).unwrap();
    let e1 = 1f64.exp();
    for (a, b) in g.iter().zip([-1.0, e1.powi(2), e1.powi(4), e1.powi(4)]) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
}

// ------------------------------------------ Kasner equations vs oracle --

/// The time and fiber equations are components of `Ric̄ − λg` from the chart.
#[test]
fn kasner_einstein_equations_match_chart_ricci() {
    let phi = e("1 + 0.3*t + 0.2*t^2");
    let cases: Vec<(Vec<f64>, Vec<FiberSpec>, Vec<f64>)> = vec![
        (vec![1.0, 0.5], vec![FiberSpec::circle(), FiberSpec::hyperbolic(1.0)], vec![0.0, 1.0]),
        (vec![-0.7, 1.3], vec![FiberSpec::circle(), FiberSpec::sphere(1.0)], vec![0.0, -1.0]),
        (vec![1.0, 2.0, -0.4], vec![FiberSpec::circle(), FiberSpec::circle(), FiberSpec::circle()], vec![0.0; 3]),
    ];
    let lambda = 0.7;
    for (p, fibers, lambdas) in cases {
        let dims: Vec<usize> = fibers.iter().map(|f| f.dim()).collect();
        let k = KasnerSpec::new(p.clone(), dims.clone(), phi.clone()).unwrap();
        let spec = k.to_spec(fibers, 0.0, 1.0).unwrap();
        let fiber_point: Vec<f64> = if dims == [1, 2] { vec![0.3, 1.1, 0.4] } else { vec![0.3, 0.4, 0.5] };
        for t in [0.0, 0.35, 0.8] {
            let curv = chart_curvature(&spec, t, &fiber_point);
            let g = spec.metric_diag::<f64>(&[&[t][..], &fiber_point].concat()).unwrap();
            let reports = kasner_einstein_residuals(&k, lambda, &lambdas, &[t], 1.0).unwrap();
            assert_abs_diff_eq!(reports[0].max_abs_residual, (curv.ricci[(0, 0)] + lambda).abs(), epsilon = 1e-9);
            let mut idx = 1;
            for (i, &d) in dims.iter().enumerate() {
                let oracle = curv.ricci[(idx, idx)] / g[idx] - lambda;
                assert_abs_diff_eq!(reports[i + 1].max_abs_residual, oracle.abs(), epsilon = 1e-9);
                idx += d;
            }
        }
    }
}

#[test]
fn kasner_scalar_matches_chart_scalar() {
    let phi = e("exp(0.4*t) + 0.5*t");
    let cases: Vec<(Vec<f64>, Vec<FiberSpec>)> = vec![
        (vec![1.0, 0.5], vec![FiberSpec::circle(), FiberSpec::hyperbolic(1.0)]),
        (vec![0.6, -1.1], vec![FiberSpec::circle(), FiberSpec::sphere(2.0)]),
        (vec![1.0, 2.0, 3.0], vec![FiberSpec::circle(), FiberSpec::circle(), FiberSpec::circle()]),
    ];
    for (p, fibers) in cases {
        let dims: Vec<usize> = fibers.iter().map(|f| f.dim()).collect();
        let sf: Vec<f64> = fibers.iter().map(|f| f.scalar_curvature).collect();
        let k = KasnerSpec::new(p.clone(), dims.clone(), phi.clone()).unwrap();
        let spec = k.to_spec(fibers, 0.0, 1.0).unwrap();
        let fiber_point: Vec<f64> = if dims == [1, 2] { vec![0.3, 1.1, 0.4] } else { vec![0.3, 0.4, 0.5] };
        for t in [0.1, 0.9] {
            let oracle = chart_curvature(&spec, t, &fiber_point).scalar;
            let ours = kasner_scalar(&p, &dims, &sf, phi.jet1("t", t).unwrap()).unwrap();
            assert_abs_diff_eq!(ours, oracle, epsilon = 1e-9);
        }
    }
}

#[test]
fn kasner_residuals_reject_nonpositive_profile() {
    let k = KasnerSpec::new(vec![1.0, 0.5], vec![1, 2], e("t - 0.5")).unwrap();
    let err = kasner_einstein_residuals(&k, 0.0, &[0.0, 0.0], &[0.0, 1.0], 1e-10);
    assert!(matches!(err, Err(GeometryError::NonPositiveWarping { .. })));
}

// ------------------------------------------------------ GRW Einstein -----

#[test]
fn grw_einstein_examples() {
    let fams = grw_einstein_family(2, 0.0, 0.0).unwrap();
    assert_eq!(fams.len(), 1);
    let inst = fams[0].instantiate(&[1.5], UNIT).unwrap();
    assert_abs_diff_eq!(eval(&inst.profile_expr().unwrap(), 0.7), 1.5 * 0.7f64.exp(), epsilon = 1e-12);

    let fams = grw_einstein_family(2, 2.0, 1.0).unwrap();
    assert_eq!(fams.len(), 1);
    let inst = fams[0].instantiate(&[], UNIT).unwrap();
    assert_abs_diff_eq!(eval(&inst.profile_expr().unwrap(), 0.3), 0.5f64.sqrt(), epsilon = 1e-15);

    assert!(grw_einstein_family(2, 5.0, 1.0).unwrap().is_empty());
    assert!(grw_einstein_family(3, 3.0, -2.0).unwrap().is_empty());
    assert!(matches!(grw_einstein_family(1, 0.0, 0.0), Err(GeometryError::InvalidDimension(_))));
}

#[test]
fn grw_einstein_families_pass_residuals() {
    for (l, lambda, lf) in [(2, 0.0, 0.0), (3, 0.0, 0.0), (2, 2.0, 1.0), (4, 4.0, 3.0)] {
        for fam in grw_einstein_family(l, lambda, lf).unwrap() {
            assert_random_instances_pass(&fam, 11, 3);
        }
    }
}

/// Instantiated families are Einstein for the full semi-symmetric Ricci tensor.
#[test]
fn grw_einstein_families_end_to_end() {
    let conn = Connection::SemiSymmetric(TorsionField::time());
    let fam = &grw_einstein_family(2, 0.0, 0.0).unwrap()[0];
    let spec = fam.instantiate(&[0.8], UNIT).unwrap().to_spec(vec![FiberSpec::torus(2)]).unwrap();
    let pts = TimeGrid::chebyshev(&spec, 9).unwrap().points();
    assert!(einstein_deviation(&spec, &conn, 0.0, &pts, false, 1e-6).unwrap().pass);

    let fam = &grw_einstein_family(2, 2.0, 1.0).unwrap()[0];
    let spec = fam.instantiate(&[], UNIT).unwrap().to_spec(vec![FiberSpec::hyperbolic(1.0)]).unwrap();
    let pts = TimeGrid::chebyshev(&spec, 9).unwrap().points();
    assert!(einstein_deviation(&spec, &conn, 2.0, &pts, false, 1e-6).unwrap().pass);
}

#[test]
fn grw_einstein_scan_finds_no_near_solution_above_l() {
    let r = grw_einstein_scan(2, 5.0, 1.0, &ScanConfig::default()).unwrap();
    assert!(r.admissible > 100, "{r:?}");
    assert!(r.pass, "{r:?}");
    // A true family (c1 e^t) is found by the same scan.
    let r = grw_einstein_scan(2, 0.0, 0.0, &ScanConfig { threshold: 0.0, ..Default::default() }).unwrap();
    assert!(r.min_residual < 1e-12, "{r:?}");
}

// ------------------------------------------------------- GRW scalar ------

#[test]
fn grw_scalar_linear_plus_exponential() {
    let fams = grw_scalar_family(3, 3.0, 9.0).unwrap();
    assert_eq!(fams.len(), 1);
    let inst = fams[0].instantiate(&[1.0, 1.0], UNIT).unwrap();
    let Solved::Closed(v) = &inst.solved else { panic!() };
    for t in [0.0, 0.4, 1.0] {
        assert_abs_diff_eq!(eval(v, t), 1.0 - 2.0 * t + (1.5 * t).exp(), epsilon = 1e-12);
    }
    let r = ode_cross_check(&inst, 1000).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn grw_scalar_double_root_at_threshold() {
    let s = 75.0 / 16.0;
    assert_eq!(grw_scalar_threshold(3), s);
    let fam = &grw_scalar_family(3, s, 0.0).unwrap()[0];
    assert!(fam.case.contains("double root"), "{}", fam.case);
    let Solved::Closed(v) = fam.instantiate(&[1.0, 2.0], UNIT).unwrap().solved else { panic!() };
    for t in [0.2, 0.9] {
        assert_abs_diff_eq!(eval(&v, t), (1.0 + 2.0 * t) * (0.75 * t).exp(), epsilon = 1e-12);
    }
    // With a forcing term the additive constant S^F/(S̄ − 3) appears.
    let fam = &grw_scalar_family(3, s, 2.7).unwrap()[0];
    let Solved::Closed(v) = fam.instantiate(&[1.0, 0.0], UNIT).unwrap().solved else { panic!() };
    assert_abs_diff_eq!(eval(&v, 0.0), 1.0 + 2.7 / (s - 3.0), epsilon = 1e-12);
}

#[test]
fn grw_scalar_l2_threshold_double_root() {
    let s = grw_scalar_threshold(2);
    assert_abs_diff_eq!(s, 8.0 / 3.0, epsilon = 1e-15);
    let fam = &grw_scalar_family(2, s, 0.0).unwrap()[0];
    assert!(fam.case.contains("double root"));
    let (c1, c2) = (0.7, -0.3);
    let inst = fam.instantiate(&[c1, c2], UNIT).unwrap();
    let Solved::Closed(w) = &inst.solved else { panic!() };
    for k in 0..=32 {
        let t = k as f64 / 32.0;
        // Hand form of the double-root solution and its derivatives.
        let ex = (t / 2.0).exp();
        let (w0, w1, w2) = ((c1 + c2 * t) * ex, (c2 + 0.5 * (c1 + c2 * t)) * ex, (c2 + 0.25 * (c1 + c2 * t)) * ex);
        assert_abs_diff_eq!(eval(w, t), w0, epsilon = 1e-12);
        let residual = w2 - 1.0 * w1 + 0.75 * ((s - 2.0) / 2.0) * w0;
        assert!(residual.abs() < 1e-9);
        assert!(fam.ode.residual(w.jet1("t", t).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn grw_scalar_oscillatory_frequency() {
    // l = 3, S̄ = 6: roots 3/4 ± i·√(4·6/3 − 25/4)/2.
    let fam = &grw_scalar_family(3, 6.0, 0.0).unwrap()[0];
    assert!(fam.case.contains("complex"));
    let Solved::Closed(v) = fam.instantiate(&[1.0, 0.0], (0.0, 0.5)).unwrap().solved else { panic!() };
    let w = (8.0f64 - 6.25).sqrt() / 2.0;
    assert_abs_diff_eq!(eval(&v, 0.4), (0.3f64).exp() * (w * 0.4).cos(), epsilon = 1e-12);
    // At S̄ = 10 the frequency √(3S̄/4 − 25/4)/2 does not solve the scalar equation.
    let fam = &grw_scalar_family(3, 10.0, 0.0).unwrap()[0];
    let wrong = (0.75f64 * 10.0 - 6.25).sqrt() / 2.0;
    let bad = ScalarExpr::parse(&format!("exp(0.75*t)*cos({wrong}*t)")).unwrap();
    assert!(fam.ode.residual(bad.jet1("t", 0.4).unwrap()).abs() > 0.1);
}

#[test]
fn grw_scalar_families_match_f_form_scalar() {
    let cases = [(3, 3.0, 9.0), (3, 2.0, 0.0), (3, 75.0 / 16.0, 1.0), (3, 6.0, -2.0), (2, 1.0, 0.0), (2, 8.0 / 3.0, 0.0), (2, 5.0, 0.0), (4, 1.0, 0.0), (1, 0.5, 0.0)];
    for (l, s, sf) in cases {
        let fam = &grw_scalar_family(l, s, sf).unwrap()[0];
        assert!(fam.is_closed());
        assert_random_instances_pass(fam, 7 + l as u64, 3);
        let inst = (0..200)
            .map(|k| fam.instantiate(&[1.0 + 0.01 * k as f64, 0.1], UNIT))
            .find_map(|r| r.ok())
            .unwrap();
        let (_, jets) = inst.grid_jets(FAMILY_GRID_POINTS).unwrap();
        for j in jets {
            let f = fam.profile.jet(j);
            assert_abs_diff_eq!(grw_scalar_oracle(l as f64, sf, f), s, epsilon = 1e-9);
        }
    }
}

#[test]
fn grw_scalar_numeric_family() {
    let fam = &grw_scalar_family(2, 1.0, 2.0).unwrap()[0];
    assert!(!fam.is_closed());
    assert!(matches!(fam.ode, SecondOrderOde::PowerForced { .. }));
    let inst = fam.instantiate(&[1.0, 0.2], UNIT).unwrap();
    let reports = family_residuals(&inst, FAMILY_GRID_POINTS, FAMILY_TOLERANCE).unwrap();
    assert_eq!(reports.len(), 1);
    assert!(reports[0].pass, "{:?}", reports[0]);
    let (_, jets) = inst.grid_jets(FAMILY_GRID_POINTS).unwrap();
    for j in jets {
        assert_abs_diff_eq!(grw_scalar_oracle(2.0, 2.0, fam.profile.jet(j)), 1.0, epsilon = 1e-9);
    }
    assert!(ode_cross_check(&inst, 1000).is_err());
}

#[test]
fn grw_scalar_thresholds_are_sharp() {
    for l in [1, 2, 3, 4, 7] {
        let s = grw_scalar_threshold(l);
        assert!(grw_scalar_discriminant(l, s - 1e-6) > 0.0);
        assert!(grw_scalar_discriminant(l, s + 1e-6) < 0.0);
        let below = &grw_scalar_family(l, s - 1e-6, 0.0).unwrap()[0].case;
        let above = &grw_scalar_family(l, s + 1e-6, 0.0).unwrap()[0].case;
        assert!(below.contains("distinct real roots") && above.contains("complex roots"), "{below} / {above}");
    }
    assert_abs_diff_eq!(grw_scalar_discriminant(3, 1.0), 25.0 / 4.0 - 4.0 / 3.0, epsilon = 1e-14);
}

#[test]
fn instantiation_enforces_positivity() {
    let fam = &grw_scalar_family(3, 2.0, 0.0).unwrap()[0];
    assert!(matches!(fam.instantiate(&[1.0, -1.0], UNIT), Err(GeometryError::ConstraintViolated(_))));
    assert!(matches!(fam.instantiate(&[1.0], UNIT), Err(GeometryError::LengthMismatch { .. })));
    let fam = &grw_einstein_family(2, 0.0, 0.0).unwrap()[0];
    assert!(matches!(fam.instantiate(&[-1.0], UNIT), Err(GeometryError::ConstraintViolated(_))));
}

#[test]
fn ode_cross_check_behaviour() {
    let fam = &grw_scalar_family(2, 1.0, 0.0).unwrap()[0];
    let inst = fam.instantiate(&[1.0, 1.0], UNIT).unwrap();
    assert!(ode_cross_check(&inst, 1000).unwrap().max_abs_residual < 1e-10);
    let fam = &grw_einstein_family(2, 2.0, 1.0).unwrap()[0];
    let inst = fam.instantiate(&[], UNIT).unwrap();
    assert!(ode_cross_check(&inst, 1000).unwrap().max_abs_residual < 1e-12);
    // Far too few steps on a stiff-ish oscillation.
    let fam = &grw_scalar_family(3, 400.0, 0.0).unwrap()[0];
    let inst = fam.instantiate(&[1.0, 0.0], (0.0, 0.05)).unwrap();
    assert!(matches!(ode_cross_check(&inst, 1), Err(GeometryError::StepTooCoarse { .. })));
}

// -------------------------------------------------- Kasner Einstein ------

#[test]
fn kasner_type_ii_einstein_classification() {
    let f = kasner_einstein_families(KasnerType::II, &[1.5, 0.0], &[1, 2], 2.0, &[0.0, 2.0]).unwrap();
    assert_eq!(f.len(), 1);
    let f = kasner_einstein_families(KasnerType::II, &[0.5, 0.5], &[1, 2], 0.0, &[0.0, 0.0]).unwrap();
    assert_eq!(f.len(), 1);
    for (p, lambda, l2) in [([1.0, 0.0], -6.0, -9.0), ([1.0, -0.5], 0.0, 0.0), ([0.0, 1.0], 2.0, 2.0), ([1.0, 0.5], 5.0, 0.0)] {
        assert!(kasner_einstein_families(KasnerType::II, &p, &[1, 2], lambda, &[0.0, l2]).unwrap().is_empty(), "{p:?}");
    }
}

#[test]
fn kasner_einstein_families_pass_residuals_and_oracle() {
    let cases: Vec<(KasnerType, Vec<f64>, f64, Vec<f64>, Vec<FiberSpec>)> = vec![
        (KasnerType::II, vec![1.5, 0.0], 2.0, vec![0.0, 2.0], vec![FiberSpec::circle(), FiberSpec::hyperbolic(0.5f64.sqrt())]),
        (KasnerType::II, vec![0.5, 0.5], 0.0, vec![0.0, 0.0], vec![FiberSpec::circle(), FiberSpec::torus(2)]),
        (KasnerType::III, vec![-0.8; 3], 0.0, vec![0.0; 3], vec![FiberSpec::circle(), FiberSpec::circle(), FiberSpec::circle()]),
    ];
    let conn = Connection::SemiSymmetric(TorsionField::time());
    for (ty, p, lambda, lambdas, fibers) in cases {
        let fams = kasner_einstein_families(ty, &p, ty.dims(), lambda, &lambdas).unwrap();
        assert_eq!(fams.len(), 1);
        assert_random_instances_pass(&fams[0], 3, 3);
        let spec = fams[0].instantiate(&[0.9], UNIT).unwrap().to_spec(fibers).unwrap();
        let pts = TimeGrid::chebyshev(&spec, 9).unwrap().points();
        let dev = einstein_deviation(&spec, &conn, lambda, &pts, false, 1e-6).unwrap();
        assert!(dev.pass, "{dev:?}");
    }
}

/// Exponential profiles with unequal exponents and `ζ = 0` satisfy the time
/// equation but not the fiber equations.
#[test]
fn zeta_zero_exponential_is_not_einstein() {
    for (p, l) in [(vec![1.0, 1.0, -2.0], vec![1, 1, 1]), (vec![1.0, -0.5], vec![1, 2])] {
        let (zeta, eta) = kasner_invariants(&p, &l).unwrap();
        assert_eq!(zeta, 0.0);
        let phi = ScalarExpr::parse(&format!("exp({}*t)", (3.0 / eta).sqrt())).unwrap();
        let k = KasnerSpec::new(p.clone(), l.clone(), phi).unwrap();
        let grid: Vec<f64> = (0..33).map(|i| i as f64 / 32.0).collect();
        let r = kasner_einstein_residuals(&k, 0.0, &vec![0.0; l.len()], &grid, 1e-10).unwrap();
        assert!(r[0].pass);
        assert!(r[1..].iter().any(|x| x.max_abs_residual > 0.1), "{r:?}");
        let ty = KasnerType::from_dims(&l).unwrap();
        assert!(kasner_einstein_families(ty, &p, &l, 0.0, &vec![0.0; l.len()]).unwrap().is_empty());
    }
}

#[test]
fn kasner_einstein_scans_above_three() {
    let cfg = ScanConfig::default();
    let r = kasner_einstein_scan(&[1.0, 2.0, 3.0], &[1, 1, 1], 5.0, &[0.0; 3], &cfg).unwrap();
    assert!(r.admissible > 100 && r.pass, "{r:?}");
    let r = kasner_einstein_scan(&[1.0, 0.5], &[1, 2], 5.0, &[0.0, 0.0], &cfg).unwrap();
    assert!(r.admissible > 100 && r.pass, "{r:?}");
    assert!(kasner_einstein_families(KasnerType::III, &[1.0, 2.0, 3.0], &[1, 1, 1], 5.0, &[0.0; 3]).unwrap().is_empty());
    // The scan does find the exact equal-exponent family (λ = 0, ψ linear).
    let r = kasner_einstein_scan(&[0.5; 3], &[1, 1, 1], 0.0, &[0.0; 3], &ScanConfig { threshold: 0.0, ..cfg }).unwrap();
    assert!(r.min_residual < 1e-10, "{r:?}");
}

// ---------------------------------------------------- Kasner scalar ------

#[test]
fn kasner_scalar_type_iii_cases() {
    let fams = kasner_scalar_families(KasnerType::III, &[0.0; 3], &[1, 1, 1], 3.0, &[0.0; 3]).unwrap();
    assert_eq!(fams.len(), 1);
    assert!(kasner_scalar_families(KasnerType::III, &[0.0; 3], &[1, 1, 1], 2.0, &[0.0; 3]).unwrap().is_empty());

    // ζ = 0, η = 3, S̄ = 0: φ = c0 e^{±t}.
    let p = [1.0, -1.0, 0.0];
    assert_eq!(kasner_invariants(&p, &[1, 1, 1]).unwrap(), (0.0, 2.0));
    let p = [1.0, 0.5f64.sqrt() - 1.0, -(0.5f64.sqrt())];
    let (z, h) = kasner_invariants(&p, &[1, 1, 1]).unwrap();
    assert!(z.abs() < 1e-15);
    let p = [p[0], p[1], p[2] - z];
    let fams = kasner_scalar_families(KasnerType::III, &p, &[1, 1, 1], 0.0, &[0.0; 3]).unwrap();
    assert_eq!(fams.len(), 2);
    let k = (3.0 / h).sqrt();
    let Solved::Closed(phi) = fams[0].instantiate(&[2.0], UNIT).unwrap().solved else { panic!() };
    assert_abs_diff_eq!(eval(&phi, 0.5), 2.0 * (0.5 * k).exp(), epsilon = 1e-12);
    assert!(kasner_scalar_families(KasnerType::III, &p, &[1, 1, 1], 4.0, &[0.0; 3]).unwrap().is_empty());

    // ζ ≠ 0 threshold gives the double-root case.
    let p = [1.0, 1.0, -1.0];
    let s = kasner_scalar_threshold(1.0, 3.0);
    assert_abs_diff_eq!(s, 3.0 + 9.0 / 16.0, epsilon = 1e-15);
    let f = &kasner_scalar_families(KasnerType::III, &p, &[1, 1, 1], s, &[0.0; 3]).unwrap()[0];
    assert!(f.case.contains("double root"), "{}", f.case);
    assert_eq!(f.profile, ProfileMap::Power(0.5));
    assert!(kasner_scalar_discriminant(1.0, 3.0, s - 1e-6) > 0.0 && kasner_scalar_discriminant(1.0, 3.0, s + 1e-6) < 0.0);
}

#[test]
fn kasner_scalar_families_pass_residuals() {
    let cases: Vec<(KasnerType, Vec<f64>, f64, Vec<f64>)> = vec![
        (KasnerType::III, vec![0.0; 3], 3.0, vec![0.0; 3]),
        (KasnerType::III, vec![1.0, -1.0, 0.0], 1.0, vec![0.0; 3]),
        (KasnerType::III, vec![1.0, 1.0, -1.0], 0.0, vec![0.0; 3]),
        (KasnerType::III, vec![1.0, 1.0, -1.0], 3.5625, vec![0.0; 3]),
        (KasnerType::III, vec![1.0, 2.0, 3.0], 6.0, vec![0.0; 3]),
        (KasnerType::III, vec![1.0, 2.0, 3.0], 3.0, vec![0.0; 3]),
        (KasnerType::II, vec![1.0, 0.5], 2.0, vec![0.0, 0.0]),
        (KasnerType::II, vec![1.0, 1.0], 2.0, vec![0.0, 1.5]),
        (KasnerType::II, vec![-1.0, 1.0], 4.0, vec![0.0, 2.0]),
        (KasnerType::II, vec![1.0, 1.0], 3.0, vec![0.0, 2.0]),
        (KasnerType::II, vec![1.0, 0.0], 1.0, vec![0.0, 2.0]),
        (KasnerType::II, vec![0.0, 0.0], 5.0, vec![0.0, 2.0]),
    ];
    for (ty, p, s, sf) in cases {
        let fams = kasner_scalar_families(ty, &p, ty.dims(), s, &sf).unwrap();
        assert!(!fams.is_empty(), "{p:?} {s}");
        for f in &fams {
            assert!(f.is_closed(), "{}", f.case);
            assert_random_instances_pass(f, 21, 3);
        }
    }
}

#[test]
fn kasner_scalar_numeric_families() {
    // Nonlinear ψ equation.
    let f = &kasner_scalar_families(KasnerType::II, &[1.0, 0.5], &[1, 2], 2.0, &[0.0, 2.0]).unwrap()[0];
    assert!(!f.is_closed());
    let inst = f.instantiate(&[1.0, 0.3], UNIT).unwrap();
    for r in family_residuals(&inst, FAMILY_GRID_POINTS, FAMILY_TOLERANCE).unwrap() {
        assert!(r.pass, "{r:?}");
    }
    // ζ = 0 with a curved fiber: first-order equation integrated in second-order form.
    let fams = kasner_scalar_families(KasnerType::II, &[1.0, -0.5], &[1, 2], 1.0, &[0.0, 2.0]).unwrap();
    assert_eq!(fams.len(), 2);
    for f in &fams {
        let inst = f.instantiate(&[1.0], UNIT).unwrap();
        for r in family_residuals(&inst, FAMILY_GRID_POINTS, FAMILY_TOLERANCE).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }
    // η(φ'/φ)² = 2 c0 + 3 − 6 needs c0 ≥ 3/2.
    let fams = kasner_scalar_families(KasnerType::II, &[1.0, -0.5], &[1, 2], 6.0, &[0.0, 2.0]).unwrap();
    assert!(matches!(fams[0].instantiate(&[1.0], UNIT), Err(GeometryError::ConstraintViolated(_))));
    assert!(fams[0].instantiate(&[2.0], UNIT).is_ok());
}

#[test]
fn kasner_scalar_cross_check_against_rk4() {
    let f = &kasner_scalar_families(KasnerType::III, &[1.0, 1.0, -1.0], &[1, 1, 1], 0.0, &[0.0; 3]).unwrap()[0];
    assert!(f.case.contains("distinct real roots"));
    let inst = f.instantiate(&[1.0, 0.5], UNIT).unwrap();
    let r = ode_cross_check(&inst, 1000).unwrap();
    assert!(r.pass, "{r:?}");
    let c = &kasner_scalar_families(KasnerType::III, &[0.0; 3], &[1, 1, 1], 3.0, &[0.0; 3]).unwrap()[0];
    let r = ode_cross_check(&c.instantiate(&[1.3], UNIT).unwrap(), 1000).unwrap();
    assert!(r.max_abs_residual < 1e-12);
}

#[test]
fn type_iii_families_invariant_under_permutation() {
    let p = [1.0, 2.0, -0.5];
    let perms = [[0, 1, 2], [1, 0, 2], [2, 1, 0], [1, 2, 0]];
    let reference = kasner_scalar_families(KasnerType::III, &p, &[1, 1, 1], 2.0, &[0.0; 3]).unwrap();
    for perm in perms {
        let q: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        assert_eq!(kasner_invariants(&q, &[1, 1, 1]).unwrap(), kasner_invariants(&p, &[1, 1, 1]).unwrap());
        let fams = kasner_scalar_families(KasnerType::III, &q, &[1, 1, 1], 2.0, &[0.0; 3]).unwrap();
        assert_eq!(fams.len(), reference.len());
        for (a, b) in fams.iter().zip(&reference) {
            assert_eq!((&a.case, &a.ode, &a.form, &a.profile), (&b.case, &b.ode, &b.form, &b.profile));
        }
    }
}

#[test]
fn families_round_trip_through_json() {
    let f = &kasner_scalar_families(KasnerType::II, &[1.0, 0.5], &[1, 2], 2.0, &[0.0, 2.0]).unwrap()[0];
    let s = serde_json::to_string(f).unwrap();
    let back: SolutionFamily = serde_json::from_str(&s).unwrap();
    assert_eq!(&back, f);
}
