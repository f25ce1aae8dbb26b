use nalgebra::{DMatrix, DVector};
use warpcurv_core::connection::curvature_via_relation;
use warpcurv_core::einstein::{
    chebyshev_grid, constant_scalar_separation_check, einstein_deviation, grw_einstein_residuals, multiwarped_scalar,
    pseudo_einstein_residuals, TimeGrid, DEFAULT_GRID_POINTS,
};
use warpcurv_core::{
    Connection, FiberGeometry, FiberSpec, GeometryError, ProductManifoldSpec, ScalarExpr, TorsionField,
};

fn e(s: &str) -> ScalarExpr {
    ScalarExpr::parse(s).unwrap()
}

fn grw(fiber: FiberSpec, b: &str) -> ProductManifoldSpec {
    ProductManifoldSpec::warped_over_interval(vec![fiber], vec![e(b)], 0.0, 1.0).unwrap()
}

fn grid(spec: &ProductManifoldSpec) -> TimeGrid {
    TimeGrid::chebyshev(spec, DEFAULT_GRID_POINTS).unwrap()
}

/// `max |Ric − λg|` from the chart oracle.
fn oracle_deviation(spec: &ProductManifoldSpec, conn: &Connection, lambda: f64, g: &TimeGrid, symmetrize: bool) -> f64 {
    g.points()
        .iter()
        .map(|p| {
            let mut ric = curvature_via_relation(conn, spec, p).unwrap().ricci;
            if symmetrize {
                ric = (&ric + ric.transpose()) * 0.5;
            }
            let metric = DMatrix::from_diagonal(&DVector::from_vec(spec.metric_diag::<f64>(&p.0).unwrap()));
            (ric - metric * lambda).amax()
        })
        .fold(0.0, f64::max)
}

#[test]
fn chebyshev_grid_is_interior_and_sorted() {
    let g = chebyshev_grid(0.0, 1.0, 17);
    assert_eq!(g.len(), 17);
    assert!(g.windows(2).all(|w| w[0] < w[1]));
    assert!(g[0] > 0.0 && g[16] < 1.0);
    assert!((g[8] - 0.5).abs() < 1e-15);
}

#[test]
fn exponential_flat_torus_is_einstein_with_zero_constant() {
    let s = grw(FiberSpec::torus(2), "3*exp(t)");
    let r = grw_einstein_residuals(&s, 0.0, &grid(&s), 1e-8).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(oracle_deviation(&s, &Connection::SemiSymmetric(TorsionField::time()), 0.0, &grid(&s), false) < 1e-6);
}

#[test]
fn constant_warping_over_unit_hyperbolic_plane_is_einstein() {
    // Ric^F = +g_F here, so b = √(λ_F/l) with λ = l = 2
    let s = grw(FiberSpec::hyperbolic(1.0), "sqrt(0.5)");
    let r = grw_einstein_residuals(&s, 2.0, &grid(&s), 1e-8).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(oracle_deviation(&s, &Connection::SemiSymmetric(TorsionField::time()), 2.0, &grid(&s), false) < 1e-6);
}

#[test]
fn constant_warping_over_unit_sphere_is_not_einstein_in_this_convention() {
    // Ric^{S²} = −g under tr(Z ↦ R(X,Z)Y); the fiber equation then reads −1/b² = λ − 0
    let s = grw(FiberSpec::sphere(1.0), "sqrt(0.5)");
    let r = grw_einstein_residuals(&s, 2.0, &grid(&s), 1e-8).unwrap();
    assert!(!r.pass);
    assert!((r.residuals[1].max_abs_residual - 2.0).abs() < 1e-12);
    assert!(oracle_deviation(&s, &Connection::SemiSymmetric(TorsionField::time()), 2.0, &grid(&s), false) > 1.0);
}

#[test]
fn quadratic_warping_fails_time_condition() {
    let s = ProductManifoldSpec::warped_over_interval(vec![FiberSpec::torus(2)], vec![e("t*t + 1")], -1.0, 1.0).unwrap();
    let g = TimeGrid::new(vec![0.0, 1.0], vec![0.3, 0.4]);
    let r = grw_einstein_residuals(&s, 0.0, &g, 1e-8).unwrap();
    assert!(!r.pass);
    // Σ l (1 − 2/(t²+1)) is −2 at t = 0 and vanishes at t = 1
    assert!((r.residuals[0].max_abs_residual - 2.0).abs() < 1e-12);
    let at_one = grw_einstein_residuals(&s, 0.0, &TimeGrid::new(vec![1.0], vec![0.3, 0.4]), 1e-8).unwrap();
    assert!(at_one.residuals[0].max_abs_residual < 1e-12);
}

#[test]
fn undeclared_fiber_is_rejected() {
    let s = grw(FiberSpec::torus(2).declared_not_einstein(), "exp(t)");
    let err = grw_einstein_residuals(&s, 0.0, &grid(&s), 1e-8).unwrap_err();
    assert_eq!(err, GeometryError::FiberNotEinstein(0));
}

#[test]
fn residual_verdict_matches_oracle_in_both_directions() {
    let cases = [
        (FiberSpec::torus(2), "exp(t)", 0.0),
        (FiberSpec::torus(2), "exp(t)", 1.0),
        (FiberSpec::hyperbolic(1.0), "sqrt(0.5)", 2.0),
        (FiberSpec::hyperbolic(1.0), "sqrt(0.5)", 1.5),
        (FiberSpec::torus(3), "exp(t)", 0.0),
        (FiberSpec::sphere(1.0), "1 + t", 0.0),
        (FiberSpec::torus(2), "2", 2.0),
    ];
    for (f, b, lambda) in cases {
        let s = grw(f, b);
        let g = grid(&s);
        let theory = grw_einstein_residuals(&s, lambda, &g, 1e-8).unwrap().pass;
        let oracle = oracle_deviation(&s, &Connection::SemiSymmetric(TorsionField::time()), lambda, &g, false) < 1e-6;
        assert_eq!(theory, oracle, "b = {b}, λ = {lambda}");
    }
}

#[test]
fn two_fibers_use_total_dimension_in_fiber_equation() {
    // b_1 = e^t and b_2 = e^{2t} over T² × S¹: the fiber equations are
    // consistent with the oracle only with the (n̄−1) b_i b_i' term
    let s = ProductManifoldSpec::warped_over_interval(
        vec![FiberSpec::torus(2), FiberSpec::with_coords(FiberGeometry::Circle { radius: 1.0 }, vec!["z".into()])],
        vec![e("exp(t)"), e("exp(2*t)")],
        0.0,
        1.0,
    )
    .unwrap();
    let g = grid(&s);
    let conn = Connection::SemiSymmetric(TorsionField::time());
    for lambda in [-3.0, 0.0, 1.0] {
        let r = grw_einstein_residuals(&s, lambda, &g, 1e-8).unwrap();
        let dev = einstein_deviation(&s, &conn, lambda, &g.points(), false, 1e-8).unwrap();
        assert_eq!(r.pass, dev.pass);
    }
    // pointwise: each residual is Ric − λg on the matching diagonal entry, scaled
    let p = &g.points()[5];
    let lambda = 0.7;
    let ric = curvature_via_relation(&conn, &s, p).unwrap().ricci;
    let gd = s.metric_diag::<f64>(&p.0).unwrap();
    let single = TimeGrid::new(vec![p.0[0]], g.fiber_point.clone());
    let r = grw_einstein_residuals(&s, lambda, &single, 1e-8).unwrap();
    assert!((r.residuals[1].max_abs_residual - (ric[(1, 1)] - lambda * gd[1]).abs()).abs() < 1e-9);
    assert!((r.residuals[2].max_abs_residual - (ric[(3, 3)] - lambda * gd[3]).abs()).abs() < 1e-9);
}

fn circle_torus() -> ProductManifoldSpec {
    ProductManifoldSpec::warped_over_interval(
        vec![FiberSpec::with_coords(FiberGeometry::Circle { radius: 1.0 }, vec!["s".into()]), FiberSpec::torus(2)],
        vec![e("1"), e("1")],
        0.0,
        1.0,
    )
    .unwrap()
}

#[test]
fn pseudo_einstein_needs_three_dimensions() {
    let s = grw(FiberSpec::circle(), "exp(t)");
    let f = TorsionField::on_fiber(0, vec![e("1")]);
    assert_eq!(pseudo_einstein_residuals(&s, &f, 0.0, &grid(&s), 1e-8).unwrap_err(), GeometryError::DimensionTooSmall(2));
}

#[test]
fn pseudo_einstein_time_condition_for_exponential_warping() {
    let s = grw(FiberSpec::torus(2), "exp(t)");
    let f = TorsionField::on_fiber(0, vec![e("0"), e("0")]);
    let r = pseudo_einstein_residuals(&s, &f, -2.0, &grid(&s), 1e-8).unwrap();
    assert!(r.residuals[0].pass, "{r:?}");
}

#[test]
fn zero_field_reduces_to_einstein_conditions_without_field_terms() {
    let s = grw(FiberSpec::hyperbolic(1.0), "2");
    let f = TorsionField::on_fiber(0, vec![e("0"), e("0")]);
    // Ric = Ric^F = g_F = g/4
    let r = pseudo_einstein_residuals(&s, &f, 0.25, &grid(&s), 1e-8).unwrap();
    assert!(!r.residuals[0].pass);
    assert!(r.residuals[1].pass);
    let r0 = pseudo_einstein_residuals(&s, &f, 0.0, &grid(&s), 1e-8).unwrap();
    assert!(r0.residuals[0].pass && !r0.residuals[1].pass);
}

#[test]
fn rotation_field_on_torus_matches_symmetrized_oracle() {
    let s = circle_torus();
    let f = TorsionField::on_fiber(1, vec![e("-y"), e("x")]);
    let conn = Connection::SemiSymmetric(f.clone());
    let g = grid(&s);
    for lambda in [0.0, -0.5] {
        let r = pseudo_einstein_residuals(&s, &f, lambda, &g, 1e-8).unwrap();
        let oracle = oracle_deviation(&s, &conn, lambda, &g, true);
        let theory = r.residuals.iter().map(|x| x.max_abs_residual).fold(0.0, f64::max);
        // the frame is orthonormal and every metric entry is ±1, so the two max-norms coincide
        assert!((theory - oracle).abs() < 1e-6, "{theory} vs {oracle}");
        assert_eq!(r.pass, oracle < 1e-8);
    }
}

#[test]
fn pseudo_einstein_residuals_invariant_under_torus_shift() {
    let s = circle_torus();
    let f = TorsionField::on_fiber(1, vec![e("sin(x)"), e("cos(y) + x")]);
    let g = grid(&s);
    let base = pseudo_einstein_residuals(&s, &f, 0.3, &g, 1e-8).unwrap();
    let (dx, dy) = (0.7, -1.3);
    let shifted_field = TorsionField::on_fiber(1, f.components.iter().map(|c| c.shift_var("x", -dx).shift_var("y", -dy)).collect());
    let mut fp = g.fiber_point.clone();
    fp[1] += dx;
    fp[2] += dy;
    let shifted = pseudo_einstein_residuals(&s, &shifted_field, 0.3, &TimeGrid::new(g.ts.clone(), fp), 1e-8).unwrap();
    for (a, b) in base.residuals.iter().zip(&shifted.residuals) {
        assert!((a.max_abs_residual - b.max_abs_residual).abs() < 1e-9);
    }
}

#[test]
fn scalar_of_unwarped_torus_with_time_field() {
    let s = grw(FiberSpec::torus(2), "1");
    let r = multiwarped_scalar(&s, Some(&TorsionField::time()), &grid(&s), 1e-8).unwrap();
    assert!(r.values.iter().all(|v| (v - 2.0).abs() < 1e-12));
    assert!(r.report.pass);
}

#[test]
fn scalar_of_exponential_torus_with_time_field_vanishes() {
    let s = grw(FiberSpec::torus(2), "exp(t)");
    let r = multiwarped_scalar(&s, Some(&TorsionField::time()), &grid(&s), 1e-8).unwrap();
    assert!(r.values.iter().all(|v| v.abs() < 1e-12));
    assert!(r.report.pass);
}

#[test]
fn scalar_formula_matches_oracle_for_every_field_placement() {
    let s = ProductManifoldSpec::warped_over_interval(
        vec![FiberSpec::sphere(1.0), FiberSpec::with_coords(FiberGeometry::Hyperbolic { radius: 2.0 }, vec!["u".into(), "v".into()])],
        vec![e("1 + t*t"), e("exp(0.5*t)")],
        0.0,
        1.0,
    )
    .unwrap();
    let g = grid(&s);
    let fields = [
        None,
        Some(TorsionField::time()),
        Some(TorsionField::on_fiber(0, vec![e("sin(theta)"), e("cos(phi)")])),
        Some(TorsionField::on_fiber(1, vec![e("v"), e("u*v")])),
    ];
    for f in &fields {
        let r = multiwarped_scalar(&s, f.as_ref(), &g, 1e-8).unwrap();
        assert!(r.report.pass, "{f:?}: {:?}", r.report);
        let conn = match f {
            None => Connection::LeviCivita,
            Some(f) => Connection::SemiSymmetric(f.clone()),
        };
        for (p, v) in g.points().iter().zip(&r.values) {
            let o = curvature_via_relation(&conn, &s, p).unwrap().scalar;
            assert!((o - v).abs() < 1e-6, "{f:?}: {o} vs {v}");
        }
    }
    let rotated = TorsionField::on_base(vec![e("t")]);
    assert!(matches!(multiwarped_scalar(&s, Some(&rotated), &g, 1e-8), Err(GeometryError::UnsupportedP(_))));
}

#[test]
fn separation_check_reports_constancy() {
    let s = grw(FiberSpec::torus(2), "exp(t)");
    let conn = Connection::SemiSymmetric(TorsionField::time());
    let r = constant_scalar_separation_check(&s, &conn, &grid(&s)).unwrap();
    assert!(r.scalar_constant && r.pass && r.fiber_scalar_constant == vec![true]);

    let q = grw(FiberSpec::torus(2), "t*t + 1");
    let r = constant_scalar_separation_check(&q, &conn, &grid(&q)).unwrap();
    assert!(!r.scalar_constant);
    assert!(r.message.contains("not constant"));

    let one = TimeGrid::new(vec![0.5], vec![0.3, 0.4]);
    let r = constant_scalar_separation_check(&q, &conn, &one).unwrap();
    assert!(r.grid_too_small && r.scalar_constant);
}

#[test]
fn separation_check_with_field_on_fiber() {
    let s = grw(FiberSpec::torus(2), "exp(t)");
    let killing = Connection::SemiSymmetric(TorsionField::on_fiber(0, vec![e("1"), e("0")]));
    let r = constant_scalar_separation_check(&s, &killing, &grid(&s)).unwrap();
    assert_eq!(r.field_hypothesis, Some(true));
    let varying = Connection::SemiSymmetric(TorsionField::on_fiber(0, vec![e("x"), e("0")]));
    let r = constant_scalar_separation_check(&s, &varying, &grid(&s)).unwrap();
    assert_eq!(r.field_hypothesis, Some(false));
}
