use cdii_core::field::{BoundaryTrace, Grid2D, ScalarField};
use cdii_core::forward::{solve_conductivity, two_to_one_trace, AdmissibilityBounds, ConductivityProblem, TraceKind};
use cdii_core::least_gradient::{
    dual_certificate, objective, recover_sigma, solve_lgp, solve_lgp_from, LgpProblem, LgpSolution, PdParams,
};
use cdii_core::Error;

fn bounds() -> AdmissibilityBounds {
    AdmissibilityBounds::new(0.05, 20.0, 0.1, 10.0, 1e6).unwrap()
}

fn linf(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_l1(a: &ScalarField, b: &ScalarField) -> f64 {
    let num: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum();
    num / b.values().iter().map(|v| v.abs()).sum::<f64>()
}

fn bump(g: Grid2D) -> ScalarField {
    ScalarField::from_fn(g, |x, y| 1.0 + 0.5 * (-50.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp()).unwrap()
}

/// Weight `|J|` of the forward solution and the potential itself.
fn forward_pair(sigma: ScalarField, f: &BoundaryTrace) -> (ScalarField, ScalarField) {
    let p = ConductivityProblem::new(sigma, f.clone(), bounds()).unwrap();
    let sol = solve_conductivity(&p, 1e-11).unwrap();
    (sol.current.magnitude(), sol.u)
}

#[test]
fn constant_weight_linear_data_from_a_flat_start() {
    let g = Grid2D::unit_square(129).unwrap();
    let x = ScalarField::from_fn(g, |x, _| x).unwrap();
    let p = LgpProblem::new(ScalarField::constant(g, 1.0), BoundaryTrace::from_field(&x), bounds()).unwrap();
    // interior starts at the midpoint of the data range
    let sol = solve_lgp_from(&p, &PdParams::for_grid(&g), &ScalarField::constant(g, 0.5)).unwrap();
    assert!(sol.converged);
    assert!(linf(&sol.u, &x) <= 1e-3, "{}", linf(&sol.u, &x));
    assert!((sol.energy - 1.0).abs() <= 1e-3, "{}", sol.energy);
    let cert = dual_certificate(&sol, &p).unwrap();
    assert!(cert.max_excess <= 1e-8);
    assert!(cert.divergence_l2 <= 1e-2);
    assert!(cert.alignment_residual <= 1e-3 * sol.energy);
    assert!(cert.alignment_residual >= -1e-12);
}

#[test]
fn boundary_values_are_kept_exactly() {
    let g = Grid2D::unit_square(33).unwrap();
    let f = two_to_one_trace(g, TraceKind::Linear);
    let p = LgpProblem::new(bump(g), f.clone(), bounds()).unwrap();
    let sol = solve_lgp(&p, &PdParams::for_grid(&g)).unwrap();
    for &(k, v) in f.entries() {
        assert_eq!(sol.u.values()[k], v);
    }
    assert!(dual_certificate(&sol, &p).unwrap().max_excess <= 1e-8);
}

#[test]
fn layered_weight_recovers_the_potential() {
    let g = Grid2D::unit_square(65).unwrap();
    let exact = |x: f64, _: f64| (1.0 + x).ln() / 2f64.ln();
    let f = BoundaryTrace::from_fn(g, exact).unwrap();
    let (a, u) = forward_pair(ScalarField::from_fn(g, |x, _| 1.0 + x).unwrap(), &f);
    let p = LgpProblem::new(a, f, bounds()).unwrap();
    let sol = solve_lgp(&p, &PdParams::for_grid(&g)).unwrap();
    assert!(rel_l1(&sol.u, &u) <= 0.02, "{}", rel_l1(&sol.u, &u));
}

#[test]
fn reported_minimum_is_below_the_forward_candidate() {
    let g = Grid2D::unit_square(65).unwrap();
    let f = two_to_one_trace(g, TraceKind::Linear);
    let (a, u) = forward_pair(bump(g), &f);
    let p = LgpProblem::new(a.clone(), f, bounds()).unwrap();
    let sol = solve_lgp(&p, &PdParams::for_grid(&g)).unwrap();
    let candidate = objective(&a, &u).unwrap();
    assert!(sol.objective <= candidate + sol.gap * sol.objective, "{} vs {candidate}", sol.objective);
}

#[test]
fn positive_scaling_leaves_the_minimizer_alone() {
    let g = Grid2D::unit_square(65).unwrap();
    let f = two_to_one_trace(g, TraceKind::Linear);
    let (a, _) = forward_pair(bump(g), &f);
    let params = PdParams::for_grid(&g);
    let c = 3.0;
    let s1 = solve_lgp(&LgpProblem::new(a.clone(), f.clone(), bounds()).unwrap(), &params).unwrap();
    let s3 = solve_lgp(&LgpProblem::new(a.map(|v| c * v), f, bounds()).unwrap(), &params).unwrap();
    let rel = (s3.objective - c * s1.objective).abs() / (c * s1.objective);
    assert!(rel <= 2.0 * params.tol_gap, "{rel}");
    assert!(linf(&s1.u, &s3.u) <= 1e-3, "{}", linf(&s1.u, &s3.u));
}

#[test]
fn bump_round_trip() {
    let g = Grid2D::unit_square(65).unwrap();
    let sigma = bump(g);
    let f = two_to_one_trace(g, TraceKind::Linear);
    let (a, _) = forward_pair(sigma.clone(), &f);
    let sol = solve_lgp(&LgpProblem::new(a.clone(), f, bounds()).unwrap(), &PdParams::for_grid(&g)).unwrap();
    let rec = recover_sigma(&a, &sol.u, 1e-6).unwrap();
    assert!(rel_l1(&rec.sigma, &sigma) <= 0.05);
    assert_eq!(rec.floored_fraction, 0.0);
}

#[test]
fn iteration_cap_reports_the_best_iterate() {
    let g = Grid2D::unit_square(33).unwrap();
    let f = two_to_one_trace(g, TraceKind::Linear);
    let p = LgpProblem::new(bump(g), f, bounds()).unwrap();
    let params = PdParams { max_iter: 20, check_every: 5, ..PdParams::for_grid(&g) };
    match solve_lgp(&p, &params) {
        Err(Error::LgpNotConverged(sol)) => {
            let sol: LgpSolution = *sol;
            assert!(!sol.converged);
            assert!(sol.gap > params.tol_gap && sol.gap.is_finite());
            assert!(sol.iterations <= 20);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}
