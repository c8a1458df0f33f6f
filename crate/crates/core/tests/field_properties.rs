use cdii_core::field::{
    divergence, duality_inner, duality_inner_scalar, gradient, lp_norm, Grid2D, Norm, ScalarField, VectorField2,
};
use proptest::prelude::*;

fn grid() -> impl Strategy<Value = Grid2D> {
    (3usize..14, 3usize..14, 0.05f64..2.0, 0.05f64..2.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_map(|(nx, ny, hx, hy, ox, oy)| Grid2D::new(nx, ny, hx, hy, [ox, oy]).unwrap())
}

fn field_on(g: Grid2D) -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(-10.0f64..10.0, g.len()).prop_map(move |v| ScalarField::new(g, v).unwrap())
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn gradient_and_divergence_are_dual(
        (u, vx, vy) in grid().prop_flat_map(|g| (field_on(g), field_on(g), field_on(g)))
    ) {
        let g = *u.grid();
        // u vanishes on the boundary
        let vals = (0..g.len()).map(|k| if g.is_boundary_index(k) { 0.0 } else { u.values()[k] }).collect();
        let u = ScalarField::new(g, vals).unwrap();
        let v = VectorField2::new(vx, vy).unwrap();
        let lhs = duality_inner(&gradient(&u), &v).unwrap();
        let rhs = duality_inner_scalar(&u, &divergence(&v)).unwrap();
        let scale = l2(u.values()) * (l2(v.x().values()) + l2(v.y().values())) * g.hx() * g.hy()
            / g.hx().min(g.hy());
        prop_assert!((lhs + rhs).abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE), "{lhs} {rhs}");
    }

    #[test]
    fn norms_are_ordered_on_the_unit_square(u in field_on(Grid2D::unit_square(9).unwrap())) {
        let (n1, n2, ninf) = (lp_norm(&u, Norm::L1), lp_norm(&u, Norm::L2), lp_norm(&u, Norm::LInf));
        prop_assert!(n1 <= n2 * (1.0 + 1e-12) + 1e-12);
        prop_assert!(n2 <= ninf * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn gradient_is_linear(
        (u, w) in grid().prop_flat_map(|g| (field_on(g), field_on(g))),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let combo = u.zip_map(&w, |p, q| a * p + b * q).unwrap();
        let (gu, gw, gc) = (gradient(&u), gradient(&w), gradient(&combo));
        let tol = 1e-12 * (l2(u.values()) + l2(w.values())) * (a.abs() + b.abs() + 1.0)
            / u.grid().hx().min(u.grid().hy());
        for k in 0..u.grid().len() {
            let (pu, pw, pc) = (gu.at(k), gw.at(k), gc.at(k));
            prop_assert!((pc[0] - a * pu[0] - b * pw[0]).abs() <= tol);
            prop_assert!((pc[1] - a * pu[1] - b * pw[1]).abs() <= tol);
        }
    }

    #[test]
    fn constants_have_zero_gradient(g in grid(), c in -1e3f64..1e3) {
        let grad = gradient(&ScalarField::constant(g, c));
        prop_assert!(grad.x().values().iter().chain(grad.y().values()).all(|&v| v == 0.0));
    }
}
