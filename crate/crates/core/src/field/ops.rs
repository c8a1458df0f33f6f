//! Finite-difference operators, trapezoidal quadrature and norms.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Grid2D, ScalarField, VectorField2};
use crate::error::{Error, Result};
use crate::level_sets;

/// First derivative along a strided line of `n` samples: central in the
/// interior, second-order one-sided at both ends.
#[inline]
fn line_derivative(v: &[f64], out: &mut [f64], start: usize, stride: usize, n: usize, h: f64) {
    let at = |k: usize| v[start + k * stride];
    let inv = 1.0 / (2.0 * h);
    // differenced first so constants give exactly zero
    out[start] = (3.0 * (at(1) - at(0)) - (at(2) - at(1))) * inv;
    for k in 1..n - 1 {
        out[start + k * stride] = (at(k + 1) - at(k - 1)) * inv;
    }
    out[start + (n - 1) * stride] = (3.0 * (at(n - 1) - at(n - 2)) - (at(n - 2) - at(n - 3))) * inv;
}

/// Second derivative along a strided line; one-sided four-point stencils at
/// the ends (three-point when only three samples exist).
#[inline]
fn line_second_derivative(v: &[f64], out: &mut [f64], start: usize, stride: usize, n: usize, h: f64) {
    let at = |k: usize| v[start + k * stride];
    let inv = 1.0 / (h * h);
    for k in 1..n - 1 {
        out[start + k * stride] = (at(k + 1) - 2.0 * at(k) + at(k - 1)) * inv;
    }
    if n >= 4 {
        out[start] = (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) * inv;
        let m = n - 1;
        out[start + m * stride] = (2.0 * at(m) - 5.0 * at(m - 1) + 4.0 * at(m - 2) - at(m - 3)) * inv;
    } else {
        out[start] = out[start + stride];
        out[start + 2 * stride] = out[start + stride];
    }
}

pub fn derivative_x(u: &ScalarField) -> ScalarField {
    let g = *u.grid();
    let mut out = vec![0.0; g.len()];
    for j in 0..g.ny() {
        line_derivative(u.values(), &mut out, g.index(0, j), 1, g.nx(), g.hx());
    }
    ScalarField::from_vec(g, out)
}

pub fn derivative_y(u: &ScalarField) -> ScalarField {
    let g = *u.grid();
    let mut out = vec![0.0; g.len()];
    for i in 0..g.nx() {
        line_derivative(u.values(), &mut out, i, g.nx(), g.ny(), g.hy());
    }
    ScalarField::from_vec(g, out)
}

fn second_x(u: &ScalarField) -> ScalarField {
    let g = *u.grid();
    let mut out = vec![0.0; g.len()];
    for j in 0..g.ny() {
        line_second_derivative(u.values(), &mut out, g.index(0, j), 1, g.nx(), g.hx());
    }
    ScalarField::from_vec(g, out)
}

fn second_y(u: &ScalarField) -> ScalarField {
    let g = *u.grid();
    let mut out = vec![0.0; g.len()];
    for i in 0..g.nx() {
        line_second_derivative(u.values(), &mut out, i, g.nx(), g.ny(), g.hy());
    }
    ScalarField::from_vec(g, out)
}

/// Central differences inside, one-sided second-order on the boundary.
pub fn gradient(u: &ScalarField) -> VectorField2 {
    VectorField2 { x: derivative_x(u), y: derivative_y(u) }
}

/// `G^T y` for the [`line_derivative`] matrix `G` along one line, with `h`
/// factored out (the result is scaled by `2h`).
fn line_derivative_transpose(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    out[0] -= 3.0 * y[0];
    out[1] += 4.0 * y[0];
    out[2] -= y[0];
    for m in 1..n - 1 {
        out[m - 1] -= y[m];
        out[m + 1] += y[m];
    }
    out[n - 3] += y[n - 1];
    out[n - 2] -= 4.0 * y[n - 1];
    out[n - 1] += 3.0 * y[n - 1];
    out
}

/// Quadrature weights (in units of `h`) of the vector side of the duality
/// pairing: `1/4, 5/4, 1, ..., 1, 5/4, 1/4`. With these the transposed
/// derivative annihilates constants at every interior node.
fn flux_weights(n: usize) -> Vec<f64> {
    let mut w = vec![1.0; n];
    w[0] = 0.25;
    w[n - 1] = 0.25;
    if n > 3 {
        w[1] = 1.25;
        w[n - 2] = 1.25;
    }
    w
}

/// Weights (in units of `h`) of the scalar side, chosen so the adjoint
/// derivative is exact on linear data; zero on the two end nodes.
fn node_weights(n: usize) -> Vec<f64> {
    let w = flux_weights(n);
    let wx: Vec<f64> = (0..n).map(|m| w[m] * m as f64).collect();
    // G^T with h = 1 is twice the transpose computed above
    let t = line_derivative_transpose(&wx);
    let mut out: Vec<f64> = t.iter().map(|v| -0.5 * v).collect();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    out
}

/// Interior values of `-(W G)^T v / W'` along one line.
fn line_adjoint_derivative(v: &[f64], out: &mut [f64], start: usize, stride: usize, n: usize, h: f64) {
    let w = flux_weights(n);
    let wn = node_weights(n);
    let y: Vec<f64> = (0..n).map(|m| w[m] * v[start + m * stride]).collect();
    let t = line_derivative_transpose(&y);
    for k in 1..n - 1 {
        out[start + k * stride] = -t[k] / (2.0 * h * wn[k]);
    }
}

/// Discrete divergence, built as the negative adjoint of [`gradient`]
/// under the pairing of [`duality_inner`] / [`duality_inner_scalar`]: for
/// every `u` vanishing on the boundary,
/// `duality_inner(grad u, v) == -duality_inner_scalar(u, div v)` up to
/// rounding. At interior nodes this is the central difference except at
/// the second node in from each side, where it becomes
/// `(v0 - 5 v1 + 4 v3) / 7h`; on boundary nodes the one-sided stencils of
/// [`gradient`] are used. Exact on linear fields.
pub fn divergence(v: &VectorField2) -> ScalarField {
    let g = *v.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let mut dx = derivative_x(v.x()).into_values();
    let mut dy = derivative_y(v.y()).into_values();
    for j in 1..ny - 1 {
        line_adjoint_derivative(v.x().values(), &mut dx, g.index(0, j), 1, nx, g.hx());
    }
    for i in 1..nx - 1 {
        line_adjoint_derivative(v.y().values(), &mut dy, i, nx, ny, g.hy());
    }
    let out = dx.iter().zip(&dy).map(|(a, b)| a + b).collect();
    ScalarField::from_vec(g, out)
}

/// Pointwise `|u_xx| + 2|u_xy| + |u_yy|`.
pub fn hessian_abs_sum(u: &ScalarField) -> ScalarField {
    let uxx = second_x(u);
    let uyy = second_y(u);
    let uxy = derivative_y(&derivative_x(u));
    let vals = (0..u.grid().len())
        .map(|k| uxx.values()[k].abs() + 2.0 * uxy.values()[k].abs() + uyy.values()[k].abs())
        .collect();
    ScalarField::from_vec(*u.grid(), vals)
}

pub fn hessian_l1(u: &ScalarField) -> f64 {
    integrate(&hessian_abs_sum(u))
}

fn trapezoid_weights(n: usize, h: f64) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| if k == 0 || k == n - 1 { 0.5 * h } else { h })
}

/// Trapezoidal rule over the grid rectangle.
pub fn integrate(u: &ScalarField) -> f64 {
    integrate_values(u.grid(), u.values())
}

pub(crate) fn integrate_values(g: &Grid2D, values: &[f64]) -> f64 {
    let wx: Vec<f64> = trapezoid_weights(g.nx(), g.hx()).collect();
    trapezoid_weights(g.ny(), g.hy())
        .enumerate()
        .map(|(j, wy)| {
            let row = &values[j * g.nx()..(j + 1) * g.nx()];
            wy * row.iter().zip(&wx).map(|(v, w)| v * w).sum::<f64>()
        })
        .sum()
}

/// Vector-side pairing under which [`divergence`] is the negative adjoint
/// of [`gradient`]: `sum hx*hy*(Wx(i) W'(j) a.x b.x + W'(i) Wy(j) a.y b.y)`
/// with flux weights `W` = `1/4, 5/4, 1, ..., 1, 5/4, 1/4` and interior
/// node weights `W'`. Both are consistent quadratures of the unit interval.
pub fn duality_inner(a: &VectorField2, b: &VectorField2) -> Result<f64> {
    a.x().same_grid(b.x())?;
    let g = *a.grid();
    let (wx, wy) = (flux_weights(g.nx()), flux_weights(g.ny()));
    let (nwx, nwy) = (node_weights(g.nx()), node_weights(g.ny()));
    let mut s = 0.0;
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let k = g.index(i, j);
            s += wx[i] * nwy[j] * a.x().values()[k] * b.x().values()[k];
            s += nwx[i] * wy[j] * a.y().values()[k] * b.y().values()[k];
        }
    }
    Ok(s * g.hx() * g.hy())
}

/// Scalar-side pairing, see [`duality_inner`]; boundary nodes carry no
/// weight.
pub fn duality_inner_scalar(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.same_grid(b)?;
    let g = *a.grid();
    let (nwx, nwy) = (node_weights(g.nx()), node_weights(g.ny()));
    let mut s = 0.0;
    for j in 1..g.ny() - 1 {
        for i in 1..g.nx() - 1 {
            let k = g.index(i, j);
            s += nwx[i] * nwy[j] * a.values()[k] * b.values()[k];
        }
    }
    Ok(s * g.hx() * g.hy())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

impl TryFrom<f64> for Norm {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(Norm::L1)
        } else if p == 2.0 {
            Ok(Norm::L2)
        } else if p == f64::INFINITY {
            Ok(Norm::LInf)
        } else {
            Err(Error::InvalidArgument(format!("unsupported norm exponent p = {p}")))
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(Norm::L1),
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" | "infinity" => Ok(Norm::LInf),
            other => Err(Error::InvalidArgument(format!("unsupported norm '{other}'"))),
        }
    }
}

/// L1 and L2 by trapezoidal quadrature; L-infinity as the node maximum.
pub fn lp_norm(u: &ScalarField, p: Norm) -> f64 {
    match p {
        Norm::L1 => integrate_values(u.grid(), &u.values().iter().map(|v| v.abs()).collect::<Vec<_>>()),
        Norm::L2 => integrate_values(u.grid(), &u.values().iter().map(|v| v * v).collect::<Vec<_>>()).sqrt(),
        Norm::LInf => u.values().iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoareaCheck {
    /// `integral of |grad u|`.
    pub lhs: f64,
    /// Midpoint-rule sum of level-set lengths times the level spacing.
    pub rhs: f64,
    /// Set when `u` is constant; `rhs` is then 0.
    pub degenerate: bool,
}

impl CoareaCheck {
    pub fn relative_mismatch(&self) -> f64 {
        if self.lhs == 0.0 && self.rhs == 0.0 {
            0.0
        } else {
            (self.lhs - self.rhs).abs() / self.lhs.abs().max(self.rhs.abs())
        }
    }
}

/// Compares both sides of the coarea identity
/// `integral |grad u| dx = integral length({u = t}) dt`.
pub fn coarea_check(u: &ScalarField, n_levels: usize) -> Result<CoareaCheck> {
    if n_levels < 8 {
        return Err(Error::InvalidArgument(format!("need at least 8 levels, got {n_levels}")));
    }
    let lhs = integrate(&gradient(u).magnitude());
    let (lo, hi) = (u.min(), u.max());
    let range = hi - lo;
    if range <= f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
        return Ok(CoareaCheck { lhs, rhs: 0.0, degenerate: true });
    }
    let dt = range / n_levels as f64;
    let rhs = (0..n_levels).map(|k| level_sets::total_length(u, lo + (k as f64 + 0.5) * dt) * dt).sum();
    Ok(CoareaCheck { lhs, rhs, degenerate: false })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn unit(n: usize) -> Grid2D {
        Grid2D::unit_square(n).unwrap()
    }

    /// Composite midpoint rule on the unit square, independent of the grid code.
    fn midpoint_quadrature(f: impl Fn(f64, f64) -> f64, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                s += f((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            }
        }
        s * h * h
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let u = ScalarField::constant(unit(9), 3.0);
        let g = gradient(&u);
        assert!(g.x().values().iter().chain(g.y().values()).all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_x_is_exact() {
        let u = ScalarField::from_fn(unit(33), |x, _| x).unwrap();
        let g = gradient(&u);
        for k in 0..u.grid().len() {
            assert!((g.x().values()[k] - 1.0).abs() < 1e-12);
            assert!(g.y().values()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_paraboloid_at_sample_node() {
        let g = unit(129);
        let u = ScalarField::from_fn(g, |x, y| x * x + y * y).unwrap();
        let d = gradient(&u);
        let k = g.index(64, 32);
        assert_eq!(g.point(k), [0.5, 0.25]);
        assert!((d.x().values()[k] - 1.0).abs() <= 1e-4);
        assert!((d.y().values()[k] - 0.5).abs() <= 1e-4);
    }

    #[test]
    fn gradient_error_decays_second_order() {
        // max error against the analytic gradient of a non-polynomial field
        let err = |n: usize| {
            let u = ScalarField::from_fn(unit(n), |x, y| (2.0 * x).sin() * (1.5 * y).exp()).unwrap();
            let d = gradient(&u);
            (0..u.grid().len())
                .map(|k| {
                    let [x, y] = u.grid().point(k);
                    let ex = 2.0 * (2.0 * x).cos() * (1.5 * y).exp();
                    let ey = 1.5 * (2.0 * x).sin() * (1.5 * y).exp();
                    (d.x().values()[k] - ex).abs().max((d.y().values()[k] - ey).abs())
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(33), err(65), err(129));
        assert!((e1 / e2).log2() > 1.9, "{e1} {e2}");
        assert!((e2 / e3).log2() > 1.9, "{e2} {e3}");
        assert!(e3 < 1e-3);
    }

    #[test]
    fn divergence_examples() {
        let g = unit(17);
        let d = divergence(&VectorField2::constant(g, [1.0, 0.0]));
        assert!(d.values().iter().all(|v| v.abs() < 1e-12));

        let d = divergence(&VectorField2::from_fn(g, |x, y| [x, y]).unwrap());
        for j in 1..16 {
            for i in 1..16 {
                assert!((d.at(i, j) - 2.0).abs() < 1e-10);
            }
        }

        let d = divergence(&VectorField2::from_fn(g, |x, y| [-y, x]).unwrap());
        assert!(d.values().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn hessian_examples() {
        let g = unit(65);
        let lin = ScalarField::from_fn(g, |x, y| 2.0 * x - 3.0 * y + 1.0).unwrap();
        assert!(hessian_l1(&lin) < 1e-10);

        let quad = ScalarField::from_fn(g, |x, _| x * x).unwrap();
        assert!((hessian_l1(&quad) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn hessian_of_product_sines_matches_quadrature() {
        let s = |x: f64| (PI * x).sin();
        let c = |x: f64| (PI * x).cos();
        let pi2 = PI * PI;
        let oracle =
            midpoint_quadrature(|x, y| pi2 * (s(x) * s(y)).abs() * 2.0 + 2.0 * pi2 * (c(x) * c(y)).abs(), 2000);
        let u = ScalarField::from_fn(unit(129), |x, y| s(x) * s(y)).unwrap();
        let got = hessian_l1(&u);
        assert!((got - oracle).abs() / oracle < 0.01, "{got} vs {oracle}");
    }

    #[test]
    fn norm_examples() {
        let g = unit(33);
        assert!((lp_norm(&ScalarField::constant(g, 1.0), Norm::L1) - 1.0).abs() < 1e-14);
        let x = ScalarField::from_fn(g, |x, _| x).unwrap();
        assert_eq!(lp_norm(&x, Norm::LInf), 1.0);

        let oracle = midpoint_quadrature(|x, y| ((PI * x).sin() * (PI * y).sin()).powi(2), 1000).sqrt();
        assert!((oracle - 0.5).abs() < 1e-6);
        let u = ScalarField::from_fn(unit(129), |x, y| (PI * x).sin() * (PI * y).sin()).unwrap();
        assert!((lp_norm(&u, Norm::L2) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn norm_rejects_other_exponents() {
        assert!(Norm::try_from(3.0).is_err());
        assert!(Norm::try_from(0.5).is_err());
        assert_eq!(Norm::try_from(f64::INFINITY).unwrap(), Norm::LInf);
        assert!("l7".parse::<Norm>().is_err());
    }

    #[test]
    fn coarea_of_linear_field() {
        let u = ScalarField::from_fn(unit(65), |x, _| x).unwrap();
        let c = coarea_check(&u, 64).unwrap();
        assert!((c.lhs - 1.0).abs() < 1e-12);
        assert!((c.rhs - 1.0).abs() < 0.01);
        assert!(!c.degenerate);
    }

    #[test]
    fn coarea_of_constant_is_degenerate() {
        let c = coarea_check(&ScalarField::constant(unit(9), 4.0), 16).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert_eq!(c.rhs, 0.0);
        assert!(c.degenerate);
        assert!(coarea_check(&ScalarField::constant(unit(9), 4.0), 4).is_err());
    }

    #[test]
    fn coarea_of_paraboloid() {
        let oracle = midpoint_quadrature(|x, y| 2.0 * (x * x + y * y).sqrt(), 2000);
        assert!((oracle - 1.5306).abs() < 1e-3);
        let u = ScalarField::from_fn(unit(128), |x, y| x * x + y * y).unwrap();
        let c = coarea_check(&u, 256).unwrap();
        assert!((c.lhs - oracle).abs() / oracle < 1e-3, "{}", c.lhs);
        assert!(c.relative_mismatch() < 0.02, "{c:?}");
    }
}
