//! Weighted least-gradient problem
//!
//! ```text
//! min  sum a |D w|   over w with w = f on the boundary
//! ```
//!
//! solved as the saddle point `min_w max_{|phi| <= a} <D w, phi>` by a
//! first-order primal-dual iteration. `D` is the forward-difference
//! gradient (zero across the last column/row), the dual ball constraint is
//! a pointwise radial projection and the Dirichlet data are re-pinned after
//! every primal step. The converged dual iterate is the discrete
//! divergence-free field aligned with `D w`; [`dual_certificate`] measures
//! how well it plays that role.
//!
//! The stopping test uses a duality gap in which the interior values are
//! restricted to `[min f, max f]`. Truncating to that interval never
//! increases the objective, so the restricted dual is a valid lower bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient, integrate, BoundaryTrace, Grid2D, ScalarField, VectorField2};
use crate::forward::AdmissibilityBounds;

#[derive(Debug, Clone, PartialEq)]
pub struct LgpProblem {
    a: ScalarField,
    f: BoundaryTrace,
    bounds: AdmissibilityBounds,
}

impl LgpProblem {
    /// Rejects weights outside `[m, M]`.
    pub fn new(a: ScalarField, f: BoundaryTrace, bounds: AdmissibilityBounds) -> Result<Self> {
        if a.grid() != f.grid() {
            return Err(Error::GridMismatch);
        }
        bounds.validate()?;
        let (lo, hi) = (a.min(), a.max());
        if lo < bounds.m || hi > bounds.big_m {
            return Err(Error::Inadmissible(format!(
                "weight range [{lo}, {hi}] violates m = {} <= a <= M = {}",
                bounds.m, bounds.big_m
            )));
        }
        Ok(Self { a, f, bounds })
    }

    pub fn weight(&self) -> &ScalarField {
        &self.a
    }

    pub fn trace(&self) -> &BoundaryTrace {
        &self.f
    }

    pub fn bounds(&self) -> &AdmissibilityBounds {
        &self.bounds
    }

    pub fn grid(&self) -> &Grid2D {
        self.a.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdParams {
    pub tau: f64,
    pub sig: f64,
    pub theta: f64,
    pub max_iter: usize,
    /// Relative duality gap at which the iteration stops.
    pub tol_gap: f64,
    /// Iterations between gap evaluations.
    pub check_every: usize,
}

/// Upper bound on `||D||^2` for the forward-difference gradient.
pub fn gradient_norm_bound(grid: &Grid2D) -> f64 {
    4.0 * (1.0 / (grid.hx() * grid.hx()) + 1.0 / (grid.hy() * grid.hy()))
}

impl PdParams {
    pub fn for_grid(grid: &Grid2D) -> Self {
        let step = 1.0 / gradient_norm_bound(grid).sqrt();
        Self { tau: step, sig: step, theta: 1.0, max_iter: 200_000, tol_gap: 1e-6, check_every: 50 }
    }

    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        if !(self.tau > 0.0 && self.sig > 0.0) {
            return Err(Error::InvalidArgument("step sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!("theta = {} outside [0, 1]", self.theta)));
        }
        if self.tau * self.sig * gradient_norm_bound(grid) > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "step condition tau*sig*||D||^2 <= 1 violated ({})",
                self.tau * self.sig * gradient_norm_bound(grid)
            )));
        }
        if !(self.tol_gap > 0.0) || self.check_every == 0 {
            return Err(Error::InvalidArgument("tol_gap and check_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LgpSolution {
    pub u: ScalarField,
    /// Dual field, one vector per node on the forward-difference edges.
    pub phi: VectorField2,
    /// `integral a |grad u|` by trapezoidal quadrature of the central gradient.
    pub energy: f64,
    /// The discrete primal value `sum hx*hy*a*|D u|` the iteration minimizes.
    pub objective: f64,
    /// Relative duality gap of the returned iterate.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Forward differences with the last column/row set to zero.
fn forward_gradient(g: &Grid2D, u: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    let (nx, ny) = (g.nx(), g.ny());
    let (ihx, ihy) = (1.0 / g.hx(), 1.0 / g.hy());
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            let k = row + i;
            gx[k] = if i + 1 < nx { (u[k + 1] - u[k]) * ihx } else { 0.0 };
            gy[k] = if j + 1 < ny { (u[k + nx] - u[k]) * ihy } else { 0.0 };
        }
    }
}

/// `D^T phi`, the negative backward-difference divergence.
fn gradient_adjoint(g: &Grid2D, px: &[f64], py: &[f64], out: &mut [f64]) {
    let (nx, ny) = (g.nx(), g.ny());
    let (ihx, ihy) = (1.0 / g.hx(), 1.0 / g.hy());
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            let k = row + i;
            let mut v = 0.0;
            if i + 1 < nx {
                v -= px[k];
            }
            if i > 0 {
                v += px[k - 1];
            }
            let mut w = 0.0;
            if j + 1 < ny {
                w -= py[k];
            }
            if j > 0 {
                w += py[k - nx];
            }
            out[k] = v * ihx + w * ihy;
        }
    }
}

/// `sum hx*hy*a*|D u|`, the objective the iteration minimizes.
fn discrete_objective(g: &Grid2D, a: &[f64], gx: &[f64], gy: &[f64]) -> f64 {
    let s: f64 = (0..a.len()).map(|k| a[k] * gx[k].hypot(gy[k])).sum();
    s * g.hx() * g.hy()
}

fn duality_gap(
    g: &Grid2D,
    a: &[f64],
    u: &[f64],
    px: &[f64],
    py: &[f64],
    range: (f64, f64),
    scratch: &mut Scratch,
) -> f64 {
    forward_gradient(g, u, &mut scratch.gx, &mut scratch.gy);
    let primal = discrete_objective(g, a, &scratch.gx, &scratch.gy);
    gradient_adjoint(g, px, py, &mut scratch.adj);
    let (mid, half) = (0.5 * (range.0 + range.1), 0.5 * (range.1 - range.0));
    let mut dual = 0.0;
    for (k, &d) in scratch.adj.iter().enumerate() {
        if g.is_boundary_index(k) {
            dual += u[k] * d;
        } else {
            dual += mid * d - half * d.abs();
        }
    }
    dual *= g.hx() * g.hy();
    let gap = (primal - dual).max(0.0);
    gap / primal.abs().max(f64::MIN_POSITIVE)
}

struct Scratch {
    gx: Vec<f64>,
    gy: Vec<f64>,
    adj: Vec<f64>,
}

/// Runs the primal-dual iteration from `u0` (boundary values are replaced
/// by the trace). Non-convergence within `max_iter` returns
/// [`Error::LgpNotConverged`] carrying the iterate with the smallest gap.
pub fn solve_lgp_from(p: &LgpProblem, params: &PdParams, u0: &ScalarField) -> Result<LgpSolution> {
    let g = *p.grid();
    params.validate(&g)?;
    u0.same_grid(&p.a)?;
    let n = g.len();
    let a = p.a.values();
    let range = (p.f.min(), p.f.max());

    let mut u = u0.values().to_vec();
    p.f.apply(&mut u);
    for v in u.iter_mut() {
        *v = v.clamp(range.0, range.1);
    }
    let mut u_bar = u.clone();
    let mut u_old = u.clone();
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut scratch = Scratch { gx: vec![0.0; n], gy: vec![0.0; n], adj: vec![0.0; n] };
    let boundary: Vec<bool> = (0..n).map(|k| g.is_boundary_index(k)).collect();

    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        if iterations % params.check_every == 0 || iterations == params.max_iter {
            let gap = duality_gap(&g, a, &u, &px, &py, range, &mut scratch);
            if best.as_ref().is_none_or(|b| gap < b.0) {
                best = Some((gap, iterations, u.clone(), px.clone(), py.clone()));
            }
            if gap <= params.tol_gap {
                converged = true;
                break;
            }
            if iterations >= params.max_iter {
                break;
            }
        }

        // dual ascent + projection onto |phi| <= a
        forward_gradient(&g, &u_bar, &mut scratch.gx, &mut scratch.gy);
        for k in 0..n {
            let qx = px[k] + params.sig * scratch.gx[k];
            let qy = py[k] + params.sig * scratch.gy[k];
            let norm = qx.hypot(qy);
            let s = if norm > a[k] { a[k] / norm } else { 1.0 };
            px[k] = qx * s;
            py[k] = qy * s;
        }

        // primal descent, boundary pinned
        gradient_adjoint(&g, &px, &py, &mut scratch.adj);
        u_old.copy_from_slice(&u);
        for k in 0..n {
            if !boundary[k] {
                u[k] -= params.tau * scratch.adj[k];
            }
        }
        for k in 0..n {
            u_bar[k] = u[k] + params.theta * (u[k] - u_old[k]);
        }
        iterations += 1;
    }

    let (gap, _, bu, bpx, bpy) = if converged {
        let gap = duality_gap(&g, a, &u, &px, &py, range, &mut scratch);
        (gap, iterations, u, px, py)
    } else {
        best.expect("gap evaluated at least once")
    };
    let u = ScalarField::from_vec(g, bu);
    let phi = VectorField2::new(ScalarField::from_vec(g, bpx), ScalarField::from_vec(g, bpy))?;
    let sol =
        LgpSolution { energy: energy(&p.a, &u)?, objective: objective(&p.a, &u)?, u, phi, gap, iterations, converged };
    if converged {
        Ok(sol)
    } else {
        Err(Error::LgpNotConverged(Box::new(sol)))
    }
}

/// Primal-dual solve started from the transfinite interpolation of `f`.
pub fn solve_lgp(p: &LgpProblem, params: &PdParams) -> Result<LgpSolution> {
    solve_lgp_from(p, params, &p.f.coons_extension())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    /// `max over nodes of |phi| - a`; nonpositive for a feasible dual.
    pub max_excess: f64,
    /// L2 norm of the discrete divergence of `phi` over interior nodes.
    pub divergence_l2: f64,
    /// `sum hx*hy*(a|D u| - phi . D u)`; nonnegative when `phi` is feasible.
    pub alignment_residual: f64,
    /// `alignment_residual` divided by the discrete objective.
    pub alignment_relative: f64,
    pub objective: f64,
}

/// Certificates of the dual field, evaluated with the same
/// forward-difference gradient and adjoint divergence the solver uses.
pub fn dual_certificate(sol: &LgpSolution, p: &LgpProblem) -> Result<CertificateReport> {
    let g = *p.grid();
    sol.u.same_grid(&p.a)?;
    sol.phi.x().same_grid(&p.a)?;
    let n = g.len();
    let a = p.a.values();
    let (px, py) = (sol.phi.x().values(), sol.phi.y().values());
    let max_excess = (0..n).map(|k| px[k].hypot(py[k]) - a[k]).fold(f64::NEG_INFINITY, f64::max);

    let mut adj = vec![0.0; n];
    gradient_adjoint(&g, px, py, &mut adj);
    let mut div2 = 0.0;
    for j in 1..g.ny() - 1 {
        for i in 1..g.nx() - 1 {
            let d = adj[g.index(i, j)];
            div2 += d * d;
        }
    }
    let divergence_l2 = (div2 * g.hx() * g.hy()).sqrt();

    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    forward_gradient(&g, sol.u.values(), &mut gx, &mut gy);
    let objective = discrete_objective(&g, a, &gx, &gy);
    let pairing: f64 = (0..n).map(|k| px[k] * gx[k] + py[k] * gy[k]).sum::<f64>() * g.hx() * g.hy();
    let alignment_residual = objective - pairing;
    Ok(CertificateReport {
        max_excess,
        divergence_l2,
        alignment_residual,
        alignment_relative: if objective > 0.0 { alignment_residual / objective } else { 0.0 },
        objective,
    })
}

/// Gradient floor used by [`recover_sigma`] unless configured otherwise.
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaRecovery {
    pub sigma: ScalarField,
    pub floored_fraction: f64,
    /// More than 10% of the nodes hit the gradient floor.
    pub warning: bool,
}

/// `sigma = a / max(|grad u|, floor)`.
pub fn recover_sigma(a: &ScalarField, u: &ScalarField, floor: f64) -> Result<SigmaRecovery> {
    a.same_grid(u)?;
    if !(floor > 0.0) {
        return Err(Error::InvalidArgument(format!("floor must be positive, got {floor}")));
    }
    let grad = gradient(u).magnitude();
    let mut floored = 0usize;
    let vals = a
        .values()
        .iter()
        .zip(grad.values())
        .map(|(&av, &gv)| {
            if gv < floor {
                floored += 1;
            }
            av / gv.max(floor)
        })
        .collect();
    let floored_fraction = floored as f64 / a.grid().len() as f64;
    Ok(SigmaRecovery { sigma: ScalarField::new(*a.grid(), vals)?, floored_fraction, warning: floored_fraction > 0.1 })
}

/// The solver's primal functional, forward differences with zero flux
/// across the last column/row. Differs from [`energy`] by `O(h)`.
pub fn objective(a: &ScalarField, u: &ScalarField) -> Result<f64> {
    a.same_grid(u)?;
    let g = *a.grid();
    let (mut gx, mut gy) = (vec![0.0; g.len()], vec![0.0; g.len()]);
    forward_gradient(&g, u.values(), &mut gx, &mut gy);
    Ok(discrete_objective(&g, a.values(), &gx, &gy))
}

/// `integral a |grad u|` (trapezoidal, central gradient).
pub fn energy(a: &ScalarField, u: &ScalarField) -> Result<f64> {
    a.same_grid(u)?;
    let w = a.zip_map(&gradient(u).magnitude(), |x, y| x * y)?;
    Ok(integrate(&w))
}

/// Pointwise `|J||J~| - J.J~`, computed as `(J x J~)^2 / (|J||J~| + J.J~)`
/// when the fields point the same way to avoid cancellation.
#[inline]
pub fn pointwise_defect(j: [f64; 2], jt: [f64; 2]) -> f64 {
    let prod = j[0].hypot(j[1]) * jt[0].hypot(jt[1]);
    let dot = j[0] * jt[0] + j[1] * jt[1];
    if dot > 0.0 {
        let cross = j[0] * jt[1] - j[1] * jt[0];
        cross * cross / (prod + dot)
    } else {
        prod - dot
    }
}

pub fn defect_field(j: &VectorField2, jt: &VectorField2) -> Result<ScalarField> {
    j.x().same_grid(jt.x())?;
    let vals = (0..j.grid().len()).map(|k| pointwise_defect(j.at(k), jt.at(k))).collect();
    Ok(ScalarField::from_vec(*j.grid(), vals))
}

/// `integral (|J||J~| - J.J~)`; nonnegative by Cauchy-Schwarz.
pub fn alignment_defect(j: &VectorField2, jt: &VectorField2) -> Result<f64> {
    Ok(integrate(&defect_field(j, jt)?))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn unit(n: usize) -> Grid2D {
        Grid2D::unit_square(n).unwrap()
    }

    #[test]
    fn energy_examples() {
        let g = unit(129);
        let one = ScalarField::constant(g, 1.0);
        let x = ScalarField::from_fn(g, |x, _| x).unwrap();
        assert!((energy(&one, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(energy(&one, &ScalarField::constant(g, 2.0)).unwrap(), 0.0);
        // oracle: midpoint quadrature of 2 sqrt(x^2 + y^2)
        let m = 2000;
        let h = 1.0 / m as f64;
        let mut oracle = 0.0;
        for j in 0..m {
            for i in 0..m {
                let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                oracle += 2.0 * (x * x + y * y).sqrt() * h * h;
            }
        }
        let r2 = ScalarField::from_fn(g, |x, y| x * x + y * y).unwrap();
        let e = energy(&one, &r2).unwrap();
        assert!((e - oracle).abs() / oracle < 0.01, "{e} vs {oracle}");
        assert!((oracle - 1.5306).abs() < 1e-3);
    }

    #[test]
    fn alignment_defect_examples() {
        let g = unit(17);
        let j = VectorField2::constant(g, [1.0, 0.0]);
        assert_eq!(alignment_defect(&j, &j).unwrap(), 0.0);
        let jt = VectorField2::constant(g, [0.0, 1.0]);
        assert!((alignment_defect(&j, &jt).unwrap() - 1.0).abs() < 1e-14);
        let th = PI / 6.0;
        let jt = VectorField2::constant(g, [th.cos(), th.sin()]);
        let d = alignment_defect(&j, &jt).unwrap();
        assert!((d - (1.0 - th.cos())).abs() < 1e-14);
        assert!((d - 0.13397).abs() < 1e-5);
        let anti = VectorField2::constant(g, [-2.0, 0.0]);
        assert!((alignment_defect(&j, &anti).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn recover_sigma_examples() {
        let g = unit(65);
        let x = ScalarField::from_fn(g, |x, _| x).unwrap();
        let r = recover_sigma(&ScalarField::constant(g, 1.0), &x, 1e-6).unwrap();
        assert_eq!(r.floored_fraction, 0.0);
        assert!(r.sigma.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let x2 = x.map(|v| 2.0 * v);
        let r = recover_sigma(&ScalarField::constant(g, 2.0), &x2, 1e-6).unwrap();
        assert!(r.sigma.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(recover_sigma(&ScalarField::constant(g, 2.0), &x2, 0.0).is_err());
        let flat = ScalarField::constant(g, 0.3);
        let r = recover_sigma(&ScalarField::constant(g, 2.0), &flat, 1e-3).unwrap();
        assert_eq!(r.floored_fraction, 1.0);
        assert!(r.warning);
    }

    #[test]
    fn layered_sigma_recovery() {
        let ln2 = std::f64::consts::LN_2;
        let g = unit(129);
        let a = ScalarField::constant(g, 1.0 / ln2);
        let u = ScalarField::from_fn(g, |x, _| (1.0 + x).ln() / ln2).unwrap();
        let r = recover_sigma(&a, &u, 1e-6).unwrap();
        let exact = ScalarField::from_fn(g, |x, _| 1.0 + x).unwrap();
        let err = integrate(&r.sigma.zip_map(&exact, |a, b| (a - b).abs()).unwrap());
        assert!(err / integrate(&exact) < 0.01);
    }

    #[test]
    fn analytic_optimum_has_zero_certificates() {
        let g = unit(33);
        let p = LgpProblem::new(
            ScalarField::constant(g, 1.0),
            BoundaryTrace::from_fn(g, |x, _| x).unwrap(),
            AdmissibilityBounds::default(),
        )
        .unwrap();
        let u = ScalarField::from_fn(g, |x, _| x).unwrap();
        let sol = LgpSolution {
            phi: VectorField2::constant(g, [1.0, 0.0]),
            energy: 1.0,
            objective: 1.0,
            u,
            gap: 0.0,
            iterations: 0,
            converged: true,
        };
        let c = dual_certificate(&sol, &p).unwrap();
        assert!(c.max_excess.abs() < 1e-15);
        assert!(c.divergence_l2 < 1e-12);
        assert!(c.alignment_residual.abs() < 1e-12);
    }

    #[test]
    fn feasible_dual_gives_nonnegative_alignment() {
        let g = unit(33);
        let p = LgpProblem::new(
            ScalarField::constant(g, 1.0),
            BoundaryTrace::from_fn(g, |x, _| x).unwrap(),
            AdmissibilityBounds::default(),
        )
        .unwrap();
        // deterministic pseudo-random unit-ball field
        let phi = VectorField2::from_fn(g, |x, y| {
            let r = 0.5 + 0.5 * (13.0 * x + 7.0 * y).sin().abs();
            let t = 17.0 * x * y + 3.0 * x;
            [r * t.cos(), r * t.sin()]
        })
        .unwrap();
        let u = ScalarField::from_fn(g, |x, _| x).unwrap();
        let sol =
            LgpSolution { phi: phi.clone(), energy: 1.0, objective: 1.0, u, gap: 0.0, iterations: 0, converged: true };
        let c = dual_certificate(&sol, &p).unwrap();
        // u = x has D u = (1, 0) except on the last column
        let mut expected = 0.0;
        for j in 0..g.ny() {
            for i in 0..g.nx() - 1 {
                expected += 1.0 - phi.x().at(i, j);
            }
        }
        expected *= g.hx() * g.hy();
        assert!((c.alignment_residual - expected).abs() < 1e-12);
        assert!(c.alignment_residual >= 0.0);
        assert!(c.max_excess <= 0.0);
    }

    #[test]
    fn params_enforce_step_condition() {
        let g = unit(17);
        let p = PdParams::for_grid(&g);
        p.validate(&g).unwrap();
        let bad = PdParams { tau: 2.0 * p.tau, ..p };
        assert!(bad.validate(&g).is_err());
        let bad = PdParams { theta: 1.5, ..p };
        assert!(bad.validate(&g).is_err());
    }

    #[test]
    fn weight_outside_bounds_is_rejected() {
        let g = unit(9);
        let b = AdmissibilityBounds::new(0.5, 2.0, 0.1, 10.0, 1e4).unwrap();
        let f = BoundaryTrace::from_fn(g, |x, _| x).unwrap();
        assert!(LgpProblem::new(ScalarField::constant(g, 3.0), f.clone(), b).is_err());
        assert!(LgpProblem::new(ScalarField::constant(g, 0.1), f, b).is_err());
    }
}
