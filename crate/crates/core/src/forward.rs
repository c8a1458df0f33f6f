//! Forward conductivity problem: `div(sigma grad u) = 0`, `u = f` on the
//! boundary, current density `J = -sigma grad u` and its magnitude `a = |J|`.
//!
//! The operator is the conservative five-point stencil with harmonic-mean
//! face conductivities. Dirichlet rows are eliminated and the remaining SPD
//! system is solved by Jacobi-preconditioned conjugate gradients, starting
//! from the transfinite interpolation of the boundary data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient, hessian_abs_sum, BoundaryTrace, Grid2D, ScalarField, VectorField2};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Threshold below which `|grad u|` counts as a critical point.
pub const CRITICAL_GRADIENT: f64 = 1e-10;

/// Constants `m, M` (current magnitude) and `sigma0, sigma1, sigma2`
/// (conductivity bounds and its discrete C^2 proxy bound).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityBounds {
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl AdmissibilityBounds {
    pub fn new(m: f64, big_m: f64, sigma0: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        let b = Self { m, big_m, sigma0, sigma1, sigma2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.m
            && self.m <= self.big_m
            && 0.0 < self.sigma0
            && self.sigma0 <= self.sigma1
            && self.sigma1 <= self.sigma2
            && [self.m, self.big_m, self.sigma0, self.sigma1, self.sigma2].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "bounds need 0 < m <= M and 0 < sigma0 <= sigma1 <= sigma2, got {self:?}"
            )))
        }
    }
}

impl Default for AdmissibilityBounds {
    fn default() -> Self {
        Self { m: 0.05, big_m: 20.0, sigma0: 0.1, sigma1: 10.0, sigma2: 1e4 }
    }
}

/// Discrete stand-in for `||sigma||_{C^2}`: node maximum of
/// `|sigma| + |grad sigma| + |sigma_xx| + 2|sigma_xy| + |sigma_yy|`.
pub fn sigma2_proxy(sigma: &ScalarField) -> f64 {
    let g = gradient(sigma).magnitude();
    let h = hessian_abs_sum(sigma);
    (0..sigma.grid().len()).map(|k| sigma.values()[k].abs() + g.values()[k] + h.values()[k]).fold(0.0, f64::max)
}

/// Checks `sigma0 < sigma <= sigma1` at every node; the error names the
/// violated bound.
pub fn check_sigma_bounds(sigma: &ScalarField, bounds: &AdmissibilityBounds) -> Result<()> {
    let (lo, hi) = (sigma.min(), sigma.max());
    if lo <= 0.0 {
        return Err(Error::Inadmissible(format!(
            "conductivity must be positive (sigma0 = {} bound violated: min sigma = {lo})",
            bounds.sigma0
        )));
    }
    if lo <= bounds.sigma0 {
        return Err(Error::Inadmissible(format!("min sigma = {lo} violates sigma > sigma0 = {}", bounds.sigma0)));
    }
    if hi > bounds.sigma1 {
        return Err(Error::Inadmissible(format!("max sigma = {hi} violates sigma <= sigma1 = {}", bounds.sigma1)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityProblem {
    sigma: ScalarField,
    f: BoundaryTrace,
    bounds: AdmissibilityBounds,
}

impl ConductivityProblem {
    pub fn new(sigma: ScalarField, f: BoundaryTrace, bounds: AdmissibilityBounds) -> Result<Self> {
        if sigma.grid() != f.grid() {
            return Err(Error::GridMismatch);
        }
        bounds.validate()?;
        check_sigma_bounds(&sigma, &bounds)?;
        Ok(Self { sigma, f, bounds })
    }

    pub fn sigma(&self) -> &ScalarField {
        &self.sigma
    }

    pub fn trace(&self) -> &BoundaryTrace {
        &self.f
    }

    pub fn bounds(&self) -> &AdmissibilityBounds {
        &self.bounds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSolution {
    pub sigma: ScalarField,
    pub u: ScalarField,
    pub current: VectorField2,
    /// `|J|`, the interior measurement.
    pub a: ScalarField,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Face conductivities of the five-point operator. `east[k]` couples node
/// `k` to `k + 1`, `north[k]` couples `k` to `k + nx`; both are already
/// divided by the squared spacing.
pub(crate) struct Stencil {
    pub grid: Grid2D,
    pub east: Vec<f64>,
    pub north: Vec<f64>,
}

impl Stencil {
    pub fn new(sigma: &ScalarField) -> Self {
        let g = *sigma.grid();
        let s = sigma.values();
        let (nx, ny) = (g.nx(), g.ny());
        let (ihx2, ihy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
        let mut east = vec![0.0; g.len()];
        let mut north = vec![0.0; g.len()];
        for j in 0..ny {
            for i in 0..nx {
                let k = g.index(i, j);
                if i + 1 < nx {
                    east[k] = harmonic(s[k], s[k + 1]) * ihx2;
                }
                if j + 1 < ny {
                    north[k] = harmonic(s[k], s[k + nx]) * ihy2;
                }
            }
        }
        Self { grid: g, east, north }
    }

    /// `(A u)_k = sum over faces of c * (u_k - u_nb)` at interior node `k`.
    #[inline]
    fn apply_at(&self, u: &[f64], k: usize) -> f64 {
        let nx = self.grid.nx();
        let (e, w, n, s) = (self.east[k], self.east[k - 1], self.north[k], self.north[k - nx]);
        (e + w + n + s) * u[k] - e * u[k + 1] - w * u[k - 1] - n * u[k + nx] - s * u[k - nx]
    }

    fn diagonal_at(&self, k: usize) -> f64 {
        let nx = self.grid.nx();
        self.east[k] + self.east[k - 1] + self.north[k] + self.north[k - nx]
    }

    fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        let g = self.grid;
        (1..g.ny() - 1).flat_map(move |j| (1..g.nx() - 1).map(move |i| g.index(i, j)))
    }

    /// Net outward flux `sum_faces c * (u_k - u_nb)` at each interior node,
    /// evaluated on the full field (boundary values included).
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; u.len()];
        for k in self.interior() {
            r[k] = self.apply_at(u, k);
        }
        r
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the Dirichlet problem. On success the relative algebraic
/// residual `||A u - b|| / ||b||` is at most `tol`.
pub fn solve_conductivity(p: &ConductivityProblem, tol: f64) -> Result<ForwardSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let g = *p.sigma.grid();
    let stencil = Stencil::new(&p.sigma);
    let interior: Vec<usize> = stencil.interior().collect();

    // u = boundary data + interior unknowns; b = -A_{I,B} f
    let mut boundary_only = vec![0.0; g.len()];
    p.f.apply(&mut boundary_only);
    let b_full = stencil.residual(&boundary_only);
    let b_norm = interior.iter().map(|&k| b_full[k] * b_full[k]).sum::<f64>().sqrt();

    let mut u = p.f.coons_extension().into_values();
    let mut r = vec![0.0; g.len()];
    let res_full = stencil.residual(&u);
    for &k in &interior {
        r[k] = -res_full[k];
    }
    let inv_diag: Vec<f64> =
        (0..g.len()).map(|k| if g.is_boundary_index(k) { 0.0 } else { 1.0 / stencil.diagonal_at(k) }).collect();
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let rel = |r: &[f64]| dot(r, r).sqrt() / scale;

    let max_iter = 1000 + 20 * (g.nx() + g.ny()) * 4;
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut d = z.clone();
    let mut ad = vec![0.0; g.len()];
    let mut rz = dot(&r, &z);
    let mut residual = rel(&r);
    let mut iterations = 0;
    while residual > tol {
        if iterations >= max_iter {
            return Err(Error::LinearSolve { iterations, residual });
        }
        for &k in &interior {
            ad[k] = stencil.apply_at(&d, k);
        }
        let dad = dot(&d, &ad);
        if dad <= 0.0 {
            return Err(Error::LinearSolve { iterations, residual });
        }
        let alpha = rz / dad;
        for &k in &interior {
            u[k] += alpha * d[k];
            r[k] -= alpha * ad[k];
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for &k in &interior {
            d[k] = z[k] + beta * d[k];
        }
        iterations += 1;
        residual = rel(&r);
    }

    // recompute the true residual; recurrences drift slightly
    let true_res = stencil.residual(&u);
    let residual_norm = interior.iter().map(|&k| true_res[k] * true_res[k]).sum::<f64>().sqrt() / scale;

    let u = ScalarField::from_vec(g, u);
    let current = current_density(&p.sigma, &u)?;
    let a = current.magnitude();
    Ok(ForwardSolution { sigma: p.sigma.clone(), u, current, a, residual_norm, iterations })
}

/// `J = -sigma * grad u`.
pub fn current_density(sigma: &ScalarField, u: &ScalarField) -> Result<VectorField2> {
    sigma.same_grid(u)?;
    let grad = gradient(u);
    let neg = sigma.map(|s| -s);
    grad.scale(&neg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub a_min: f64,
    pub a_max: f64,
    pub grad_min: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Discrete proxy for the C^2 norm of sigma.
    pub sigma2_proxy: f64,
    pub current_within_bounds: bool,
    pub sigma_within_bounds: bool,
    pub sigma2_within_bound: bool,
    pub gradient_nonvanishing: bool,
    /// Nodes with `|grad u| <= 1e-10`.
    pub critical_nodes: Vec<usize>,
    pub passed: bool,
}

/// Report-only check of `m <= |J| <= M`, `sigma0 < sigma <= sigma1` and
/// `|grad u| > 0`.
pub fn admissibility_check(sol: &ForwardSolution, b: &AdmissibilityBounds) -> AdmissibilityReport {
    let grad = gradient(&sol.u).magnitude();
    let critical_nodes: Vec<usize> =
        grad.values().iter().enumerate().filter(|(_, &v)| v <= CRITICAL_GRADIENT).map(|(k, _)| k).collect();
    let (a_min, a_max) = (sol.a.min(), sol.a.max());
    let (sigma_min, sigma_max) = (sol.sigma.min(), sol.sigma.max());
    let proxy = sigma2_proxy(&sol.sigma);
    let current_within_bounds = b.m <= a_min && a_max <= b.big_m;
    let sigma_within_bounds = b.sigma0 < sigma_min && sigma_max <= b.sigma1;
    let sigma2_within_bound = proxy <= b.sigma2;
    let gradient_nonvanishing = critical_nodes.is_empty();
    AdmissibilityReport {
        a_min,
        a_max,
        grad_min: grad.min(),
        sigma_min,
        sigma_max,
        sigma2_proxy: proxy,
        current_within_bounds,
        sigma_within_bounds,
        sigma2_within_bound,
        gradient_nonvanishing,
        critical_nodes,
        passed: current_within_bounds && sigma_within_bounds && sigma2_within_bound && gradient_nonvanishing,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TraceKind {
    /// Trace of `x`.
    Linear,
    /// Trace of `cos(theta) x + sin(theta) y`.
    TiltedLinear { theta: f64 },
}

/// Boundary data with exactly two critical points along the boundary.
pub fn two_to_one_trace(grid: Grid2D, kind: TraceKind) -> BoundaryTrace {
    let (c, s) = match kind {
        TraceKind::Linear => (1.0, 0.0),
        TraceKind::TiltedLinear { theta } => (theta.cos(), theta.sin()),
    };
    BoundaryTrace::from_fn(grid, |x, y| c * x + s * y).expect("linear trace is finite")
}
