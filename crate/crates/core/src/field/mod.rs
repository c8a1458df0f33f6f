//! Node-centered fields on uniform Cartesian grids.
//!
//! Every field in the crate lives on a [`Grid2D`]: `nx * ny` nodes stored
//! row-major with the bottom row first, so node `(i, j)` sits at
//! `origin + (i * hx, j * hy)` and has flat index `j * nx + i`.
//! Discrete fields stand in for the BV functions of the continuous theory;
//! they are smooth proxies and nothing here claims more than that.

mod io;
mod ops;

pub use io::{read_grid_text, read_trace_csv, write_grid_text, write_trace_csv};
pub use ops::{
    coarea_check, derivative_x, derivative_y, divergence, duality_inner, duality_inner_scalar, gradient,
    hessian_abs_sum, hessian_l1, integrate, lp_norm, CoareaCheck, Norm,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform node grid covering an axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    origin: [f64; 2],
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, hx: f64, hy: f64, origin: [f64; 2]) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes per axis, got {nx}x{ny}")));
        }
        if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacings must be positive, got {hx}, {hy}")));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { nx, ny, hx, hy, origin })
    }

    /// `n x n` nodes on `[0, 1]^2`.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::square(n, 0.0, 1.0)
    }

    /// `n x n` nodes on `[lo, hi]^2`.
    pub fn square(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::InvalidGrid(format!("bad square [{lo}, {hi}] with {n} nodes")));
        }
        let h = (hi - lo) / (n - 1) as f64;
        Self::new(n, n, h, h, [lo, lo])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> f64 {
        (self.nx - 1) as f64 * self.hx
    }

    pub fn height(&self) -> f64 {
        (self.ny - 1) as f64 * self.hy
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Smaller of the two spacings.
    pub fn h(&self) -> f64 {
        self.hx.min(self.hy)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.origin[0] + i as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.origin[1] + j as f64 * self.hy
    }

    pub fn point(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        [self.x(i), self.y(j)]
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    pub fn is_boundary_index(&self, idx: usize) -> bool {
        let (i, j) = self.coords(idx);
        self.is_boundary(i, j)
    }

    /// Boundary node indices in counterclockwise order, starting at the
    /// lower-left corner.
    pub fn boundary_ccw(&self) -> Vec<usize> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = Vec::with_capacity(2 * (nx + ny) - 4);
        out.extend((0..nx).map(|i| self.index(i, 0)));
        out.extend((1..ny).map(|j| self.index(nx - 1, j)));
        out.extend((0..nx - 1).rev().map(|i| self.index(i, ny - 1)));
        out.extend((1..ny - 1).rev().map(|j| self.index(0, j)));
        out
    }

    /// Whether `p` lies in the closed rectangle (with a small tolerance).
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let eps = 1e-12 * (self.width() + self.height());
        p[0] >= self.origin[0] - eps
            && p[0] <= self.origin[0] + self.width() + eps
            && p[1] >= self.origin[1] - eps
            && p[1] <= self.origin[1] + self.height() + eps
    }

    /// Distance from a point inside the rectangle to its boundary.
    pub fn distance_to_boundary(&self, p: [f64; 2]) -> f64 {
        let [x0, y0] = self.origin;
        let dx = (p[0] - x0).min(x0 + self.width() - p[0]);
        let dy = (p[1] - y0).min(y0 + self.height() - p[1]);
        dx.min(dy).max(0.0)
    }

    /// Counterclockwise perimeter coordinate of a boundary point, measured
    /// from the lower-left corner.
    pub fn perimeter_parameter(&self, p: [f64; 2]) -> f64 {
        let (w, ht) = (self.width(), self.height());
        let x = (p[0] - self.origin[0]).clamp(0.0, w);
        let y = (p[1] - self.origin[1]).clamp(0.0, ht);
        let tol = 1e-9 * (w + ht);
        if y <= tol {
            x
        } else if x >= w - tol {
            w + y
        } else if y >= ht - tol {
            w + ht + (w - x)
        } else {
            2.0 * w + ht + (ht - y)
        }
    }
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!("expected {} values, got {}", grid.len(), values.len())));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(k));
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for values known to be finite.
    pub(crate) fn from_vec(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f(x, y)` at every node; fails if any sample is not finite.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|k| {
                let [x, y] = grid.point(k);
                f(x, y)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_grid(other)?;
        Ok(Self::from_vec(self.grid, self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect()))
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Bilinear interpolation at a point of the closed rectangle.
    pub fn interpolate(&self, p: [f64; 2]) -> f64 {
        let g = &self.grid;
        let fx = ((p[0] - g.origin[0]) / g.hx).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((p[1] - g.origin[1]) / g.hy).clamp(0.0, (g.ny - 1) as f64);
        let i = (fx.floor() as usize).min(g.nx - 2);
        let j = (fy.floor() as usize).min(g.ny - 2);
        let (sx, sy) = (fx - i as f64, fy - j as f64);
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        (1.0 - sy) * ((1.0 - sx) * v00 + sx * v10) + sy * ((1.0 - sx) * v01 + sx * v11)
    }
}

/// Pair of scalar components on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2 {
    x: ScalarField,
    y: ScalarField,
}

impl VectorField2 {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        x.same_grid(&y)?;
        Ok(Self { x, y })
    }

    pub fn constant(grid: Grid2D, v: [f64; 2]) -> Self {
        Self { x: ScalarField::constant(grid, v[0]), y: ScalarField::constant(grid, v[1]) }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> [f64; 2]) -> Result<Self> {
        let x = ScalarField::from_fn(grid, |x, y| f(x, y)[0])?;
        let y = ScalarField::from_fn(grid, |x, y| f(x, y)[1])?;
        Ok(Self { x, y })
    }

    pub fn grid(&self) -> &Grid2D {
        self.x.grid()
    }

    pub fn x(&self) -> &ScalarField {
        &self.x
    }

    pub fn y(&self) -> &ScalarField {
        &self.y
    }

    #[inline]
    pub fn at(&self, k: usize) -> [f64; 2] {
        [self.x.values[k], self.y.values[k]]
    }

    /// Pointwise Euclidean norm.
    pub fn magnitude(&self) -> ScalarField {
        ScalarField::from_vec(
            *self.grid(),
            self.x.values.iter().zip(&self.y.values).map(|(a, b)| a.hypot(*b)).collect(),
        )
    }

    pub fn scale(&self, s: &ScalarField) -> Result<Self> {
        Ok(Self { x: self.x.zip_map(s, |a, b| a * b)?, y: self.y.zip_map(s, |a, b| a * b)? })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(Self { x: self.x.zip_map(&other.x, |a, b| a - b)?, y: self.y.zip_map(&other.y, |a, b| a - b)? })
    }
}

/// Dirichlet data: one value per boundary node, counterclockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    grid: Grid2D,
    entries: Vec<(usize, f64)>,
}

impl BoundaryTrace {
    /// Validates that `entries` covers each boundary node exactly once, in
    /// counterclockwise order.
    pub fn new(grid: Grid2D, entries: Vec<(usize, f64)>) -> Result<Self> {
        let ccw = grid.boundary_ccw();
        if entries.len() != ccw.len() {
            return Err(Error::InvalidArgument(format!(
                "trace has {} entries, grid has {} boundary nodes",
                entries.len(),
                ccw.len()
            )));
        }
        for (k, ((idx, v), expected)) in entries.iter().zip(&ccw).enumerate() {
            if idx != expected {
                return Err(Error::InvalidArgument(format!(
                    "trace entry {k} is node {idx}, expected boundary node {expected}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(*idx));
            }
        }
        Ok(Self { grid, entries })
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let entries = grid
            .boundary_ccw()
            .into_iter()
            .map(|k| {
                let [x, y] = grid.point(k);
                (k, f(x, y))
            })
            .collect();
        Self::new(grid, entries)
    }

    /// Restriction of a field to the boundary.
    pub fn from_field(u: &ScalarField) -> Self {
        let grid = *u.grid();
        let entries = grid.boundary_ccw().into_iter().map(|k| (k, u.values()[k])).collect();
        Self { grid, entries }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.1)
    }

    pub fn min(&self) -> f64 {
        self.values().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes the trace values into the boundary nodes of `values`.
    pub fn apply(&self, values: &mut [f64]) {
        for &(k, v) in &self.entries {
            values[k] = v;
        }
    }

    /// Transfinite (Coons) interpolation of the trace into the interior.
    /// Reproduces any `g(x) + h(y)` exactly.
    pub fn coons_extension(&self) -> ScalarField {
        let g = self.grid;
        let mut b = vec![0.0; g.len()];
        self.apply(&mut b);
        let (nx, ny) = (g.nx, g.ny);
        let at = |i: usize, j: usize| b[g.index(i, j)];
        let mut out = b.clone();
        for j in 1..ny - 1 {
            let sy = j as f64 / (ny - 1) as f64;
            for i in 1..nx - 1 {
                let sx = i as f64 / (nx - 1) as f64;
                let px = (1.0 - sx) * at(0, j) + sx * at(nx - 1, j);
                let py = (1.0 - sy) * at(i, 0) + sy * at(i, ny - 1);
                let pxy = (1.0 - sx) * (1.0 - sy) * at(0, 0)
                    + sx * (1.0 - sy) * at(nx - 1, 0)
                    + (1.0 - sx) * sy * at(0, ny - 1)
                    + sx * sy * at(nx - 1, ny - 1);
                out[g.index(i, j)] = px + py - pxy;
            }
        }
        ScalarField::from_vec(g, out)
    }
}
