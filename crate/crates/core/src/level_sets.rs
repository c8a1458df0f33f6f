//! Level-set extraction (marching squares) and level-set geometry.
//!
//! Contours are built from linear interpolation along cell edges; saddle
//! cells are split according to the sign of the cell-center average. Open
//! polylines always start at the boundary endpoint with the smaller
//! counterclockwise perimeter coordinate, so `points[0]` lies on the
//! boundary.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient, Grid2D, ScalarField};

/// A maximal connected piece of `{u = t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub points: Vec<[f64; 2]>,
    /// Closed loops repeat their first point at the end.
    pub closed: bool,
    pub arclength: f64,
    pub boundary_reaching: bool,
}

impl Component {
    fn new(mut points: Vec<[f64; 2]>, closed: bool, grid: &Grid2D) -> Self {
        // Tie-breaking at nodes leaves slivers a few ulps long; their
        // directions are noise.
        let eps = 1e-9 * grid.h();
        let last = *points.last().unwrap();
        points.dedup_by(|b, a| dist(*a, *b) <= eps);
        if points.len() > 1 && dist(*points.last().unwrap(), last) > 0.0 {
            *points.last_mut().unwrap() = last;
        }
        let arclength = points.windows(2).map(|w| dist(w[0], w[1])).sum();
        let tol = 0.5 * grid.h();
        let boundary_reaching = !closed
            && (grid.distance_to_boundary(points[0]) <= tol
                || grid.distance_to_boundary(*points.last().unwrap()) <= tol);
        Self { points, closed, arclength, boundary_reaching }
    }

    pub fn start(&self) -> [f64; 2] {
        self.points[0]
    }

    pub fn end(&self) -> [f64; 2] {
        *self.points.last().unwrap()
    }

    /// Cumulative chord length at each vertex.
    pub fn cumulative_length(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.points.len());
        out.push(0.0);
        for w in self.points.windows(2) {
            acc += dist(w[0], w[1]);
            out.push(acc);
        }
        out
    }

    pub fn reversed(&self) -> Self {
        let mut c = self.clone();
        c.points.reverse();
        c
    }

    /// Distance from `p` to the polyline.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        if self.points.len() == 1 {
            return dist(self.points[0], p);
        }
        self.points.windows(2).map(|w| point_segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min)
    }
}

/// Arclength parametrization of a polyline.
struct Parametrized<'a> {
    points: &'a [[f64; 2]],
    cumulative: Vec<f64>,
}

impl<'a> Parametrized<'a> {
    fn new(c: &'a Component) -> Self {
        Self { points: &c.points, cumulative: c.cumulative_length() }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Index of the segment containing arclength `s`.
    fn segment(&self, s: f64) -> usize {
        let n = self.points.len();
        let k = self.cumulative.partition_point(|&c| c <= s);
        k.clamp(1, n - 1) - 1
    }

    fn point(&self, s: f64) -> [f64; 2] {
        let k = self.segment(s);
        let (a, b) = (self.points[k], self.points[k + 1]);
        let len = self.cumulative[k + 1] - self.cumulative[k];
        if len <= 0.0 {
            return a;
        }
        let r = ((s - self.cumulative[k]) / len).clamp(0.0, 1.0);
        [a[0] + r * (b[0] - a[0]), a[1] + r * (b[1] - a[1])]
    }

    /// Unit tangent of the nearest non-degenerate segment at `s`.
    fn tangent(&self, s: f64) -> [f64; 2] {
        let k0 = self.segment(s);
        let nseg = self.points.len() - 1;
        for d in 0..nseg {
            for k in [k0 + d, k0.wrapping_sub(d)] {
                if k < nseg {
                    let (a, b) = (self.points[k], self.points[k + 1]);
                    let len = dist(a, b);
                    if len > 0.0 {
                        return [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
                    }
                }
            }
        }
        [0.0, 0.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub t: f64,
    pub components: Vec<Component>,
    /// Set when `t` is outside the open range of the field.
    pub out_of_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetFamily {
    pub levels: Vec<LevelSet>,
}

impl LevelSetFamily {
    /// `t,component_id,s,x,y`, one row per polyline vertex.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,component_id,s,x,y")?;
        for level in &self.levels {
            for (id, c) in level.components.iter().enumerate() {
                for (p, s) in c.points.iter().zip(c.cumulative_length()) {
                    writeln!(w, "{:.16e},{id},{s:.16e},{:.16e},{:.16e}", level.t, p[0], p[1])?;
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    if l2 == 0.0 {
        return dist(p, a);
    }
    let r = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0);
    dist(p, [a[0] + r * dx, a[1] + r * dy])
}

/// Node values as seen by the contouring: a value equal to `t` is nudged
/// up by `1e-12 * range` so every node is strictly above or below.
struct Classifier<'a> {
    values: &'a [f64],
    t: f64,
    nudge: f64,
}

impl Classifier<'_> {
    #[inline]
    fn value(&self, k: usize) -> f64 {
        let v = self.values[k];
        if v == self.t {
            v + self.nudge
        } else {
            v
        }
    }
}

/// Calls `emit(edge_a, point_a, edge_b, point_b)` for every contour segment
/// of `{u = t}`, cell by cell in row-major order.
fn march(u: &ScalarField, t: f64, mut emit: impl FnMut(usize, [f64; 2], usize, [f64; 2])) {
    let g = *u.grid();
    let range = u.max() - u.min();
    let cls = Classifier { values: u.values(), t, nudge: 1e-12 * range.max(f64::MIN_POSITIVE) };
    let nx = g.nx();
    let h_edge = |i: usize, j: usize| 2 * (j * nx + i);
    let v_edge = |i: usize, j: usize| 2 * (j * nx + i) + 1;
    let crossing = |ka: usize, kb: usize| -> [f64; 2] {
        let (va, vb) = (cls.value(ka), cls.value(kb));
        let r = (t - va) / (vb - va);
        let (pa, pb) = (g.point(ka), g.point(kb));
        [pa[0] + r * (pb[0] - pa[0]), pa[1] + r * (pb[1] - pa[1])]
    };

    for j in 0..g.ny() - 1 {
        for i in 0..nx - 1 {
            let k00 = g.index(i, j);
            let k10 = k00 + 1;
            let k01 = k00 + nx;
            let k11 = k01 + 1;
            let (v00, v10, v11, v01) = (cls.value(k00), cls.value(k10), cls.value(k11), cls.value(k01));
            let case = (v00 > t) as u8 | ((v10 > t) as u8) << 1 | ((v11 > t) as u8) << 2 | ((v01 > t) as u8) << 3;
            if case == 0 || case == 15 {
                continue;
            }
            // edges: bottom, right, top, left
            let bottom = || (h_edge(i, j), crossing(k00, k10));
            let right = || (v_edge(i + 1, j), crossing(k10, k11));
            let top = || (h_edge(i, j + 1), crossing(k01, k11));
            let left = || (v_edge(i, j), crossing(k00, k01));
            let mut seg = |a: (usize, [f64; 2]), b: (usize, [f64; 2])| emit(a.0, a.1, b.0, b.1);
            let center_above = 0.25 * (v00 + v10 + v11 + v01) > t;
            match case {
                1 | 14 => seg(left(), bottom()),
                2 | 13 => seg(bottom(), right()),
                3 | 12 => seg(left(), right()),
                4 | 11 => seg(right(), top()),
                6 | 9 => seg(bottom(), top()),
                7 | 8 => seg(left(), top()),
                5 => {
                    // v00 and v11 above
                    if center_above {
                        seg(bottom(), right());
                        seg(left(), top());
                    } else {
                        seg(left(), bottom());
                        seg(right(), top());
                    }
                }
                10 => {
                    // v10 and v01 above
                    if center_above {
                        seg(left(), bottom());
                        seg(right(), top());
                    } else {
                        seg(bottom(), right());
                        seg(left(), top());
                    }
                }
                _ => unreachable!(),
            }
        }
    }
}

fn in_open_range(u: &ScalarField, t: f64) -> bool {
    t > u.min() && t < u.max()
}

/// Total length of `{u = t}` without assembling components.
pub fn total_length(u: &ScalarField, t: f64) -> f64 {
    if !in_open_range(u, t) {
        return 0.0;
    }
    let mut len = 0.0;
    march(u, t, |_, a, _, b| len += dist(a, b));
    len
}

/// Connected components of `{u = t}`. A level outside the open range of
/// `u` yields an empty set with `out_of_range` set.
pub fn extract_level_set(u: &ScalarField, t: f64) -> LevelSet {
    if !in_open_range(u, t) {
        return LevelSet { t, components: Vec::new(), out_of_range: true };
    }
    let grid = *u.grid();
    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut points: HashMap<usize, [f64; 2]> = HashMap::new();
    let mut adjacency: HashMap<usize, [usize; 2]> = HashMap::new();
    const NONE: usize = usize::MAX;
    march(u, t, |ea, pa, eb, pb| {
        segments.push((ea, eb));
        points.insert(ea, pa);
        points.insert(eb, pb);
        for (e, other) in [(ea, eb), (eb, ea)] {
            let slot = adjacency.entry(e).or_insert([NONE, NONE]);
            if slot[0] == NONE {
                slot[0] = other;
            } else {
                slot[1] = other;
            }
        }
    });

    // deterministic start order: first appearance in the cell scan
    let mut order = Vec::with_capacity(points.len());
    let mut seen = HashMap::with_capacity(points.len());
    for &(a, b) in &segments {
        for e in [a, b] {
            if seen.insert(e, ()).is_none() {
                order.push(e);
            }
        }
    }

    let mut visited: HashMap<usize, ()> = HashMap::with_capacity(points.len());
    let walk = |start: usize, visited: &mut HashMap<usize, ()>| -> (Vec<[f64; 2]>, bool) {
        let mut chain = vec![points[&start]];
        visited.insert(start, ());
        let mut prev = NONE;
        let mut cur = start;
        loop {
            let nb = adjacency[&cur];
            let next = if nb[0] != prev { nb[0] } else { nb[1] };
            if next == NONE {
                return (chain, false);
            }
            if next == start {
                chain.push(points[&start]);
                return (chain, true);
            }
            if visited.contains_key(&next) {
                return (chain, false);
            }
            visited.insert(next, ());
            chain.push(points[&next]);
            prev = cur;
            cur = next;
        }
    };

    let mut components = Vec::new();
    for &e in &order {
        if !visited.contains_key(&e) && adjacency[&e][1] == NONE {
            let (chain, closed) = walk(e, &mut visited);
            let mut c = Component::new(chain, closed, &grid);
            if grid.perimeter_parameter(c.end()) < grid.perimeter_parameter(c.start()) {
                c = c.reversed();
            }
            components.push(c);
        }
    }
    for &e in &order {
        if !visited.contains_key(&e) {
            let (chain, closed) = walk(e, &mut visited);
            components.push(Component::new(chain, closed, &grid));
        }
    }
    LevelSet { t, components, out_of_range: false }
}

/// `n` equispaced levels strictly inside the range: `min + k * range / (n + 1)`.
pub fn sample_levels(u: &ScalarField, n: usize) -> Vec<f64> {
    let (lo, hi) = (u.min(), u.max());
    (1..=n).map(|k| lo + (hi - lo) * k as f64 / (n + 1) as f64).collect()
}

pub fn extract_family(u: &ScalarField, levels: &[f64]) -> LevelSetFamily {
    LevelSetFamily { levels: levels.par_iter().map(|&t| extract_level_set(u, t)).collect() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetStats {
    /// Longest component over the sampled levels.
    pub l_m_hat: f64,
    pub boundary_reach_fraction: f64,
    pub level_count: usize,
    pub component_count: usize,
    pub closed_count: usize,
}

pub fn stats_of(family: &LevelSetFamily) -> LevelSetStats {
    let comps: Vec<&Component> = family.levels.iter().flat_map(|l| &l.components).collect();
    let reaching = comps.iter().filter(|c| c.boundary_reaching).count();
    LevelSetStats {
        l_m_hat: comps.iter().map(|c| c.arclength).fold(0.0, f64::max),
        boundary_reach_fraction: if comps.is_empty() { 0.0 } else { reaching as f64 / comps.len() as f64 },
        level_count: family.levels.len(),
        component_count: comps.len(),
        closed_count: comps.iter().filter(|c| c.closed).count(),
    }
}

pub fn level_set_stats(u: &ScalarField, n_levels: usize) -> Result<LevelSetStats> {
    if n_levels < 8 {
        return Err(Error::InvalidArgument(format!("need at least 8 levels, got {n_levels}")));
    }
    if u.max() - u.min() <= 0.0 {
        return Err(Error::InvalidArgument("field is constant; it has no level sets".into()));
    }
    Ok(stats_of(&extract_family(u, &sample_levels(u, n_levels))))
}

/// Where and how to probe the level-set structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellStructuredSpec {
    pub points: Vec<[f64; 2]>,
    /// Unit vectors (normalized on use).
    pub directions: Vec<[f64; 2]>,
    /// Displacements `t` along each direction, in length units.
    pub offsets: Vec<f64>,
    /// Arclength samples per compared pair.
    pub samples: usize,
    /// Minimum `|grad u|` at a sampled point.
    pub gradient_floor: f64,
}

impl WellStructuredSpec {
    /// 3x3 interior points, axis and diagonal directions, offsets `4h, 8h`.
    pub fn default_for(grid: &Grid2D) -> Self {
        let [ox, oy] = grid.origin();
        let fr = [0.3, 0.5, 0.7];
        let points = fr
            .iter()
            .flat_map(|&fy| fr.iter().map(move |&fx| (fx, fy)))
            .map(|(fx, fy)| [ox + fx * grid.width(), oy + fy * grid.height()])
            .collect();
        let d = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            points,
            directions: vec![[1.0, 0.0], [0.0, 1.0], [d, d]],
            offsets: vec![4.0 * grid.h(), 8.0 * grid.h()],
            samples: 64,
            gradient_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellStructuredEstimate {
    /// Largest tangent difference quotient `|gamma_t'(s) - gamma'(s)| / t`.
    pub k_hat: f64,
    /// Largest position difference quotient `|gamma_t(s) - gamma(s)| / t`.
    pub f_sup_hat: f64,
    pub samples_used: usize,
    pub skipped_ambiguous: usize,
    pub skipped_closed: usize,
    pub skipped_other: usize,
}

/// Component of `{u = u(p)}` passing closest to `p`.
fn component_through(u: &ScalarField, p: [f64; 2]) -> Option<Component> {
    let level = extract_level_set(u, u.interpolate(p));
    level.components.into_iter().map(|c| (c.distance_to(p), c)).min_by(|a, b| a.0.total_cmp(&b.0)).map(|(_, c)| c)
}

enum Probe {
    Quotients { k: f64, f: f64 },
    Ambiguous,
    Closed,
    Skipped,
}

fn probe(u: &ScalarField, x: [f64; 2], dir: [f64; 2], t: f64, samples: usize) -> Probe {
    let grid = u.grid();
    let xt = [x[0] + t * dir[0], x[1] + t * dir[1]];
    if !grid.contains(xt) || grid.distance_to_boundary(xt) <= 0.0 {
        return Probe::Skipped;
    }
    let (Some(gamma), Some(gamma_t)) = (component_through(u, x), component_through(u, xt)) else {
        return Probe::Skipped;
    };
    if gamma.closed || gamma_t.closed || !gamma.boundary_reaching || !gamma_t.boundary_reaching {
        return Probe::Closed;
    }
    let z = gamma.start();
    let (d0, d1) = (dist(gamma_t.start(), z), dist(gamma_t.end(), z));
    if (d0 - d1).abs() < grid.h() {
        return Probe::Ambiguous;
    }
    let gamma_t = if d1 < d0 { gamma_t.reversed() } else { gamma_t };
    let (a, b) = (Parametrized::new(&gamma), Parametrized::new(&gamma_t));
    let len = a.length().min(b.length());
    if len <= 0.0 || samples < 2 {
        return Probe::Skipped;
    }
    let (mut kq, mut fq) = (0.0f64, 0.0f64);
    for n in 0..samples {
        let s = len * n as f64 / (samples - 1) as f64;
        fq = fq.max(dist(a.point(s), b.point(s)) / t);
        kq = kq.max(dist(a.tangent(s), b.tangent(s)) / t);
    }
    Probe::Quotients { k: kq, f: fq }
}

/// Finite-offset estimates of the tangent and position difference
/// quotients of nearby level curves. A finite sampler can only falsify a
/// uniform bound; the result reports what was observed over the samples.
pub fn well_structured_estimate(u: &ScalarField, spec: &WellStructuredSpec) -> Result<WellStructuredEstimate> {
    let grad = gradient(u).magnitude();
    let mut jobs = Vec::new();
    let mut skipped_other = 0;
    for &x in &spec.points {
        if !u.grid().contains(x) || grad.interpolate(x) < spec.gradient_floor {
            skipped_other += spec.directions.len() * spec.offsets.len();
            continue;
        }
        for &d in &spec.directions {
            let n = d[0].hypot(d[1]);
            if n == 0.0 {
                return Err(Error::InvalidArgument("zero probe direction".into()));
            }
            for &t in &spec.offsets {
                jobs.push((x, [d[0] / n, d[1] / n], t));
            }
        }
    }
    let results: Vec<Probe> = jobs.par_iter().map(|&(x, d, t)| probe(u, x, d, t, spec.samples)).collect();
    let mut est = WellStructuredEstimate {
        k_hat: 0.0,
        f_sup_hat: 0.0,
        samples_used: 0,
        skipped_ambiguous: 0,
        skipped_closed: 0,
        skipped_other,
    };
    for r in results {
        match r {
            Probe::Quotients { k, f } => {
                est.k_hat = est.k_hat.max(k);
                est.f_sup_hat = est.f_sup_hat.max(f);
                est.samples_used += 1;
            }
            Probe::Ambiguous => est.skipped_ambiguous += 1,
            Probe::Closed => est.skipped_closed += 1,
            Probe::Skipped => est.skipped_other += 1,
        }
    }
    if est.samples_used == 0 {
        return Err(Error::InvalidArgument("no usable level-set samples".into()));
    }
    Ok(est)
}
