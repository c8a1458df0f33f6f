//! Perturbation experiments for the stability estimates.
//!
//! A [`PerturbationFamily`] scales a base conductivity by `1 + eps*eta` for
//! a ladder of `eps`. Each member is solved against the same boundary data
//! and compared with the base solution ([`StabilityRun`]); the sweep then
//! fits log-log slopes of every error against `||a - a~||_inf` or
//! `|| |J| - |J~| ||_inf` and checks that `LHS / RHS^alpha` stays bounded
//! along the ladder ([`StabilityReport`]).
//!
//! All `L^inf` quantities are node maxima; `L^1` quantities use the
//! trapezoidal rule.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient, hessian_l1, integrate, BoundaryTrace, ScalarField, VectorField2};
use crate::forward::{
    check_sigma_bounds, sigma2_proxy, solve_conductivity, AdmissibilityBounds, ConductivityProblem, ForwardSolution,
    DEFAULT_TOL,
};
use crate::least_gradient::{defect_field, energy};

/// An inequality whose left-hand side is at most this is treated as
/// trivially satisfied (identical solutions up to solver tolerance).
pub const VANISHING: f64 = 1e-9;

pub const LINF_NOTE: &str = "L-infinity quantities are node maxima; L1 quantities use trapezoidal quadrature";

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationFamily {
    sigma: ScalarField,
    f: BoundaryTrace,
    eta: ScalarField,
    epsilons: Vec<f64>,
    bounds: AdmissibilityBounds,
}

/// A ladder member left out of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub epsilon: f64,
    pub reason: String,
}

impl PerturbationFamily {
    /// `eta` is rescaled to unit node maximum. The ladder must be strictly
    /// decreasing and positive.
    pub fn new(
        sigma: ScalarField,
        f: BoundaryTrace,
        eta: ScalarField,
        epsilons: Vec<f64>,
        bounds: AdmissibilityBounds,
    ) -> Result<Self> {
        sigma.same_grid(&eta)?;
        if sigma.grid() != f.grid() {
            return Err(Error::GridMismatch);
        }
        bounds.validate()?;
        check_sigma_bounds(&sigma, &bounds)?;
        let scale = eta.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return Err(Error::InvalidArgument("perturbation direction eta vanishes identically".into()));
        }
        if epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument("ladder values must be positive and finite".into()));
        }
        if epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("ladder must be strictly decreasing".into()));
        }
        let eta = eta.map(|v| v / scale);
        Ok(Self { sigma, f, eta, epsilons, bounds })
    }

    /// `2^-1, ..., 2^-k`.
    pub fn dyadic_ladder(k: usize) -> Vec<f64> {
        (1..=k as i32).map(|p| 2f64.powi(-p)).collect()
    }

    pub fn sigma(&self) -> &ScalarField {
        &self.sigma
    }

    pub fn trace(&self) -> &BoundaryTrace {
        &self.f
    }

    pub fn eta(&self) -> &ScalarField {
        &self.eta
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn bounds(&self) -> &AdmissibilityBounds {
        &self.bounds
    }

    /// `sigma * (1 + eps * eta)`.
    pub fn member(&self, eps: f64) -> ScalarField {
        self.sigma.zip_map(&self.eta, |s, e| s * (1.0 + eps * e)).expect("same grid")
    }
}

/// Norms of `G = (J~ - J) / sigma~` per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GNorms {
    /// `||grad G_i||_{L1}`.
    pub grad_l1: [f64; 2],
    /// `||D^2 G_i||_{L1}`.
    pub hess_l1: [f64; 2],
    /// `||G_i||_{L1}`.
    pub g_l1: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRun {
    pub epsilon: f64,
    /// `||a - a~||_inf`.
    pub delta_a: f64,
    /// `|| |J| - |J~| ||_inf`; equal to `delta_a` since `a = |J|`.
    pub delta_jmag: f64,
    pub e_j: f64,
    pub e_u: f64,
    pub e_grad: f64,
    pub e_sigma: f64,
    pub energy_gap: f64,
    /// `integral (|J||J~| - J.J~)`.
    pub defect: f64,
    /// `integral | |J| - |J~| |`, the lower end of the bracket on `e_j`.
    pub magnitude_gap_l1: f64,
    /// `integral sqrt(2 (|J||J~| - J.J~))`.
    pub sqrt_defect_l1: f64,
    pub gn: GNorms,
}

impl StabilityRun {
    /// `magnitude_gap_l1 <= e_j <= magnitude_gap_l1 + sqrt_defect_l1 + 1e-8`.
    /// The lower end allows `1e-12` relative rounding.
    pub fn bracket_holds(&self) -> bool {
        let lower = self.magnitude_gap_l1 <= self.e_j * (1.0 + 1e-12) + 1e-15;
        let upper = self.e_j <= self.magnitude_gap_l1 + self.sqrt_defect_l1 + 1e-8;
        lower && upper
    }

    pub fn is_finite(&self) -> bool {
        let g = &self.gn;
        [
            self.delta_a,
            self.delta_jmag,
            self.e_j,
            self.e_u,
            self.e_grad,
            self.e_sigma,
            self.energy_gap,
            self.defect,
            self.magnitude_gap_l1,
            self.sqrt_defect_l1,
        ]
        .iter()
        .chain(&g.grad_l1)
        .chain(&g.hess_l1)
        .chain(&g.g_l1)
        .all(|v| v.is_finite())
    }
}

/// The three norms of each component of `g` entering the interpolation
/// inequality.
pub fn g_norms(g: &VectorField2) -> GNorms {
    let mut gn = GNorms { grad_l1: [0.0; 2], hess_l1: [0.0; 2], g_l1: [0.0; 2] };
    for (i, comp) in [g.x(), g.y()].into_iter().enumerate() {
        gn.grad_l1[i] = abs_l1(&gradient(comp));
        gn.hess_l1[i] = hessian_l1(comp);
        gn.g_l1[i] = integrate(&comp.map(f64::abs));
    }
    gn
}

/// Checks `m <= |J| <= M` and the conductivity bounds of a solved pair; the
/// message names the violated bound.
fn admissible(sol: &ForwardSolution, b: &AdmissibilityBounds, label: &str) -> Result<()> {
    check_sigma_bounds(&sol.sigma, b).map_err(|e| Error::Inadmissible(format!("{label}: {e}")))?;
    let proxy = sigma2_proxy(&sol.sigma);
    if proxy > b.sigma2 {
        return Err(Error::Inadmissible(format!("{label}: discrete C^2 proxy {proxy} violates sigma2 = {}", b.sigma2)));
    }
    let (lo, hi) = (sol.a.min(), sol.a.max());
    if lo < b.m {
        return Err(Error::Inadmissible(format!("{label}: min |J| = {lo} violates m = {}", b.m)));
    }
    if hi > b.big_m {
        return Err(Error::Inadmissible(format!("{label}: max |J| = {hi} violates M = {}", b.big_m)));
    }
    Ok(())
}

fn solve_checked(
    sigma: ScalarField,
    f: &BoundaryTrace,
    b: &AdmissibilityBounds,
    tol: f64,
    label: &str,
) -> Result<ForwardSolution> {
    let p = ConductivityProblem::new(sigma, f.clone(), *b).map_err(|e| match e {
        Error::Inadmissible(m) => Error::Inadmissible(format!("{label}: {m}")),
        other => other,
    })?;
    let sol = solve_conductivity(&p, tol)?;
    admissible(&sol, b, label)?;
    Ok(sol)
}

fn abs_l1(v: &VectorField2) -> f64 {
    integrate(&v.magnitude())
}

fn diff_l1(a: &ScalarField, b: &ScalarField) -> f64 {
    integrate(&a.zip_map(b, |x, y| (x - y).abs()).expect("same grid"))
}

fn diff_linf(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Every entry of a run from two solved problems.
fn compare(base: &ForwardSolution, pert: &ForwardSolution) -> Result<StabilityRun> {
    let (j, jt) = (&base.current, &pert.current);
    let (jm, jtm) = (j.magnitude(), jt.magnitude());
    let defects = defect_field(j, jt)?;
    let g = *base.u.grid();

    let diff = jt.sub(j)?;
    let inv = pert.sigma.map(|s| 1.0 / s);
    let gn = g_norms(&diff.scale(&inv)?);

    let eps = diff_linf(&pert.sigma.zip_map(&base.sigma, |a, b| a / b)?, &ScalarField::constant(g, 1.0));
    Ok(StabilityRun {
        epsilon: eps,
        delta_a: diff_linf(&base.a, &pert.a),
        delta_jmag: diff_linf(&jm, &jtm),
        e_j: abs_l1(&diff),
        e_u: diff_l1(&base.u, &pert.u),
        e_grad: abs_l1(&gradient(&base.u).sub(&gradient(&pert.u))?),
        e_sigma: diff_l1(&base.sigma, &pert.sigma),
        energy_gap: (energy(&base.a, &base.u)? - energy(&pert.a, &pert.u)?).abs(),
        defect: integrate(&defects),
        magnitude_gap_l1: diff_l1(&jm, &jtm),
        sqrt_defect_l1: integrate(&defects.map(|d| (2.0 * d).sqrt())),
        gn,
    })
}

/// Solves both problems and compares them. `epsilon` of the result is
/// `max |sigma~/sigma - 1|`.
pub fn run_pair(
    sigma: &ScalarField,
    sigma_t: &ScalarField,
    f: &BoundaryTrace,
    bounds: &AdmissibilityBounds,
) -> Result<StabilityRun> {
    sigma.same_grid(sigma_t)?;
    let base = solve_checked(sigma.clone(), f, bounds, DEFAULT_TOL, "sigma")?;
    let pert = solve_checked(sigma_t.clone(), f, bounds, DEFAULT_TOL, "sigma~")?;
    compare(&base, &pert)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS of the log-space residuals.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_exponent(xs: &[f64], ys: &[f64]) -> Result<Fit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!("{} abscissae for {} ordinates", xs.len(), ys.len())));
    }
    if xs.len() < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 points, got {}", xs.len())));
    }
    if let Some((x, y)) = xs.iter().zip(ys).find(|(x, y)| !(**x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::InvalidArgument(format!("nonpositive or non-finite pair ({x}, {y})")));
    }
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all abscissae are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sq: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(Fit { slope, intercept, residual: (sq / n).sqrt(), points: xs.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    EnergyGap,
    Defect,
    EJ,
    EU,
    EGrad,
    ESigma,
}

impl Quantity {
    pub fn of(self, r: &StabilityRun) -> f64 {
        match self {
            Self::EnergyGap => r.energy_gap,
            Self::Defect => r.defect,
            Self::EJ => r.e_j,
            Self::EU => r.e_u,
            Self::EGrad => r.e_grad,
            Self::ESigma => r.e_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    DeltaA,
    DeltaJmag,
}

impl Reference {
    pub fn of(self, r: &StabilityRun) -> f64 {
        match self {
            Self::DeltaA => r.delta_a,
            Self::DeltaJmag => r.delta_jmag,
        }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DeltaA => "delta_a",
            Self::DeltaJmag => "delta_jmag",
        })
    }
}

/// `lhs <= C * rhs^alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: Quantity,
    pub rhs: Reference,
    pub alpha: f64,
}

impl Inequality {
    pub fn new(name: &str, lhs: Quantity, rhs: Reference, alpha: f64) -> Self {
        Self { name: name.into(), lhs, rhs, alpha }
    }
}

/// The estimates exercised by a sweep. The gradient estimate is checked
/// against both references.
pub fn default_inequalities() -> Vec<Inequality> {
    use Quantity::*;
    use Reference::*;
    vec![
        Inequality::new("energy_gap_vs_delta_a", EnergyGap, DeltaA, 1.0),
        Inequality::new("defect_vs_delta_a", Defect, DeltaA, 1.0),
        Inequality::new("e_j_vs_delta_a", EJ, DeltaA, 0.5),
        Inequality::new("e_u_vs_delta_jmag", EU, DeltaJmag, 0.5),
        Inequality::new("e_grad_vs_delta_jmag", EGrad, DeltaJmag, 0.25),
        Inequality::new("e_grad_vs_delta_a", EGrad, DeltaA, 0.25),
        Inequality::new("e_sigma_vs_delta_jmag", ESigma, DeltaJmag, 0.25),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    /// Forward solver relative residual.
    pub tol: f64,
    /// Ladder points (smallest `eps`) used for the slope fits.
    pub fit_points: usize,
    /// Slopes may fall this far below `alpha`.
    pub slope_slack: f64,
    /// Allowed `max / median` of `LHS / RHS^alpha` along the ladder.
    pub boundedness_factor: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, fit_points: 5, slope_slack: 0.1, boundedness_factor: 10.0 }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `max <= factor * median` over the finite, positive entries.
fn bounded(ratios: &[f64], factor: f64) -> (f64, f64, bool) {
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let med = median(ratios);
    let ok = ratios.iter().all(|r| r.is_finite()) && max <= factor * med;
    (max, med, ok)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: Quantity,
    pub rhs: Reference,
    pub alpha: f64,
    pub slope_min: f64,
    pub fit: Option<Fit>,
    /// `max over runs of LHS / RHS^alpha`.
    pub c_hat: f64,
    pub max_ratio: f64,
    pub median_ratio: f64,
    pub bounded: bool,
    pub slope_ok: bool,
    /// Every run had `LHS <= VANISHING`.
    pub trivially_satisfied: bool,
    pub pass: bool,
    pub note: String,
}

fn check_inequality(runs: &[StabilityRun], ineq: &Inequality, params: &SweepParams) -> InequalityCheck {
    let slope_min = ineq.alpha - params.slope_slack;
    let mut out = InequalityCheck {
        name: ineq.name.clone(),
        lhs: ineq.lhs,
        rhs: ineq.rhs,
        alpha: ineq.alpha,
        slope_min,
        fit: None,
        c_hat: 0.0,
        max_ratio: 0.0,
        median_ratio: 0.0,
        bounded: true,
        slope_ok: true,
        trivially_satisfied: false,
        pass: false,
        note: String::new(),
    };
    let live: Vec<&StabilityRun> = runs.iter().filter(|r| ineq.lhs.of(r) > VANISHING).collect();
    if live.is_empty() {
        out.trivially_satisfied = true;
        out.pass = true;
        out.note = format!("left-hand side <= {VANISHING:e} in every run");
        return out;
    }
    if live.iter().any(|r| !(ineq.rhs.of(r) > 0.0)) {
        out.bounded = false;
        out.slope_ok = false;
        out.c_hat = f64::INFINITY;
        out.note = format!("nonzero left-hand side with vanishing {}", ineq.rhs);
        return out;
    }
    let ratios: Vec<f64> = live.iter().map(|r| ineq.lhs.of(r) / ineq.rhs.of(r).powf(ineq.alpha)).collect();
    let (max, med, ok) = bounded(&ratios, params.boundedness_factor);
    out.c_hat = max;
    out.max_ratio = max;
    out.median_ratio = med;
    out.bounded = ok;

    let mut window: Vec<&StabilityRun> = live.clone();
    window.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    window.truncate(params.fit_points.max(4));
    let xs: Vec<f64> = window.iter().map(|r| ineq.rhs.of(r)).collect();
    let ys: Vec<f64> = window.iter().map(|r| ineq.lhs.of(r)).collect();
    match fit_exponent(&xs, &ys) {
        Ok(fit) => {
            out.slope_ok = fit.slope >= slope_min;
            out.fit = Some(fit);
        }
        Err(e) => {
            out.slope_ok = false;
            out.note = format!("no slope fit: {e}");
        }
    }
    out.pass = out.bounded && out.slope_ok && out.c_hat.is_finite();
    out
}

/// Interpolation ratios `r_i = ||grad G_i|| / (||D^2 G_i||^(1/2) ||G_i||^(1/2))`
/// of one run; zero where `G_i` (or its gradient) vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnRatios {
    pub epsilon: f64,
    pub r: [f64; 2],
}

pub fn gn_check(run: &StabilityRun) -> GnRatios {
    let mut r = [0.0; 2];
    for (i, ri) in r.iter_mut().enumerate() {
        let (grad, hess, g) = (run.gn.grad_l1[i], run.gn.hess_l1[i], run.gn.g_l1[i]);
        *ri = if g == 0.0 || grad <= VANISHING { 0.0 } else { grad / (hess.sqrt() * g.sqrt()) };
    }
    GnRatios { epsilon: run.epsilon, r }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnSummary {
    pub ratios: Vec<GnRatios>,
    pub finite: bool,
    pub max: [f64; 2],
    pub median: [f64; 2],
    pub bounded: [bool; 2],
    pub pass: bool,
}

fn summarize_gn(runs: &[StabilityRun], factor: f64) -> GnSummary {
    let ratios: Vec<GnRatios> = runs.iter().map(gn_check).collect();
    let finite = ratios.iter().all(|g| g.r.iter().all(|v| v.is_finite()));
    let mut max = [0.0; 2];
    let mut med = [0.0; 2];
    let mut ok = [true; 2];
    for i in 0..2 {
        let live: Vec<f64> = ratios.iter().map(|g| g.r[i]).filter(|&v| v > 0.0).collect();
        if live.is_empty() {
            continue;
        }
        let (m, d, b) = bounded(&live, factor);
        max[i] = m;
        med[i] = d;
        ok[i] = b;
    }
    GnSummary { pass: finite && ok[0] && ok[1], ratios, finite, max, median: med, bounded: ok }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub note: String,
    pub params: SweepParams,
    /// Ordered by decreasing `eps`.
    pub runs: Vec<StabilityRun>,
    pub exclusions: Vec<Exclusion>,
    pub inequalities: Vec<InequalityCheck>,
    pub gn: GnSummary,
    /// `defect >= 0` in every run.
    pub defect_nonnegative: bool,
    /// The `e_j` bracket of [`StabilityRun::bracket_holds`] in every run.
    pub bracket_holds: bool,
    /// `delta_a` and `delta_jmag` nonincreasing as `eps` decreases.
    pub monotone_ladder: bool,
    pub all_finite: bool,
    pub pass: bool,
}

impl StabilityReport {
    pub fn check(&self, name: &str) -> Option<&InequalityCheck> {
        self.inequalities.iter().find(|c| c.name == name)
    }

    pub fn excluded_fraction(&self) -> f64 {
        let total = self.runs.len() + self.exclusions.len();
        if total == 0 {
            0.0
        } else {
            self.exclusions.len() as f64 / total as f64
        }
    }

    /// One row per run.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "epsilon,delta_a,delta_jmag,e_j,e_u,e_grad,e_sigma,energy_gap,defect,magnitude_gap_l1,sqrt_defect_l1,\
             grad_g1_l1,grad_g2_l1,hess_g1_l1,hess_g2_l1,g1_l1,g2_l1,gn_r1,gn_r2"
        )?;
        for (r, g) in self.runs.iter().zip(&self.gn.ratios) {
            let n = &r.gn;
            let vals = [
                r.epsilon,
                r.delta_a,
                r.delta_jmag,
                r.e_j,
                r.e_u,
                r.e_grad,
                r.e_sigma,
                r.energy_gap,
                r.defect,
                r.magnitude_gap_l1,
                r.sqrt_defect_l1,
                n.grad_l1[0],
                n.grad_l1[1],
                n.hess_l1[0],
                n.hess_l1[1],
                n.g_l1[0],
                n.g_l1[1],
                g.r[0],
                g.r[1],
            ];
            let line: Vec<String> = vals.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Assembles the report from finished runs (ordered by decreasing `eps`).
pub fn assemble_report(
    runs: Vec<StabilityRun>,
    exclusions: Vec<Exclusion>,
    inequalities: &[Inequality],
    params: &SweepParams,
) -> Result<StabilityReport> {
    if runs.len() < 4 {
        return Err(Error::InsufficientLadder { admissible: runs.len(), exclusions });
    }
    let checks: Vec<InequalityCheck> = inequalities.iter().map(|i| check_inequality(&runs, i, params)).collect();
    let gn = summarize_gn(&runs, params.boundedness_factor);
    let defect_nonnegative = runs.iter().all(|r| r.defect >= 0.0);
    let bracket_holds = runs.iter().all(StabilityRun::bracket_holds);
    let monotone_ladder = runs.windows(2).all(|w| w[1].delta_a <= w[0].delta_a && w[1].delta_jmag <= w[0].delta_jmag);
    let all_finite = runs.iter().all(StabilityRun::is_finite);
    let pass = all_finite && defect_nonnegative && bracket_holds && gn.pass && checks.iter().all(|c| c.pass);
    Ok(StabilityReport {
        note: LINF_NOTE.into(),
        params: *params,
        runs,
        exclusions,
        inequalities: checks,
        gn,
        defect_nonnegative,
        bracket_holds,
        monotone_ladder,
        all_finite,
        pass,
    })
}

/// Solves the base problem once and every admissible member in parallel.
/// Inadmissible members are listed in `exclusions`; fewer than four
/// admissible members is an error.
pub fn run_sweep(
    family: &PerturbationFamily,
    inequalities: &[Inequality],
    params: &SweepParams,
) -> Result<StabilityReport> {
    let b = family.bounds;
    let base = solve_checked(family.sigma.clone(), &family.f, &b, params.tol, "sigma")?;
    let results: Vec<(f64, Result<StabilityRun>)> = family
        .epsilons
        .par_iter()
        .map(|&eps| {
            let run = solve_checked(family.member(eps), &family.f, &b, params.tol, &format!("sigma~ at eps = {eps}"))
                .and_then(|pert| compare(&base, &pert))
                .map(|mut r| {
                    r.epsilon = eps;
                    r
                });
            (eps, run)
        })
        .collect();
    let mut runs = Vec::new();
    let mut exclusions = Vec::new();
    for (eps, r) in results {
        match r {
            Ok(run) => runs.push(run),
            Err(Error::Inadmissible(reason)) => exclusions.push(Exclusion { epsilon: eps, reason }),
            Err(e) => return Err(e),
        }
    }
    assemble_report(runs, exclusions, inequalities, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_power_laws() {
        let xs: Vec<f64> = (1..=8).map(|k| 2f64.powi(-k)).collect();
        let f = fit_exponent(&xs, &xs).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && f.residual < 1e-12);
        let ys: Vec<f64> = xs.iter().map(|x| x.sqrt()).collect();
        assert!((fit_exponent(&xs, &ys).unwrap().slope - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_exponent(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_exponent(&[1.0, 2.0, 3.0, 0.0], &[1.0, 2.0, 3.0, 4.0]).is_err());
        assert!(fit_exponent(&[1.0, 2.0, 3.0, 4.0], &[1.0, -2.0, 3.0, 4.0]).is_err());
        assert!(fit_exponent(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    fn zero_run() -> StabilityRun {
        StabilityRun {
            epsilon: 0.0,
            delta_a: 0.0,
            delta_jmag: 0.0,
            e_j: 0.0,
            e_u: 0.0,
            e_grad: 0.0,
            e_sigma: 0.0,
            energy_gap: 0.0,
            defect: 0.0,
            magnitude_gap_l1: 0.0,
            sqrt_defect_l1: 0.0,
            gn: GNorms { grad_l1: [0.0; 2], hess_l1: [0.0; 2], g_l1: [0.0; 2] },
        }
    }

    #[test]
    fn identical_currents_give_zero_ratios() {
        assert_eq!(gn_check(&zero_run()).r, [0.0, 0.0]);
    }

    #[test]
    fn vanishing_lhs_is_trivially_satisfied() {
        let runs: Vec<StabilityRun> =
            (1..=5).map(|k| StabilityRun { epsilon: 2f64.powi(-k), delta_a: 2f64.powi(-k), ..zero_run() }).collect();
        let c = check_inequality(
            &runs,
            &Inequality::new("t", Quantity::EU, Reference::DeltaA, 0.5),
            &SweepParams::default(),
        );
        assert!(c.pass && c.trivially_satisfied);
    }

    #[test]
    fn growing_ratio_is_unbounded() {
        // lhs ~ eps^0.1 against alpha = 1: the ratio blows up as eps shrinks
        let runs: Vec<StabilityRun> = (1..=8)
            .map(|k| {
                let e = 2f64.powi(-2 * k);
                StabilityRun { epsilon: e, delta_a: e, e_u: e.powf(0.1), ..zero_run() }
            })
            .collect();
        let c = check_inequality(
            &runs,
            &Inequality::new("t", Quantity::EU, Reference::DeltaA, 1.0),
            &SweepParams::default(),
        );
        assert!(!c.bounded && !c.slope_ok && !c.pass);
    }
}
