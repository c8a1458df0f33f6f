//! The acceptance suite as library calls. Each criterion returns its
//! measurements with the bound each was held to; nothing here prints.
//!
//! Reports are deterministic: wall-clock times are kept out of the
//! serialized form and exposed through [`CriterionResult::elapsed`].

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::expr::Expr;
use crate::field::{coarea_check, Grid2D, ScalarField};
use crate::forward::{solve_conductivity, AdmissibilityBounds, ConductivityProblem, ForwardSolution, DEFAULT_TOL};
use crate::least_gradient::{
    dual_certificate, recover_sigma, solve_lgp, solve_lgp_from, LgpProblem, PdParams, DEFAULT_FLOOR,
};
use crate::level_sets::{extract_level_set, level_set_stats, well_structured_estimate, WellStructuredSpec};
use crate::scenario::{sample, TraceSpec, BUMP_SIGMA, LAYERED_SIGMA, SHIFTED_BUMP};
use crate::stability_lab::{default_inequalities, run_sweep, PerturbationFamily, StabilityReport, SweepParams};

/// Grid size (nodes per side) of the main benchmarks.
pub const N: usize = 129;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub name: String,
    /// `None` for machine-dependent values (timings).
    pub value: Option<f64>,
    pub bound: String,
    pub pass: bool,
}

fn le(name: &str, value: f64, bound: f64) -> Measurement {
    Measurement { name: name.into(), value: Some(value), bound: format!("<= {bound:e}"), pass: value <= bound }
}

fn ge(name: &str, value: f64, bound: f64) -> Measurement {
    Measurement { name: name.into(), value: Some(value), bound: format!(">= {bound}"), pass: value >= bound }
}

fn near(name: &str, value: f64, target: f64, tol: f64) -> Measurement {
    Measurement {
        name: name.into(),
        value: Some(value),
        bound: format!("{target} +- {tol:e}"),
        pass: (value - target).abs() <= tol,
    }
}

fn flag(name: &str, ok: bool) -> Measurement {
    Measurement { name: name.into(), value: Some(if ok { 1.0 } else { 0.0 }), bound: "== 1".into(), pass: ok }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: String,
    pub measurements: Vec<Measurement>,
    /// Set when the criterion could not be evaluated.
    pub error: Option<String>,
    pub pass: bool,
    #[serde(skip)]
    pub elapsed: Vec<(String, f64)>,
}

impl CriterionResult {
    fn new(id: u32, title: &str, measurements: Vec<Measurement>) -> Self {
        let pass = measurements.iter().all(|m| m.pass);
        Self { id, title: title.into(), measurements, error: None, pass, elapsed: Vec::new() }
    }

    fn failed(id: u32, title: &str, error: String) -> Self {
        Self { id, title: title.into(), measurements: Vec::new(), error: Some(error), pass: false, elapsed: Vec::new() }
    }

    /// `PASS  3 title: name=value (bound), ...`.
    pub fn line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        let mut parts: Vec<String> = self
            .measurements
            .iter()
            .map(|m| {
                let v = match m.value {
                    Some(v) => format!("{v:.4e}"),
                    None => {
                        self.elapsed.iter().find(|(n, _)| *n == m.name).map_or("-".into(), |(_, s)| format!("{s:.2}"))
                    }
                };
                let mark = if m.pass { "" } else { " !" };
                format!("{}={v} ({}){mark}", m.name, m.bound)
            })
            .collect();
        if let Some(e) = &self.error {
            parts.push(format!("error: {e}"));
        }
        format!("{status} {:>2} {}: {}", self.id, self.title, parts.join(", "))
    }
}

fn unit(n: usize) -> Result<Grid2D> {
    Grid2D::unit_square(n)
}

fn expr(src: &str) -> Expr {
    Expr::parse(src).expect("built-in expression")
}

fn solve(n: usize, sigma: &str, f: &TraceSpec) -> Result<ForwardSolution> {
    let g = unit(n)?;
    let s = expr(sigma);
    let p = ConductivityProblem::new(sample(g, &s)?, f.build(g, Some(&s))?, AdmissibilityBounds::default())?;
    solve_conductivity(&p, DEFAULT_TOL)
}

fn linf_error(u: &ScalarField, exact: impl Fn(f64, f64) -> f64) -> f64 {
    (0..u.grid().len())
        .map(|k| {
            let [x, y] = u.grid().point(k);
            (u.values()[k] - exact(x, y)).abs()
        })
        .fold(0.0, f64::max)
}

fn rel_l1(a: &ScalarField, b: &ScalarField) -> f64 {
    let num: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum();
    num / b.values().iter().map(|v| v.abs()).sum::<f64>()
}

fn layered_exact(x: f64, _: f64) -> f64 {
    (1.0 + x).ln() / std::f64::consts::LN_2
}

/// Layered medium against its closed form: accuracy, observed order and
/// solve time.
pub fn forward_oracle() -> Result<CriterionResult> {
    let mut errs = Vec::new();
    let mut elapsed = 0.0;
    for n in [33, 65, N] {
        let t = Instant::now();
        let sol = solve(n, LAYERED_SIGMA, &TraceSpec::Layered)?;
        if n == N {
            elapsed = t.elapsed().as_secs_f64();
        }
        errs.push(linf_error(&sol.u, layered_exact));
    }
    let o1 = (errs[0] / errs[1]).log2();
    let o2 = (errs[1] / errs[2]).log2();
    let mut r = CriterionResult::new(
        1,
        "forward oracle",
        vec![
            le("u_linf_err_129", errs[2], 1e-3),
            ge("order_33_65", o1, 1.9),
            ge("order_65_129", o2, 1.9),
            Measurement { name: "solve_s_129".into(), value: None, bound: "<= 5 s".into(), pass: elapsed <= 5.0 },
        ],
    );
    r.elapsed.push(("solve_s_129".into(), elapsed));
    Ok(r)
}

/// Constant weight and linear data, iterated from a flat interior start.
pub fn lgp_exactness() -> Result<CriterionResult> {
    let g = unit(N)?;
    let p = LgpProblem::new(
        ScalarField::constant(g, 1.0),
        TraceSpec::Linear.build(g, None)?,
        AdmissibilityBounds::default(),
    )?;
    let sol = solve_lgp_from(&p, &PdParams::for_grid(&g), &ScalarField::constant(g, 0.5))?;
    let cert = dual_certificate(&sol, &p)?;
    let u_err = linf_error(&sol.u, |x, _| x);
    Ok(CriterionResult::new(
        2,
        "least-gradient exactness",
        vec![
            le("u_linf_err", u_err, 1e-3),
            le("max_phi_excess", cert.max_excess, 1e-8),
            le("div_phi_l2", cert.divergence_l2, 1e-2),
            le("alignment_over_energy", cert.alignment_residual / sol.energy, 1e-3),
        ],
    ))
}

/// Bump conductivity through forward solve, least-gradient solve and
/// conductivity recovery.
pub fn cdii_round_trip() -> Result<CriterionResult> {
    let g = unit(N)?;
    let fw = solve(N, BUMP_SIGMA, &TraceSpec::Linear)?;
    let p = LgpProblem::new(fw.a.clone(), TraceSpec::Linear.build(g, None)?, AdmissibilityBounds::default())?;
    let sol = solve_lgp(&p, &PdParams::for_grid(&g))?;
    let rec = recover_sigma(&fw.a, &sol.u, DEFAULT_FLOOR)?;
    Ok(CriterionResult::new(
        3,
        "reconstruction round trip",
        vec![
            le("sigma_rel_l1_err", rel_l1(&rec.sigma, &fw.sigma), 0.05),
            le("floored_fraction", rec.floored_fraction, 0.01),
        ],
    ))
}

/// Gaussian-bump family, `eps = 2^-1 .. 2^-8`, shifted-bump direction.
pub fn bump_sweep() -> Result<StabilityReport> {
    let g = unit(N)?;
    let fam = PerturbationFamily::new(
        sample(g, &expr(BUMP_SIGMA))?,
        TraceSpec::Linear.build(g, None)?,
        sample(g, &expr(SHIFTED_BUMP))?,
        PerturbationFamily::dyadic_ladder(8),
        AdmissibilityBounds::default(),
    )?;
    run_sweep(&fam, &default_inequalities(), &SweepParams::default())
}

/// `sigma = 1`, `sigma~ = 1 + eps`, `eps = 2^-1 .. 2^-6`.
pub fn constant_sweep() -> Result<StabilityReport> {
    let g = unit(N)?;
    let fam = PerturbationFamily::new(
        ScalarField::constant(g, 1.0),
        TraceSpec::Linear.build(g, None)?,
        ScalarField::constant(g, 1.0),
        PerturbationFamily::dyadic_ladder(6),
        AdmissibilityBounds::default(),
    )?;
    run_sweep(&fam, &default_inequalities(), &SweepParams::default())
}

fn slope(rep: &StabilityReport, name: &str) -> f64 {
    rep.check(name).and_then(|c| c.fit).map_or(f64::NAN, |f| f.slope)
}

pub fn rate_suite(bump: &StabilityReport) -> CriterionResult {
    CriterionResult::new(
        4,
        "energy and defect rates",
        vec![
            ge("energy_gap_slope", slope(bump, "energy_gap_vs_delta_a"), 0.9),
            ge("defect_slope", slope(bump, "defect_vs_delta_a"), 0.9),
            flag("defect_nonnegative", bump.defect_nonnegative),
        ],
    )
}

pub fn exponent_suite(bump: &StabilityReport, constant: &StabilityReport) -> CriterionResult {
    let mut ms = Vec::new();
    for (name, min) in [
        ("e_j_vs_delta_a", 0.4),
        ("e_u_vs_delta_jmag", 0.4),
        ("e_grad_vs_delta_jmag", 0.15),
        ("e_sigma_vs_delta_jmag", 0.15),
    ] {
        ms.push(ge(&format!("{name}_slope"), slope(bump, name), min));
    }
    for name in ["e_j_vs_delta_a", "e_u_vs_delta_jmag", "e_grad_vs_delta_jmag", "e_sigma_vs_delta_jmag"] {
        let c = bump.check(name);
        let (max, med) = c.map_or((f64::NAN, f64::NAN), |c| (c.max_ratio, c.median_ratio));
        ms.push(le(&format!("{name}_max_over_median"), max / med, 10.0));
    }
    ms.push(near("constant_family_e_sigma_slope", slope(constant, "e_sigma_vs_delta_jmag"), 1.0, 0.05));
    CriterionResult::new(5, "stability exponents", ms)
}

pub fn reverse_triangle(bump: &StabilityReport) -> CriterionResult {
    let worst_lower = bump.runs.iter().map(|r| r.magnitude_gap_l1 - r.e_j).fold(f64::NEG_INFINITY, f64::max);
    let worst_upper =
        bump.runs.iter().map(|r| r.e_j - r.magnitude_gap_l1 - r.sqrt_defect_l1).fold(f64::NEG_INFINITY, f64::max);
    CriterionResult::new(
        6,
        "current error bracket",
        vec![
            flag("bracket_holds_every_run", bump.bracket_holds),
            le("max_lower_violation", worst_lower, 0.0),
            le("max_upper_violation", worst_upper, 1e-8),
        ],
    )
}

pub fn interpolation_ratios(bump: &StabilityReport) -> CriterionResult {
    let gn = &bump.gn;
    let ratio = |i: usize| if gn.median[i] > 0.0 { gn.max[i] / gn.median[i] } else { 0.0 };
    CriterionResult::new(
        7,
        "interpolation ratios",
        vec![
            flag("all_finite", gn.finite),
            le("r1_max_over_median", ratio(0), 10.0),
            le("r2_max_over_median", ratio(1), 10.0),
        ],
    )
}

pub fn level_set_geometry() -> Result<CriterionResult> {
    let circle = ScalarField::from_fn(Grid2D::square(256, -1.0, 1.0)?, |x, y| x * x + y * y)?;
    let set = extract_level_set(&circle, 0.25);
    let len: f64 = set.components.iter().map(|c| c.arclength).sum();
    let layered = solve(N, LAYERED_SIGMA, &TraceSpec::Layered)?;
    let stats = level_set_stats(&layered.u, 32)?;
    let mut ms = vec![
        near("circle_arclength_rel", len / std::f64::consts::PI, 1.0, 0.01),
        near("layered_l_m_hat", stats.l_m_hat, 1.0, 0.01),
        near("layered_boundary_reach", stats.boundary_reach_fraction, 1.0, 0.0),
    ];
    let g = unit(128)?;
    for (name, u) in [
        ("coarea_x", ScalarField::from_fn(g, |x, _| x)?),
        ("coarea_paraboloid", ScalarField::from_fn(g, |x, y| x * x + y * y)?),
        ("coarea_layered", ScalarField::from_fn(g, layered_exact)?),
    ] {
        ms.push(le(&format!("{name}_mismatch"), coarea_check(&u, 256)?.relative_mismatch(), 0.02));
    }
    Ok(CriterionResult::new(8, "level-set geometry", ms))
}

pub fn well_structuredness() -> Result<CriterionResult> {
    let u = solve(N, "1", &TraceSpec::Linear)?.u;
    let g = *u.grid();
    let spec = WellStructuredSpec { directions: vec![[1.0, 0.0]], ..WellStructuredSpec::default_for(&g) };
    let est = well_structured_estimate(&u, &spec)?;
    Ok(CriterionResult::new(
        9,
        "well-structured level sets",
        vec![le("k_hat", est.k_hat, 1e-3), near("f_sup_hat", est.f_sup_hat, 1.0, 1e-2)],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub criteria: Vec<CriterionResult>,
    pub pass: bool,
}

fn guard(id: u32, title: &str, r: Result<CriterionResult>) -> CriterionResult {
    r.unwrap_or_else(|e| CriterionResult::failed(id, title, e.to_string()))
}

/// Criteria 1-9. Evaluation errors become failing criteria.
pub fn run_all() -> VerifyReport {
    let mut criteria = vec![
        guard(1, "forward oracle", timed(forward_oracle)),
        guard(2, "least-gradient exactness", timed(lgp_exactness)),
        guard(3, "reconstruction round trip", timed(cdii_round_trip)),
    ];
    match (bump_sweep(), constant_sweep()) {
        (Ok(b), Ok(c)) => {
            criteria.push(rate_suite(&b));
            criteria.push(exponent_suite(&b, &c));
            criteria.push(reverse_triangle(&b));
            criteria.push(interpolation_ratios(&b));
        }
        (b, c) => {
            let e = b.err().or(c.err()).map(|e| e.to_string()).unwrap_or_default();
            for (id, t) in [
                (4, "energy and defect rates"),
                (5, "stability exponents"),
                (6, "current error bracket"),
                (7, "interpolation ratios"),
            ] {
                criteria.push(CriterionResult::failed(id, t, e.clone()));
            }
        }
    }
    criteria.push(guard(8, "level-set geometry", timed(level_set_geometry)));
    criteria.push(guard(9, "well-structured level sets", timed(well_structuredness)));
    let pass = criteria.iter().all(|c| c.pass);
    VerifyReport { criteria, pass }
}

fn timed(f: impl FnOnce() -> Result<CriterionResult>) -> Result<CriterionResult> {
    let t = Instant::now();
    let mut r = f()?;
    r.elapsed.push(("total_s".into(), t.elapsed().as_secs_f64()));
    Ok(r)
}
