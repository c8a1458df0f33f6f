//! One function per subcommand. Each writes its artifacts into the run
//! directory and reports whether its checks passed.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use cdii_core::expr::Expr;
use cdii_core::field::{coarea_check, lp_norm, read_grid_text, read_trace_csv, BoundaryTrace, Norm, ScalarField};
use cdii_core::forward::{admissibility_check, sigma2_proxy, solve_conductivity, ConductivityProblem, DEFAULT_TOL};
use cdii_core::least_gradient::{dual_certificate, recover_sigma, solve_lgp, LgpProblem, LgpSolution};
use cdii_core::level_sets::{extract_family, sample_levels, stats_of, well_structured_estimate, WellStructuredSpec};
use cdii_core::scenario::sample;
use cdii_core::stability_lab::{default_inequalities, run_sweep, PerturbationFamily, SweepParams};
use cdii_core::verify::run_all;
use cdii_core::Error;
use serde_json::json;

use crate::args::{ForwardArgs, LevelsetsArgs, LgpArgs, LgpInputs, ReconstructArgs, SweepArgs};
use crate::run::RunDir;
use crate::{CliError, Outcome};

fn read_grid(path: &Path) -> Result<ScalarField, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    read_grid_text(BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_trace(path: &Path, u: &ScalarField) -> Result<BoundaryTrace, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    read_trace_csv(*u.grid(), BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn forward(args: &ForwardArgs, run: &mut RunDir) -> Result<Outcome, CliError> {
    let grid = args.grid.spec().build()?;
    let bounds = args.bounds.bounds()?;
    let sigma = sample(grid, &args.sigma)?;
    let f = args.f.build(grid, Some(&args.sigma))?;
    let problem = ConductivityProblem::new(sigma, f, bounds)?;
    let sol = solve_conductivity(&problem, args.tol)?;
    let report = admissibility_check(&sol, &bounds);

    run.grid("sigma.grid", &sol.sigma)?;
    run.grid("u.grid", &sol.u)?;
    run.grid("jx.grid", sol.current.x())?;
    run.grid("jy.grid", sol.current.y())?;
    run.grid("a.grid", &sol.a)?;
    run.trace("trace.csv", problem.trace())?;
    run.json(
        "forward.json",
        &json!({
            "residual_norm": sol.residual_norm,
            "iterations": sol.iterations,
            "sigma2_proxy": sigma2_proxy(&sol.sigma),
            "admissibility": report,
        }),
    )?;
    println!("forward: {} PCG iterations, relative residual {:.3e}", sol.iterations, sol.residual_norm);
    if report.passed {
        Ok(Outcome::Pass)
    } else {
        Ok(Outcome::Checks(format!(
            "admissibility check failed (a in [{:.4e}, {:.4e}], min |grad u| {:.4e}, sigma in [{:.4e}, {:.4e}])",
            report.a_min, report.a_max, report.grad_min, report.sigma_min, report.sigma_max
        )))
    }
}

/// Weight and trace of a least-gradient problem.
fn lgp_inputs(inputs: &LgpInputs, sigma: Option<&Expr>) -> Result<(ScalarField, BoundaryTrace), CliError> {
    let a = match (&inputs.a, &inputs.a_expr) {
        (Some(path), _) => read_grid(path)?,
        (None, Some(e)) => sample(inputs.grid.spec().build()?, e)?,
        (None, None) => return Err(CliError::Input("need --a <file> or --a-expr <expression>".into())),
    };
    let f = match &inputs.trace {
        Some(path) => read_trace(path, &a)?,
        None => inputs.f.build(*a.grid(), sigma)?,
    };
    Ok((a, f))
}

/// Solves and keeps the best iterate when the iteration cap is reached.
fn solve_keeping_best(p: &LgpProblem, inputs: &LgpInputs) -> Result<LgpSolution, CliError> {
    match solve_lgp(p, &inputs.solver.params(p.grid())) {
        Ok(sol) => Ok(sol),
        Err(Error::LgpNotConverged(sol)) => Ok(*sol),
        Err(e) => Err(e.into()),
    }
}

fn lgp_summary(sol: &LgpSolution, p: &LgpProblem) -> Result<serde_json::Value, CliError> {
    let cert = dual_certificate(sol, p)?;
    println!(
        "least gradient: {} iterations, relative gap {:.3e}, objective {:.6e}, converged {}",
        sol.iterations, sol.gap, sol.objective, sol.converged
    );
    Ok(json!({
        "converged": sol.converged,
        "iterations": sol.iterations,
        "gap": sol.gap,
        "energy": sol.energy,
        "objective": sol.objective,
        "certificates": cert,
    }))
}

fn not_converged(sol: &LgpSolution) -> Outcome {
    Outcome::Checks(format!(
        "least-gradient solver stopped after {} iterations with relative gap {:.3e}; best iterate written",
        sol.iterations, sol.gap
    ))
}

pub fn lgp(args: &LgpArgs, run: &mut RunDir) -> Result<Outcome, CliError> {
    let (a, f) = lgp_inputs(&args.inputs, args.sigma.as_ref())?;
    let problem = LgpProblem::new(a, f, args.inputs.bounds.bounds()?)?;
    let sol = solve_keeping_best(&problem, &args.inputs)?;
    let summary = lgp_summary(&sol, &problem)?;
    run.grid("u.grid", &sol.u)?;
    run.grid("phix.grid", sol.phi.x())?;
    run.grid("phiy.grid", sol.phi.y())?;
    run.json("lgp.json", &summary)?;
    Ok(if sol.converged { Outcome::Pass } else { not_converged(&sol) })
}

fn rel_l1(est: &ScalarField, truth: &ScalarField) -> Result<f64, CliError> {
    let diff = est.zip_map(truth, |a, b| a - b)?;
    Ok(lp_norm(&diff, Norm::L1) / lp_norm(truth, Norm::L1))
}

pub fn reconstruct(args: &ReconstructArgs, run: &mut RunDir) -> Result<Outcome, CliError> {
    let bounds = args.inputs.bounds.bounds()?;
    let (a, f, truth, u_true) = match &args.sigma {
        Some(s) => {
            let grid = args.inputs.grid.spec().build()?;
            let sigma = sample(grid, s)?;
            let f = match &args.inputs.trace {
                Some(path) => read_trace(path, &sigma)?,
                None => args.inputs.f.build(grid, Some(s))?,
            };
            let fwd = solve_conductivity(&ConductivityProblem::new(sigma.clone(), f.clone(), bounds)?, DEFAULT_TOL)?;
            run.grid("a.grid", &fwd.a)?;
            run.grid("sigma.grid", &sigma)?;
            run.trace("trace.csv", &f)?;
            (fwd.a, f, Some(sigma), Some(fwd.u))
        }
        None => {
            let (a, f) = lgp_inputs(&args.inputs, None)?;
            let truth = args.truth.as_deref().map(read_grid).transpose()?;
            (a, f, truth, None)
        }
    };
    let problem = LgpProblem::new(a, f, bounds)?;
    let sol = solve_keeping_best(&problem, &args.inputs)?;
    let mut summary = lgp_summary(&sol, &problem)?;
    let rec = recover_sigma(problem.weight(), &sol.u, args.floor)?;

    run.grid("u_hat.grid", &sol.u)?;
    run.grid("sigma_hat.grid", &rec.sigma)?;
    run.grid("phix.grid", sol.phi.x())?;
    run.grid("phiy.grid", sol.phi.y())?;
    summary["floor"] = args.floor.into();
    summary["floored_fraction"] = rec.floored_fraction.into();
    summary["floor_warning"] = rec.warning.into();
    if let Some(t) = &truth {
        let (rel, linf) = (rel_l1(&rec.sigma, t)?, lp_norm(&rec.sigma.zip_map(t, |a, b| a - b)?, Norm::LInf));
        println!("sigma error: relative L1 {rel:.4e}, L-infinity {linf:.4e}");
        let mut errors = json!({ "sigma_rel_l1": rel, "sigma_linf": linf });
        if let Some(u) = &u_true {
            errors["u_linf"] = lp_norm(&sol.u.zip_map(u, |a, b| a - b)?, Norm::LInf).into();
        }
        summary["errors"] = errors;
    }
    if rec.warning {
        eprintln!("warning: {:.2}% of nodes hit the gradient floor", 100.0 * rec.floored_fraction);
    }
    run.json("reconstruct.json", &summary)?;
    Ok(if sol.converged { Outcome::Pass } else { not_converged(&sol) })
}

pub fn sweep(args: &SweepArgs, run: &mut RunDir) -> Result<Outcome, CliError> {
    let grid = args.grid.spec().build()?;
    let family = PerturbationFamily::new(
        sample(grid, &args.sigma)?,
        args.f.build(grid, Some(&args.sigma))?,
        sample(grid, &args.eta)?,
        args.epsilons.values.clone(),
        args.bounds.bounds()?,
    )?;
    let mut inequalities = default_inequalities();
    if let Some(list) = &args.checks {
        let wanted: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if let Some(bad) = wanted.iter().find(|w| !inequalities.iter().any(|i| i.name == **w)) {
            let known: Vec<&str> = inequalities.iter().map(|i| i.name.as_str()).collect();
            return Err(CliError::Input(format!("unknown check '{bad}'; known: {}", known.join(", "))));
        }
        inequalities.retain(|i| wanted.contains(&i.name.as_str()));
    }
    let params = SweepParams {
        tol: args.tol,
        fit_points: args.fit_points,
        slope_slack: args.slope_slack,
        boundedness_factor: args.boundedness_factor,
    };
    let report = match run_sweep(&family, &inequalities, &params) {
        Ok(r) => r,
        Err(Error::InsufficientLadder { admissible, exclusions }) => {
            for x in &exclusions {
                println!("excluded eps={:.4e}: {}", x.epsilon, x.reason);
            }
            run.json("sweep.json", &json!({ "pass": false, "admissible": admissible, "exclusions": exclusions }))?;
            return Ok(Outcome::Checks(format!(
                "{} of {} ladder members excluded; too few left for the fits",
                exclusions.len(),
                exclusions.len() + admissible
            )));
        }
        Err(e) => return Err(e.into()),
    };
    run.json("sweep.json", &report)?;
    run.write("sweep.csv", |w| report.write_csv(w))?;

    let mut runs: Vec<_> = report.runs.iter().collect();
    runs.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    for r in runs {
        println!(
            "eps={:.4e} delta_a={:.4e} e_j={:.4e} e_u={:.4e} e_grad={:.4e} e_sigma={:.4e}",
            r.epsilon, r.delta_a, r.e_j, r.e_u, r.e_grad, r.e_sigma
        );
    }
    for x in &report.exclusions {
        println!("excluded eps={:.4e}: {}", x.epsilon, x.reason);
    }
    for c in &report.inequalities {
        let status = if c.pass { "PASS" } else { "FAIL" };
        match c.fit {
            _ if c.trivially_satisfied => println!("{status} {}: left-hand side vanishes in every run", c.name),
            Some(f) => println!(
                "{status} {}: slope {:.3} (>= {:.2}), max/median {:.2}",
                c.name,
                f.slope,
                c.slope_min,
                c.max_ratio / c.median_ratio
            ),
            None => println!("{status} {}: no fit ({})", c.name, c.note),
        }
    }

    if report.excluded_fraction() > args.max_excluded {
        return Ok(Outcome::Checks(format!(
            "{} of {} ladder members excluded (limit {:.0}%)",
            report.exclusions.len(),
            report.exclusions.len() + report.runs.len(),
            100.0 * args.max_excluded
        )));
    }
    if report.pass {
        Ok(Outcome::Pass)
    } else {
        let failed: Vec<&str> = report.inequalities.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Ok(Outcome::Checks(format!(
            "sweep checks failed: inequalities [{}], gn {}, bracket {}, defect >= 0 {}, finite {}",
            failed.join(", "),
            report.gn.pass,
            report.bracket_holds,
            report.defect_nonnegative,
            report.all_finite
        )))
    }
}

fn parse_levels(list: &str) -> Result<Vec<f64>, CliError> {
    list.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Input(format!("bad level '{}'", t.trim()))))
        .collect()
}

pub fn levelsets(args: &LevelsetsArgs, run: &mut RunDir) -> Result<Outcome, CliError> {
    let u = match (&args.u, &args.expr) {
        (Some(path), _) => read_grid(path)?,
        (None, Some(e)) => sample(args.grid.spec().build()?, e)?,
        (None, None) => return Err(CliError::Input("need --u <file> or --expr <expression>".into())),
    };
    if u.max() - u.min() <= 0.0 {
        return Err(CliError::Input("field is constant; it has no level sets".into()));
    }
    let levels = match &args.at {
        Some(list) => parse_levels(list)?,
        None => {
            if args.levels == 0 {
                return Err(CliError::Input("--levels must be positive".into()));
            }
            sample_levels(&u, args.levels)
        }
    };
    let family = extract_family(&u, &levels);
    let stats = stats_of(&family);
    let coarea = coarea_check(&u, args.coarea_levels)?;
    let per_level: Vec<_> = family
        .levels
        .iter()
        .map(|l| {
            json!({
                "t": l.t,
                "components": l.components.len(),
                "closed": l.components.iter().filter(|c| c.closed).count(),
                "length": l.components.iter().map(|c| c.arclength).sum::<f64>(),
                "out_of_range": l.out_of_range,
            })
        })
        .collect();
    run.write("contours.csv", |w| family.write_csv(w))?;
    run.json(
        "levelsets.json",
        &json!({
            "stats": stats,
            "coarea": {
                "lhs": coarea.lhs,
                "rhs": coarea.rhs,
                "relative_mismatch": coarea.relative_mismatch(),
                "degenerate": coarea.degenerate,
            },
            "levels": per_level,
        }),
    )?;
    println!(
        "level sets: {} levels, {} components, L_M_hat {:.6e}, boundary reach {:.4}",
        stats.level_count, stats.component_count, stats.l_m_hat, stats.boundary_reach_fraction
    );
    if args.well_structured {
        let spec = WellStructuredSpec::default_for(u.grid());
        let est = well_structured_estimate(&u, &spec)?;
        println!(
            "well-structured: K_hat {:.4e}, F_sup_hat {:.6e}, {} samples",
            est.k_hat, est.f_sup_hat, est.samples_used
        );
        run.json("wellstructured.json", &json!({ "spec": spec, "estimate": est }))?;
    }
    Ok(Outcome::Pass)
}

pub fn verify(run: &mut RunDir) -> Result<(Outcome, serde_json::Value), CliError> {
    let report = run_all();
    for c in &report.criteria {
        println!("{}", c.line());
    }
    run.json("verify.json", &report)?;
    let timings: serde_json::Map<_, _> = report
        .criteria
        .iter()
        .flat_map(|c| c.elapsed.iter().map(move |(n, s)| (format!("{}.{n}", c.id), json!(s))))
        .collect();
    let outcome = if report.pass {
        Outcome::Pass
    } else {
        let failed: Vec<String> = report.criteria.iter().filter(|c| !c.pass).map(|c| c.id.to_string()).collect();
        Outcome::Checks(format!("criteria failed: {}", failed.join(", ")))
    };
    Ok((outcome, timings.into()))
}
