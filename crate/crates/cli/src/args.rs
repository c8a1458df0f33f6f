//! Command-line surface. Every option can also come from a TOML file given
//! with `--config`; see [`crate::config`].

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use cdii_core::expr::Expr;
use cdii_core::forward::AdmissibilityBounds;
use cdii_core::least_gradient::PdParams;
use cdii_core::scenario::{GridSpec, TraceSpec, BUMP_SIGMA, SHIFTED_BUMP};
use cdii_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "cdii", version, about = "Conductivity imaging from interior current density magnitude")]
pub struct Cli {
    /// Output root; each run writes into a fresh timestamped directory below it
    #[arg(long, env = "CDII_OUT", default_value = "cdii-runs", global = true)]
    pub out: PathBuf,

    /// Write the run into exactly this directory instead of a timestamped one
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the conductivity equation for a given sigma and boundary trace
    #[command(args_override_self = true)]
    Forward(ForwardArgs),
    /// Solve the weighted least-gradient problem for a weight a and trace f
    #[command(args_override_self = true)]
    Lgp(LgpArgs),
    /// Recover sigma from a = sigma |grad u| and the boundary trace
    #[command(args_override_self = true)]
    Reconstruct(ReconstructArgs),
    /// Stability sweep over a perturbation ladder sigma (1 + eps eta)
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Level-set extraction and diagnostics for a scalar field
    #[command(args_override_self = true)]
    Levelsets(LevelsetsArgs),
    /// Run the full acceptance suite and write a report
    #[command(args_override_self = true)]
    Verify(VerifyArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Forward(_) => "forward",
            Self::Lgp(_) => "lgp",
            Self::Reconstruct(_) => "reconstruct",
            Self::Sweep(_) => "sweep",
            Self::Levelsets(_) => "levelsets",
            Self::Verify(_) => "verify",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConfigArg {
    /// TOML file with option values; command-line flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Nodes per side of the square grid
    #[arg(long, default_value_t = 65)]
    pub n: usize,
    /// Lower corner coordinate (both axes)
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub lo: f64,
    /// Upper corner coordinate (both axes)
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub hi: f64,
}

impl GridArgs {
    pub fn spec(&self) -> GridSpec {
        GridSpec { n: self.n, lo: self.lo, hi: self.hi }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundsArgs {
    /// Lower bound m on the current magnitude a
    #[arg(long, default_value_t = 0.05)]
    pub m: f64,
    /// Upper bound M on the current magnitude a
    #[arg(long = "big-m", default_value_t = 20.0)]
    pub big_m: f64,
    /// Strict lower bound on sigma
    #[arg(long, default_value_t = 0.1)]
    pub sigma0: f64,
    /// Upper bound on sigma
    #[arg(long, default_value_t = 10.0)]
    pub sigma1: f64,
    /// Bound on the discrete C^2 norm proxy of sigma
    #[arg(long, default_value = "1e4")]
    pub sigma2: f64,
}

impl BoundsArgs {
    pub fn bounds(&self) -> Result<AdmissibilityBounds> {
        AdmissibilityBounds::new(self.m, self.big_m, self.sigma0, self.sigma1, self.sigma2)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// Primal step size [default: 1/||D|| for the grid]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Dual step size [default: 1/||D|| for the grid]
    #[arg(long)]
    pub sig: Option<f64>,
    /// Over-relaxation parameter in [0, 1]
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    /// Iteration cap
    #[arg(long, default_value_t = 200_000)]
    pub max_iter: usize,
    /// Relative duality gap at which the iteration stops
    #[arg(long, default_value = "1e-6")]
    pub tol_gap: f64,
    /// Iterations between gap evaluations
    #[arg(long, default_value_t = 50)]
    pub check_every: usize,
}

impl SolverArgs {
    pub fn params(&self, grid: &cdii_core::field::Grid2D) -> PdParams {
        let d = PdParams::for_grid(grid);
        PdParams {
            tau: self.tau.unwrap_or(d.tau),
            sig: self.sig.unwrap_or(d.sig),
            theta: self.theta,
            max_iter: self.max_iter,
            tol_gap: self.tol_gap,
            check_every: self.check_every,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForwardArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
    /// Conductivity sigma(x, y)
    #[arg(long, default_value = "1")]
    pub sigma: Expr,
    /// Boundary trace: linear, tilted[:angle], layered or an expression in x, y
    #[arg(long, default_value = "linear")]
    pub f: TraceSpec,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Relative residual for the linear solver
    #[arg(long, default_value = "1e-10")]
    pub tol: f64,
    #[command(flatten)]
    pub bounds: BoundsArgs,
}

/// Where the weight `a` and the trace `f` of a least-gradient problem come from.
#[derive(Debug, Clone, Args, Serialize)]
pub struct LgpInputs {
    /// Weight a as a grid-text file
    #[arg(long, conflicts_with = "a_expr")]
    pub a: Option<PathBuf>,
    /// Weight a as an expression, sampled on the grid options
    #[arg(long)]
    pub a_expr: Option<Expr>,
    /// Boundary trace: linear, tilted[:angle], layered or an expression in x, y
    #[arg(long, default_value = "linear")]
    pub f: TraceSpec,
    /// Boundary trace as an index,value CSV (overrides --f)
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub bounds: BoundsArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LgpArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
    /// Conductivity used only to build a layered trace
    #[arg(long)]
    pub sigma: Option<Expr>,
    #[command(flatten)]
    pub inputs: LgpInputs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReconstructArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
    /// Generate a by a forward run with this conductivity (also the ground truth)
    #[arg(long, conflicts_with_all = ["a", "a_expr"])]
    pub sigma: Option<Expr>,
    /// Ground-truth conductivity as a grid-text file, for error norms
    #[arg(long, conflicts_with = "sigma")]
    pub truth: Option<PathBuf>,
    /// Lower clamp on |grad u| when dividing
    #[arg(long, default_value = "1e-6")]
    pub floor: f64,
    #[command(flatten)]
    pub inputs: LgpInputs,
}

/// Decreasing list of perturbation sizes: `dyadic:K` or comma-separated values.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "String")]
pub struct Ladder {
    source: String,
    pub values: Vec<f64>,
}

impl FromStr for Ladder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = |m: String| Error::InvalidArgument(format!("ladder {t:?}: {m}"));
        let values = if let Some(k) = t.strip_prefix("dyadic:") {
            let k: usize = k.trim().parse().map_err(|_| bad("dyadic count must be a positive integer".into()))?;
            (1..=k as i32).map(|p| 2f64.powi(-p)).collect()
        } else {
            t.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("bad value {v:?}"))))
                .collect::<Result<_>>()?
        };
        Ok(Self { source: t.to_string(), values })
    }
}

impl fmt::Display for Ladder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl From<Ladder> for String {
    fn from(l: Ladder) -> String {
        l.source
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
    /// Base conductivity sigma(x, y)
    #[arg(long, default_value = BUMP_SIGMA)]
    pub sigma: Expr,
    /// Perturbation direction eta(x, y); rescaled to unit maximum
    #[arg(long, default_value = SHIFTED_BUMP)]
    pub eta: Expr,
    /// Boundary trace: linear, tilted[:angle], layered or an expression in x, y
    #[arg(long, default_value = "linear")]
    pub f: TraceSpec,
    /// Perturbation sizes: dyadic:K for 2^-1..2^-K, or a decreasing comma list
    #[arg(long, default_value = "dyadic:8")]
    pub epsilons: Ladder,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Relative residual for the forward solves
    #[arg(long, default_value = "1e-10")]
    pub tol: f64,
    /// Smallest-eps ladder points used in each slope fit
    #[arg(long, default_value_t = 5)]
    pub fit_points: usize,
    /// Fitted slopes may fall this far below the predicted exponent
    #[arg(long, default_value_t = 0.1)]
    pub slope_slack: f64,
    /// Allowed max/median of LHS/RHS^alpha along the ladder
    #[arg(long, default_value_t = 10.0)]
    pub boundedness_factor: f64,
    /// Comma-separated inequality names to check [default: all]
    #[arg(long)]
    pub checks: Option<String>,
    /// Largest tolerated fraction of excluded ladder members
    #[arg(long, default_value_t = 0.25)]
    pub max_excluded: f64,
    #[command(flatten)]
    pub bounds: BoundsArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LevelsetsArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
    /// Field u as a grid-text file
    #[arg(long, conflicts_with = "expr")]
    pub u: Option<PathBuf>,
    /// Field u as an expression, sampled on the grid options
    #[arg(long)]
    pub expr: Option<Expr>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Number of uniformly spaced interior levels
    #[arg(long, default_value_t = 32)]
    pub levels: usize,
    /// Comma-separated explicit levels to extract instead of the uniform ones
    #[arg(long, allow_hyphen_values = true)]
    pub at: Option<String>,
    /// Levels used for the coarea comparison
    #[arg(long, default_value_t = 256)]
    pub coarea_levels: usize,
    /// Also estimate the well-structuredness constants
    #[arg(long, default_value_t = false)]
    pub well_structured: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub config: ConfigArg,
}
