//! Text descriptions of grids, conductivities and boundary data, shared by
//! config files, the command line and the acceptance suite.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{BoundaryTrace, Grid2D, ScalarField};

/// `1 + 0.5 exp(-50 |x - (1/2, 1/2)|^2)`.
pub const BUMP_SIGMA: &str = "1 + 0.5*exp(-50*((x-0.5)^2 + (y-0.5)^2))";
/// Off-center bump used as the default perturbation direction.
pub const SHIFTED_BUMP: &str = "exp(-50*((x-0.6)^2 + (y-0.4)^2))";
pub const LAYERED_SIGMA: &str = "1 + x";

/// Square `[lo, hi]^2` with `n` nodes per side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    #[serde(default)]
    pub lo: f64,
    #[serde(default = "one")]
    pub hi: f64,
}

fn one() -> f64 {
    1.0
}

impl GridSpec {
    pub fn unit(n: usize) -> Self {
        Self { n, lo: 0.0, hi: 1.0 }
    }

    pub fn build(&self) -> Result<Grid2D> {
        Grid2D::square(self.n, self.lo, self.hi)
    }
}

/// Boundary data: `linear` (trace of `x`), `tilted:<theta>` (trace of
/// `cos(theta) x + sin(theta) y`), `layered` (exact potential of a
/// conductivity depending on `x` only) or any expression in `x, y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TraceSpec {
    Linear,
    Tilted(f64),
    Layered,
    Expression(Expr),
}

impl FromStr for TraceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "linear" {
            return Ok(Self::Linear);
        }
        if t == "layered" {
            return Ok(Self::Layered);
        }
        if let Some(rest) = t.strip_prefix("tilted") {
            let rest = rest.trim();
            if rest.is_empty() {
                return Ok(Self::Tilted(std::f64::consts::FRAC_PI_6));
            }
            if let Some(angle) = rest.strip_prefix(':') {
                return Expr::parse(angle).map(|e| Self::Tilted(e.eval(0.0, 0.0)));
            }
        }
        Expr::parse(t).map(Self::Expression)
    }
}

impl TryFrom<String> for TraceSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TraceSpec> for String {
    fn from(t: TraceSpec) -> String {
        t.to_string()
    }
}

impl fmt::Display for TraceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear => f.write_str("linear"),
            Self::Tilted(theta) => write!(f, "tilted:{theta}"),
            Self::Layered => f.write_str("layered"),
            Self::Expression(e) => write!(f, "{e}"),
        }
    }
}

impl TraceSpec {
    /// `sigma` is needed for `layered` only.
    pub fn build(&self, grid: Grid2D, sigma: Option<&Expr>) -> Result<BoundaryTrace> {
        match self {
            Self::Linear => BoundaryTrace::from_fn(grid, |x, _| x),
            Self::Tilted(theta) => {
                let (c, s) = (theta.cos(), theta.sin());
                BoundaryTrace::from_fn(grid, |x, y| c * x + s * y)
            }
            Self::Layered => {
                let sigma = sigma.ok_or_else(|| {
                    Error::InvalidArgument("layered boundary data needs a conductivity expression".into())
                })?;
                let [x0, y0] = grid.origin();
                let x1 = x0 + grid.width();
                let total = resistance(sigma, x0, x1, y0)?;
                BoundaryTrace::from_fn(grid, |x, _| resistance(sigma, x0, x, y0).map(|r| r / total).unwrap_or(f64::NAN))
            }
            Self::Expression(e) => BoundaryTrace::from_fn(grid, |x, y| e.eval(x, y)),
        }
    }
}

/// `integral_a^b ds / sigma(s, y)` by composite Simpson with 2048 panels.
fn resistance(sigma: &Expr, a: f64, b: f64, y: f64) -> Result<f64> {
    const PANELS: usize = 2048;
    if b == a {
        return Ok(0.0);
    }
    let h = (b - a) / PANELS as f64;
    let mut sum = 0.0;
    for k in 0..=PANELS {
        let s = sigma.eval(a + k as f64 * h, y);
        if !(s > 0.0) {
            return Err(Error::Inadmissible(format!("conductivity {s} at x = {} is not positive", a + k as f64 * h)));
        }
        let w = if k == 0 || k == PANELS {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w / s;
    }
    Ok(sum * h / 3.0)
}

/// Samples an expression on the grid nodes.
pub fn sample(grid: Grid2D, e: &Expr) -> Result<ScalarField> {
    ScalarField::from_fn(grid, |x, y| e.eval(x, y))
}
