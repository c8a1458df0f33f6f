//! "grid-text v1" field files and `index,value` boundary-trace CSV.
//!
//! Grid text layout: first line `nx ny hx hy ox oy`, then `nx * ny`
//! whitespace-separated values, row-major, bottom row first. Writers put
//! one grid row per line and use 17 significant digits.

use std::io::{BufRead, Write};

use super::{BoundaryTrace, Grid2D, ScalarField};
use crate::error::{Error, Result};

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_grid_text<W: Write>(u: &ScalarField, mut w: W) -> Result<()> {
    let g = u.grid();
    let [ox, oy] = g.origin();
    writeln!(w, "{} {} {} {} {} {}", g.nx(), g.ny(), fmt17(g.hx()), fmt17(g.hy()), fmt17(ox), fmt17(oy))?;
    for row in u.values().chunks(g.nx()) {
        let line: Vec<String> = row.iter().map(|&v| fmt17(v)).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn read_grid_text<R: BufRead>(r: R) -> Result<ScalarField> {
    let mut lines = r.lines().enumerate();
    let (header_line, header) = loop {
        match lines.next() {
            Some((k, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break (k + 1, line);
                }
            }
            None => return Err(parse_err(1, "empty grid file")),
        }
    };
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 6 {
        return Err(parse_err(header_line, format!("header needs 6 fields, found {}", tokens.len())));
    }
    let count = |s: &str| s.parse::<usize>().map_err(|_| parse_err(header_line, format!("bad node count '{s}'")));
    let real = |s: &str| s.parse::<f64>().map_err(|_| parse_err(header_line, format!("bad number '{s}'")));
    let (nx, ny) = (count(tokens[0])?, count(tokens[1])?);
    let grid = Grid2D::new(nx, ny, real(tokens[2])?, real(tokens[3])?, [real(tokens[4])?, real(tokens[5])?])
        .map_err(|e| parse_err(header_line, e.to_string()))?;

    let mut values = Vec::with_capacity(grid.len());
    let mut last_line = header_line;
    for (k, line) in lines {
        let line = line?;
        last_line = k + 1;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| parse_err(k + 1, format!("bad value '{tok}'")))?;
            if !v.is_finite() {
                return Err(parse_err(k + 1, format!("non-finite value '{tok}'")));
            }
            if values.len() == grid.len() {
                return Err(parse_err(k + 1, format!("more than {} values", grid.len())));
            }
            values.push(v);
        }
    }
    if values.len() != grid.len() {
        return Err(parse_err(last_line, format!("expected {} values, found {}", grid.len(), values.len())));
    }
    ScalarField::new(grid, values)
}

pub fn write_trace_csv<W: Write>(f: &BoundaryTrace, mut w: W) -> Result<()> {
    writeln!(w, "index,value")?;
    for &(k, v) in f.entries() {
        writeln!(w, "{k},{}", fmt17(v))?;
    }
    Ok(())
}

/// Reads a trace for `grid`; rows must follow the counterclockwise order.
pub fn read_trace_csv<R: BufRead>(grid: Grid2D, r: R) -> Result<BoundaryTrace> {
    let mut entries = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (k == 0 && line.starts_with("index")) {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| parse_err(k + 1, "expected 'index,value'"))?;
        let idx = a.trim().parse().map_err(|_| parse_err(k + 1, format!("bad index '{a}'")))?;
        let v = b.trim().parse().map_err(|_| parse_err(k + 1, format!("bad value '{b}'")))?;
        entries.push((idx, v));
    }
    BoundaryTrace::new(grid, entries)
}
