//! Plain-text problem dumps for postmortem debugging, one problem per file.
//!
//! LCP layout: a `lcp <n>` header, `n` rows of `M`, then one row of `q`.
//! MCP samples: a `mcp <n>` header followed by rows `lower`, `upper`, `z`,
//! `F(z)` and the `n` Jacobian rows.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{LcpProblem, McpFunction, McpProblem};
use crate::error::{Error, Result};

fn row(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        // `{:?}` round-trips f64 exactly.
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

pub fn write_lcp(path: &Path, p: &LcpProblem) -> Result<()> {
    let n = p.dim();
    let mut out = format!("lcp {n}\n");
    for r in 0..n {
        row(&mut out, p.m.row(r).iter().copied());
    }
    row(&mut out, p.q.iter().copied());
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_lcp(path: &Path) -> Result<LcpProblem> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: &str| Error::LogParse {
        line: line + 1,
        message: message.into(),
    };
    let (_, header) = lines.next().ok_or_else(|| parse_err(0, "empty dump"))?;
    let n: usize = header
        .strip_prefix("lcp ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(0, "expected `lcp <n>` header"))?;
    let mut values = Vec::with_capacity(n * (n + 1));
    for (i, line) in lines {
        let parsed: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let parsed = parsed.map_err(|_| parse_err(i, "bad number"))?;
        if parsed.len() != n {
            return Err(parse_err(i, "row length does not match n"));
        }
        values.extend(parsed);
    }
    if values.len() != n * (n + 1) {
        return Err(parse_err(n + 1, "expected n rows of M and one row of q"));
    }
    let m = DMatrix::from_row_slice(n, n, &values[..n * n]);
    let q = DVector::from_column_slice(&values[n * n..]);
    LcpProblem::new(m, q)
}

pub fn write_mcp_sample<F: McpFunction>(path: &Path, p: &McpProblem<F>, z: &DVector<f64>) -> Result<()> {
    let n = p.dim();
    let mut f = DVector::zeros(n);
    let mut j = DMatrix::zeros(n, n);
    p.function.eval(z, &mut f);
    p.function.jacobian(z, &mut j);
    let mut out = format!("mcp {n}\n");
    row(&mut out, p.lower.iter().copied());
    row(&mut out, p.upper.iter().copied());
    row(&mut out, z.iter().copied());
    row(&mut out, f.iter().copied());
    for r in 0..n {
        row(&mut out, j.row(r).iter().copied());
    }
    std::fs::write(path, out)?;
    Ok(())
}
