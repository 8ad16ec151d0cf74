//! Plain-text export of fusion attention maps.
//!
//! ```text
//! # any number of comment lines
//! layer 0 rows 38 cols 38
//! 0.0213 0.0198 ...        one line per row, space separated
//! ...
//! layer 1 rows 38 cols 38
//! ...
//! ```
//!
//! Values are written with the shortest representation that round-trips.
//! Blank lines and lines starting with `#` are ignored by the parser.

use std::fmt::Write as _;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// One exported matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAttention {
    pub layer: usize,
    pub matrix: Tensor,
}

pub fn write(comments: &[String], layers: &[LayerAttention]) -> String {
    let mut out = String::new();
    for c in comments {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    for l in layers {
        let (r, c) = l.matrix.dims2();
        let _ = writeln!(out, "layer {} rows {r} cols {c}", l.layer);
        for i in 0..r {
            let row: Vec<String> = l.matrix.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("attention file", detail)
}

pub fn parse(text: &str) -> Result<Vec<LayerAttention>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut out = Vec::new();
    while let Some((no, header)) = lines.next() {
        let f: Vec<&str> = header.split_whitespace().collect();
        let [kw_l, layer, kw_r, rows, kw_c, cols] = f[..] else {
            return Err(bad(format!("line {no}: expected `layer L rows R cols C`")));
        };
        if (kw_l, kw_r, kw_c) != ("layer", "rows", "cols") {
            return Err(bad(format!("line {no}: expected `layer L rows R cols C`")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("line {no}: {e}")));
        let (layer, rows, cols) = (num(layer)?, num(rows)?, num(cols)?);
        if rows.checked_mul(cols).is_none_or(|n| n > text.len()) {
            return Err(bad(format!("line {no}: {rows}x{cols} cannot fit in the input")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (no, line) = lines
                .next()
                .ok_or_else(|| bad(format!("layer {layer}: missing row {r}")))?;
            let before = data.len();
            for v in line.split_whitespace() {
                let x: f64 = v.parse().map_err(|_| bad(format!("line {no}: bad number `{v}`")))?;
                data.push(x);
            }
            if data.len() - before != cols {
                return Err(bad(format!("line {no}: expected {cols} values, found {}", data.len() - before)));
            }
        }
        out.push(LayerAttention {
            layer,
            matrix: Tensor::matrix(rows, cols, data)?,
        });
    }
    Ok(out)
}
