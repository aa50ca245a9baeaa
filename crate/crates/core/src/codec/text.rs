//! Line-oriented graph format.
//!
//! ```text
//! k n_rows d_c D
//! col:weight col:weight ...
//! ```
//!
//! One line per row after the header. `d_c` is written as `0` for graphs
//! with varying row degree. Weights are written with Rust's shortest
//! round-trip float formatting, so a write/read cycle is lossless.

use std::fmt::Write as _;

use super::{AfcGraph, Entry};
use crate::error::{invalid, Result};

/// Serializes `graph`; `weight_set_size` fills the `D` header field.
pub fn write_graph(graph: &AfcGraph, weight_set_size: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {} {} {}", graph.k(), graph.n_rows(), graph.degree().unwrap_or(0), weight_set_size);
    for row in graph.rows() {
        let line: Vec<String> = row.iter().map(|e| format!("{}:{}", e.col, e.weight)).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

/// Parses the format produced by [`write_graph`]. Returns the graph and the
/// header's `D` field.
pub fn read_graph(text: &str) -> Result<(AfcGraph, usize)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| crate::Error::InvalidArgument("empty graph text".into()))?;
    let fields: Vec<usize> = header
        .split_whitespace()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| crate::Error::InvalidArgument(format!("header: {e}")))?;
    let [k, n_rows, d_c, d] = fields[..] else {
        return invalid("header must have four fields: k n_rows d_c D");
    };
    let mut rows = Vec::with_capacity(n_rows);
    for (i, line) in lines.enumerate() {
        if i >= n_rows {
            if line.trim().is_empty() {
                continue;
            }
            return invalid(format!("more than {n_rows} rows"));
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            let (c, w) = tok
                .split_once(':')
                .ok_or_else(|| crate::Error::InvalidArgument(format!("line {}: bad entry {tok:?}", i + 2)))?;
            let col =
                c.parse().map_err(|_| crate::Error::InvalidArgument(format!("line {}: bad column {c:?}", i + 2)))?;
            let weight =
                w.parse().map_err(|_| crate::Error::InvalidArgument(format!("line {}: bad weight {w:?}", i + 2)))?;
            row.push(Entry { col, weight });
        }
        if d_c != 0 && row.len() != d_c {
            return invalid(format!("line {}: expected {d_c} entries, found {}", i + 2, row.len()));
        }
        rows.push(row);
    }
    if rows.len() != n_rows {
        return invalid(format!("expected {n_rows} rows, found {}", rows.len()));
    }
    Ok((AfcGraph::from_rows(k, rows)?, d))
}
