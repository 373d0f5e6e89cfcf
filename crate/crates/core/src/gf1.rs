//! `GF1` grid-field text format.
//!
//! ```text
//! GF1 n N shape_1 … shape_n h origin_1 … origin_n
//! v v v …          (N·n values for cell 0)
//! …                (one line per cell, row-major cell order)
//! ```
//!
//! Values are written with 17 significant digits, so every `f64` survives a
//! write/read cycle bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::grid::Grid;

const MAGIC: &str = "GF1";

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_string(field: &TensorField) -> String {
    let grid = field.grid();
    let mut out = String::new();
    write!(out, "{MAGIC} {} {}", grid.dim(), field.rows()).unwrap();
    for s in grid.shape() {
        write!(out, " {s}").unwrap();
    }
    write!(out, " {}", format_f64(grid.spacing())).unwrap();
    for o in grid.origin() {
        write!(out, " {}", format_f64(*o)).unwrap();
    }
    out.push('\n');
    for c in 0..grid.cells() {
        let row: Vec<String> = field.cell(c).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Format(format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from `{tok}`")))
}

pub fn from_str(text: &str) -> Result<TensorField> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty input".into()))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(MAGIC) {
        return Err(Error::Format(format!("header must start with `{MAGIC}`")));
    }
    let n: usize = parse_num(toks.next(), "dimension n")?;
    let rows: usize = parse_num(toks.next(), "row count N")?;
    if n == 0 || n > crate::grid::MAX_DIM {
        return Err(Error::Format(format!("unsupported dimension {n}")));
    }
    let shape = (0..n)
        .map(|i| parse_num(toks.next(), &format!("shape[{i}]")))
        .collect::<Result<Vec<usize>>>()?;
    let h: f64 = parse_num(toks.next(), "spacing h")?;
    let origin = (0..n)
        .map(|i| parse_num(toks.next(), &format!("origin[{i}]")))
        .collect::<Result<Vec<f64>>>()?;
    if let Some(extra) = toks.next() {
        return Err(Error::Format(format!("unexpected header token `{extra}`")));
    }
    let grid = Grid::new(shape, h, origin)?;
    let per_cell = rows * n;
    let mut values = Vec::with_capacity(per_cell * grid.cells());
    for (c, line) in lines.enumerate() {
        let before = values.len();
        for tok in line.split_whitespace() {
            values.push(parse_num::<f64>(Some(tok), &format!("value in cell {c}"))?);
        }
        if values.len() - before != per_cell {
            return Err(Error::Format(format!(
                "cell {c} has {} values, expected {per_cell}",
                values.len() - before
            )));
        }
    }
    if values.len() != per_cell * grid.cells() {
        return Err(Error::Format(format!(
            "expected {} cell rows, found {}",
            grid.cells(),
            values.len() / per_cell.max(1)
        )));
    }
    TensorField::new(grid, rows, values)
}

pub fn read(path: &Path) -> Result<TensorField> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

pub fn write(path: &Path, field: &TensorField) -> Result<()> {
    std::fs::write(path, to_string(field)).map_err(|e| Error::io(path, e))
}
