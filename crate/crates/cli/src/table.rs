//! Tab-separated tables: header row, LF line endings, floats with 17
//! significant digits, `NA` for missing values.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    Missing,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Float)
    }
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::Float(v) if v.is_finite() => write!(out, "{v:.16e}").unwrap(),
            Cell::Float(_) | Cell::Missing => out.push_str("NA"),
            Cell::Int(v) => write!(out, "{v}").unwrap(),
            // tabs and newlines would break the layout
            Cell::Text(s) => out.push_str(&s.replace(['\t', '\n', '\r'], " ")),
        }
    }
}

pub fn render(header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push('\t');
            }
            cell.render(&mut out);
        }
        out.push('\n');
    }
    out
}
