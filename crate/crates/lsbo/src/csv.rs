//! Minimal CSV output: comma-separated, `.` decimals, floats printed with 17
//! significant digits, and a leading `config_hash` column on every row.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{io_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Replaces characters that would break the row structure.
pub fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            ',' => ';',
            '\n' | '\r' | '"' => ' ',
            c => c,
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CsvTable {
    name: String,
    hash: String,
    header: Vec<String>,
    body: String,
}

impl CsvTable {
    /// `name` only labels errors.
    pub fn new(name: &str, hash: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            hash: hash.into(),
            header: columns.iter().map(|c| c.to_string()).collect(),
            body: String::new(),
        }
    }

    pub fn with_columns(name: &str, hash: &str, columns: Vec<String>) -> Self {
        Self {
            name: name.into(),
            hash: hash.into(),
            header: columns,
            body: String::new(),
        }
    }

    /// Rejects rows of the wrong width and non-finite floats.
    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        assert_eq!(row.len(), self.header.len(), "row width of {}", self.name);
        for (cell, column) in row.iter().zip(&self.header) {
            if matches!(cell, Cell::Float(v) if !v.is_finite()) {
                return Err(Error::NonFinite {
                    file: self.name.clone(),
                    column: column.clone(),
                });
            }
        }
        self.body.push_str(&self.hash);
        for cell in &row {
            self.body.push(',');
            match cell {
                Cell::Float(v) => self.body.push_str(&format_float(*v)),
                Cell::Int(v) => {
                    let _ = write!(self.body, "{v}");
                }
                Cell::Text(s) => self.body.push_str(&sanitize(s)),
            }
        }
        self.body.push('\n');
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::from("config_hash");
        for c in &self.header {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        out.push_str(&self.body);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, self.render()).map_err(io_err(path))
    }
}

/// Header and rows of a CSV file, split on commas.
pub fn read(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines
        .next()
        .map(|l| l.split(',').map(String::from).collect())
        .unwrap_or_default();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}
