//! CSV result tables with provenance headers.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Number(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Number)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Seventeen significant digits in scientific notation; enough to
/// round-trip every `f64`.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Number(v) => format_number(*v),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Further `key: value` lines.
    pub extra: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: &str, config_text: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_text),
            seed,
            extra: Vec::new(),
        }
    }
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Rectangular table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub provenance: Provenance,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(provenance: Provenance, columns: &[&str]) -> Self {
        Self {
            provenance,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let p = &self.provenance;
        writeln!(out, "# atom-diode {}", p.version)?;
        writeln!(out, "# command: {}", p.command)?;
        writeln!(out, "# config-sha256: {}", p.config_sha256)?;
        writeln!(out, "# seed: {}", p.seed)?;
        for (k, v) in &p.extra {
            writeln!(out, "# {k}: {v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("tables are UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let file = std::fs::File::create(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
    }
}
