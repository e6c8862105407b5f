//! Tabular artifacts and the JSON summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use eerds_core::direct::PrimalState;
use eerds_core::mesh::Field;
use serde::Serialize;

use crate::error::Result;

pub const SCHEMA: &str = "eerds-summary/1";

/// A named table of numbers, written as CSV and optionally as gnuplot `.dat`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Nodal table `x, c_1.., u[, psi]`.
    pub fn fields(name: &str, state: &PrimalState, psi: Option<&Field>) -> Self {
        let ni = state.c.species_count();
        let mut header = vec!["x".to_string()];
        header.extend((1..=ni).map(|i| format!("c{i}")));
        header.push("u".into());
        if psi.is_some() {
            header.push("psi".into());
        }
        let nodes = state.u.mesh().nodes();
        let rows = (0..nodes.len())
            .map(|j| {
                let mut r = vec![nodes[j]];
                r.extend((0..ni).map(|i| state.c.species(i).values()[j]));
                r.push(state.u.values()[j]);
                if let Some(p) = psi {
                    r.push(p.values()[j]);
                }
                r
            })
            .collect();
        Self {
            name: name.into(),
            header,
            rows,
        }
    }

    pub fn write_csv(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| fmt_num(*v)))?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn write_dat(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.dat", self.name));
        let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
        writeln!(f, "# {}", self.header.join(" "))?;
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| fmt_num(*v)).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        f.flush()?;
        Ok(path)
    }
}

/// Shortest round-trip decimal form; `nan`/`inf` spelled out.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        let mut b = ryu_like(v);
        if !b.contains(['.', 'e', 'E']) {
            b.push_str(".0");
        }
        b
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn ryu_like(v: f64) -> String {
    // serde_json formats floats with ryu, the same routine it uses in the summary
    serde_json::to_string(&v).unwrap_or_else(|_| format!("{v:e}"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| crate::Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 5.0] {
            assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_num(5.0), "5.0");
        assert_eq!(fmt_num(f64::NAN), "nan");
    }
}
