//! Files in and out: numeric CSV, label files, DAG text files, manifests.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dpdag_core::format_real;
use dpdag_core::graph::Dag;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads an `n x q` numeric table. A first row that is not entirely numeric
/// is taken as a header.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_matrix(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if r == 0 && record.iter().any(|c| parse_cell(c).is_none()) {
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (c, cell) in record.iter().enumerate() {
            let v = parse_cell(cell)
                .ok_or_else(|| anyhow!("row {}, column {}: `{}` is not a finite number", r + 1, c + 1, cell))?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                bail!("row {} has {} columns, expected {}", r + 1, row.len(), first.len());
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("no data rows");
    }
    let (n, q) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, q, |i, j| rows[i][j]))
}

pub fn matrix_to_csv(m: &DMatrix<f64>, header: Option<&[String]>) -> String {
    dpdag_core::summaries::matrix_csv(m, header)
}

pub fn node_header(q: usize) -> Vec<String> {
    (1..=q).map(|j| format!("X{j}")).collect()
}

pub fn vector_to_csv(v: &DVector<f64>) -> String {
    v.iter().map(|x| format_real(*x) + "\n").collect()
}

/// Reads one label per line (optional header), any integers; returns the
/// labels renumbered `0..K` by first appearance.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut raw: Vec<i64> = Vec::new();
    for (r, line) in text.lines().enumerate() {
        let cell = line.trim();
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<i64>() {
            Ok(v) => raw.push(v),
            Err(_) if r == 0 => continue,
            Err(_) => bail!("{}: line {}: `{cell}` is not an integer label", path.display(), r + 1),
        }
    }
    Ok(dpdag_core::summaries::Partition::from_labels(&raw).labels().to_vec())
}

pub fn labels_to_csv(labels: &[usize]) -> String {
    let mut s = String::from("label\n");
    for l in labels {
        s.push_str(&format!("{}\n", l + 1));
    }
    s
}

pub fn read_dag(path: &Path) -> Result<Dag> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Dag::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config_sha256: String,
    pub versions: Versions,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub dpdag: &'static str,
    pub dpdag_core: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Self { dpdag: env!("CARGO_PKG_VERSION"), dpdag_core: dpdag_core::VERSION }
    }
}

/// `manifest.json` for a run whose effective configuration serializes to
/// `config_json`.
pub fn write_manifest(dir: &Path, command: &str, seed: u64, config_json: &str, details: serde_json::Value) -> Result<()> {
    let m = Manifest {
        command,
        seed,
        config_sha256: sha256_hex(config_json.as_bytes()),
        versions: Versions::current(),
        details,
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    write(&dir.join("manifest.json"), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_optional() {
        let a = parse_matrix("X1,X2\n1,2\n3,4\n").unwrap();
        let b = parse_matrix("1,2\n3,4\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (2, 2));
    }

    #[test]
    fn bad_cells_report_position() {
        let err = format!("{:#}", parse_matrix("1,2\n3,x\n").unwrap_err());
        assert!(err.contains("row 2, column 2"), "{err}");
        assert!(parse_matrix("1,2\n3\n").is_err());
        assert!(parse_matrix("1,nan\n").is_err());
        assert!(parse_matrix("a,b\n").is_err());
    }

    #[test]
    fn printed_matrices_round_trip_exactly() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, 6.02e23, 0.0, -2.5]);
        let back = parse_matrix(&matrix_to_csv(&m, Some(&node_header(3)))).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
