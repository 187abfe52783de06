//! CSV and JSON artifacts.
//!
//! Floats are written with `{:.16e}`, which carries 17 significant digits and
//! so parses back to the identical `f64`. Identical inputs therefore give
//! identical bytes.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dynsim::{Mode, TrajectoryMatrix};
use crate::error::{Error, Result};
use crate::pca::PcaResult;
use crate::perturbation::PerturbationLedger;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Domain(format!("bad number {s:?}: {e}")))
}

fn to_bytes(header: Option<&[String]>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Domain(format!("csv buffer: {e}")))
}

/// Header `time,<labels>` and one row per sample.
pub fn trajectory_csv(t: &TrajectoryMatrix) -> Result<Vec<u8>> {
    let mut header = vec!["time".to_string()];
    header.extend(t.labels.iter().cloned());
    to_bytes(
        Some(&header),
        (0..t.samples()).map(|k| {
            let mut row = vec![fmt_f64(t.time(k))];
            row.extend(t.data.column(k).iter().map(|&v| fmt_f64(v)));
            row
        }),
    )
}

/// Inverse of [`trajectory_csv`]; `dt` is recovered from the first two rows.
pub fn read_trajectory_csv(bytes: &[u8]) -> Result<TrajectoryMatrix> {
    let mut r = csv::ReaderBuilder::new().from_reader(bytes);
    let header = r.headers()?.clone();
    if header.get(0) != Some("time") {
        return Err(Error::Domain("trajectory CSV must start with a time column".into()));
    }
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut cols: Vec<f64> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != labels.len() + 1 {
            return Err(Error::Domain(format!("row with {} fields, expected {}", rec.len(), labels.len() + 1)));
        }
        times.push(parse_f64(&rec[0])?);
        for f in rec.iter().skip(1) {
            cols.push(parse_f64(f)?);
        }
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    Ok(TrajectoryMatrix {
        data: DMatrix::from_column_slice(labels.len(), times.len(), &cols),
        dt,
        labels,
        disturbance: String::new(),
        unstable: false,
    })
}

pub fn modes_csv(modes: &[Mode]) -> Result<Vec<u8>> {
    let header: Vec<String> =
        ["re", "im", "freq_hz", "damping_ratio", "oscillatory", "swing_share"].iter().map(|s| s.to_string()).collect();
    to_bytes(
        Some(&header),
        modes.iter().map(|m| {
            vec![
                fmt_f64(m.re),
                fmt_f64(m.im),
                fmt_f64(m.freq_hz),
                fmt_f64(m.damping_ratio),
                m.oscillatory.to_string(),
                fmt_f64(m.swing_share),
            ]
        }),
    )
}

/// One row per signal: its label and the selected weighting axes.
pub fn pca_csv(res: &PcaResult, labels: &[String]) -> Result<Vec<u8>> {
    let mut header = vec!["signal".to_string()];
    header.extend(res.selected_axes.iter().map(|a| format!("axis_{}", a + 1)));
    to_bytes(
        Some(&header),
        (0..res.coords.nrows()).map(|i| {
            let mut row = vec![labels.get(i).cloned().unwrap_or_else(|| format!("signal_{}", i + 1))];
            row.extend(res.coords.row(i).iter().map(|&v| fmt_f64(v)));
            row
        }),
    )
}

/// Plain matrix, no header.
pub fn matrix_csv(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    to_bytes(None, (0..m.nrows()).map(|i| m.row(i).iter().map(|&v| fmt_f64(v)).collect()))
}

pub fn read_matrix_csv(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(parse_f64).collect::<Result<_>>()?);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Domain("ragged matrix CSV".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Serialize)]
struct NormEntry<'a> {
    name: &'a str,
    rows: usize,
    cols: usize,
    frobenius: String,
}

/// Every ledger matrix as `<name>.csv` plus `norms.json`.
pub fn ledger_files(ledger: &PerturbationLedger) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut norms = Vec::new();
    for (name, m) in ledger.named_matrices() {
        out.push((format!("{name}.csv"), matrix_csv(m)?));
        norms.push(NormEntry { name, rows: m.nrows(), cols: m.ncols(), frobenius: fmt_f64(m.norm()) });
    }
    out.push(("norms.json".to_string(), json_bytes(&norms)?));
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1).powf(j as f64 - 1.3) * if j % 2 == 0 { -1.0 } else { 1e-300 });
        let back = read_matrix_csv(&matrix_csv(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let t = TrajectoryMatrix {
            data: DMatrix::from_fn(2, 5, |i, k| ((i + 1) as f64 / 3.0) * (k as f64 * 0.7).sin()),
            dt: 0.01,
            labels: vec!["delta_1".into(), "delta_2".into()],
            disturbance: String::new(),
            unstable: false,
        };
        let back = read_trajectory_csv(&trajectory_csv(&t).unwrap()).unwrap();
        assert_eq!(back.data, t.data);
        assert_eq!(back.labels, t.labels);
        assert_eq!(back.dt, 0.01);
    }
}
