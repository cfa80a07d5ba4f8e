//! Output file writers. Every float in CSV artifacts is printed with 17
//! significant digits so values round-trip exactly through text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use curveclust::{Error, Result};
use nalgebra::DMatrix;

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::ModelDocument(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

/// `partition.csv`: hard assignment plus the full responsibility row.
pub fn write_partition(
    path: &Path,
    ids: &[String],
    hard: &[usize],
    tau: &DMatrix<f64>,
) -> Result<()> {
    let k = tau.ncols();
    let mut out = String::from("curve_id,hard_label");
    for j in 1..=k {
        let _ = write!(out, ",tau_{j}");
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        let _ = write!(out, "{id},{}", hard[i]);
        for j in 0..k {
            let _ = write!(out, ",{}", fmt_float(tau[(i, j)]));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// `means.csv`: one mean curve per cluster/class.
pub fn write_means(path: &Path, means: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let mut out = String::from("cluster,x,yhat\n");
    for (cluster, pts) in means {
        for &(x, y) in pts {
            let _ = writeln!(out, "{cluster},{},{}", fmt_float(x), fmt_float(y));
        }
    }
    write_text(path, &out)
}

/// `proportions.csv`: logistic regime proportion traces pi_r(x).
pub fn write_proportions(path: &Path, rows: &[(usize, usize, f64, f64)]) -> Result<()> {
    let mut out = String::from("cluster,regime,x,pi\n");
    for &(cluster, regime, x, pi) in rows {
        let _ = writeln!(out, "{cluster},{regime},{},{}", fmt_float(x), fmt_float(pi));
    }
    write_text(path, &out)
}

/// `predictions.csv`: predicted label and posterior per group.
pub fn write_predictions(
    path: &Path,
    ids: &[String],
    labels: &[usize],
    posteriors: &DMatrix<f64>,
) -> Result<()> {
    let g = posteriors.ncols();
    let mut out = String::from("curve_id,label");
    for j in 1..=g {
        let _ = write!(out, ",posterior_{j}");
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        let _ = write!(out, "{id},{}", labels[i]);
        for j in 0..g {
            let _ = write!(out, ",{}", fmt_float(posteriors[(i, j)]));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub struct SelectionRow {
    pub k: usize,
    pub r: usize,
    pub loglik: Option<f64>,
    pub nu: Option<usize>,
    pub bic: Option<f64>,
    pub aic: Option<f64>,
    pub icl: Option<f64>,
    pub status: String,
}

/// `selection.csv`: one row per candidate, failures kept with status.
pub fn write_selection(path: &Path, rows: &[SelectionRow]) -> Result<()> {
    let mut out = String::from("K,R,loglik,nu,bic,aic,icl,status\n");
    let num = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.k,
            row.r,
            num(row.loglik),
            row.nu.map(|n| n.to_string()).unwrap_or_default(),
            num(row.bic),
            num(row.aic),
            num(row.icl),
            row.status
        );
    }
    write_text(path, &out)
}

/// `segments.csv`: per-curve regime boundaries as grid indices.
pub fn write_segments(
    path: &Path,
    rows: &[(String, usize, usize, usize, f64, f64)],
) -> Result<()> {
    let mut out = String::from("curve_id,regime,start,end,start_x,end_x\n");
    for (id, regime, start, end, sx, ex) in rows {
        let _ = writeln!(
            out,
            "{id},{regime},{start},{end},{},{}",
            fmt_float(*sx),
            fmt_float(*ex)
        );
    }
    write_text(path, &out)
}
