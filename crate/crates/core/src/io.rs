//! CSV and JSON files: measure snapshots, flow and value-field directories.
//!
//! Numbers are written with 17 significant digits (`{:.16e}`), so files are
//! exact and byte-stable. Negative zero is written as zero.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hjb::ValueField;
use crate::measures::{EmpiricalMeasure, MeasureFlow};

pub const INDEX_FILE: &str = "index.csv";

#[inline]
pub fn fmt(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { path: path.to_path_buf(), message: format!("{other:?}") },
    }
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse { path: path.to_path_buf(), message: format!("not a number: {s:?}") })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes rows of numbers under `header`.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Snapshot file with header `x,h,w`.
pub fn write_measure(path: &Path, mu: &EmpiricalMeasure) -> Result<()> {
    write_table(path, &["x", "h", "w"], (0..mu.len()).map(|i| vec![mu.x()[i], mu.h()[i], mu.weights()[i]]))
}

pub fn read_measure(path: &Path) -> Result<EmpiricalMeasure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse { path: path.to_path_buf(), message: format!("missing column {name}") })
    };
    let (cx, ch) = (col("x")?, col("h")?);
    let cw = headers.iter().position(|h| h.trim() == "w");
    let (mut x, mut h, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        x.push(parse_f64(path, &rec[cx])?);
        h.push(parse_f64(path, &rec[ch])?);
        if let Some(c) = cw {
            w.push(parse_f64(path, &rec[c])?);
        }
    }
    if cw.is_some() {
        EmpiricalMeasure::new(x, h, w)
    } else {
        EmpiricalMeasure::uniform(x, h)
    }
}

fn indexed_name(prefix: &str, k: usize) -> String {
    format!("{prefix}_{k:05}.csv")
}

fn write_index(dir: &Path, times: &[f64], prefix: &str) -> Result<()> {
    let path = dir.join(INDEX_FILE);
    let mut w = writer(&path)?;
    w.write_record(["index", "t", "file"]).map_err(|e| csv_err(&path, e))?;
    for (k, &t) in times.iter().enumerate() {
        w.write_record([k.to_string(), fmt(t), indexed_name(prefix, k)]).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn read_index(dir: &Path) -> Result<Vec<(f64, PathBuf)>> {
    let path = dir.join(INDEX_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        if rec.len() < 3 {
            return Err(Error::Parse { path, message: "index rows need index,t,file".into() });
        }
        out.push((parse_f64(&path, &rec[1])?, dir.join(rec[2].trim())));
    }
    Ok(out)
}

/// Flow directory: one snapshot per grid time plus `index.csv`.
pub fn write_flow(dir: &Path, flow: &MeasureFlow) -> Result<()> {
    ensure_dir(dir)?;
    for (k, mu) in flow.measures().iter().enumerate() {
        write_measure(&dir.join(indexed_name("measure", k)), mu)?;
    }
    write_index(dir, flow.times(), "measure")
}

pub fn read_flow(dir: &Path) -> Result<MeasureFlow> {
    let idx = read_index(dir)?;
    let times = idx.iter().map(|e| e.0).collect();
    let measures = idx.iter().map(|e| read_measure(&e.1)).collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(times, measures)
}

/// Value-field directory: one `x,y,w,dx_w,dy_w` slice per time plus
/// `index.csv` and `meta.json`.
pub fn write_value(dir: &Path, field: &ValueField) -> Result<()> {
    ensure_dir(dir)?;
    let g = &field.grid;
    for k in 0..g.n_t() {
        let rows = (0..g.n_x())
            .flat_map(|i| (0..g.n_y()).map(move |j| (i, j)))
            .map(|(i, j)| vec![g.xs[i], g.ys[j], field.w_at(k, i, j), field.dx_w_at(k, i, j), field.dy_w_at(k, i, j)]);
        write_table(&dir.join(indexed_name("slice", k)), &["x", "y", "w", "dx_w", "dy_w"], rows)?;
    }
    write_index(dir, &g.times, "slice")?;
    write_json(&dir.join("meta.json"), &field.meta)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
