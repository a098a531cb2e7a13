//! CSV writers and readers for run directories.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which reads back
//! to the identical `f64`.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::evolve::{Snapshot, StepRecord};
use crate::network::CollocationGrid;

pub const DIAGNOSTICS_HEADER: &str = "step,time,energy,residual,step_seconds,total_seconds,gamma_dim";
pub const SWEEP_HEADER: &str = "rank,status,l2_error,linf_error,total_seconds,gamma_dim,final_energy";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

fn parse_f64(s: &str) -> io::Result<f64> {
    s.parse().map_err(|_| invalid(format!("bad number '{s}'")))
}

pub fn component_name(q: usize, c: usize) -> &'static str {
    match (q, c) {
        (1, _) => "u",
        (_, 0) => "u",
        (_, 1) => "v",
        _ => "w",
    }
}

pub fn snapshot_file_name(step: usize) -> String {
    format!("u_step{step}.csv")
}

/// `x[,y],component,value`, one line per point and component.
pub fn write_snapshot(
    path: &Path,
    grid: &CollocationGrid,
    q: usize,
    snapshot: &Snapshot,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let coords = ["x", "y", "z"];
    writeln!(w, "{},component,value", coords[..grid.dim()].join(","))?;
    for i in 0..grid.len() {
        let p = grid.point(i);
        let xs: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
        for c in 0..q {
            writeln!(
                w,
                "{},{},{}",
                xs.join(","),
                component_name(q, c),
                fmt_f64(snapshot.values[i * q + c])
            )?;
        }
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub coords: Vec<f64>,
    pub component: String,
    pub value: f64,
}

pub fn read_snapshot(path: &Path) -> io::Result<Vec<SnapshotRow>> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().ok_or_else(|| invalid("empty snapshot".into()))??;
    let ncoord = header.split(',').count() - 2;
    lines
        .map(|l| {
            let l = l?;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != ncoord + 2 {
                return Err(invalid(format!("ragged snapshot line '{l}'")));
            }
            Ok(SnapshotRow {
                coords: f[..ncoord].iter().map(|s| parse_f64(s)).collect::<io::Result<_>>()?,
                component: f[ncoord].to_string(),
                value: parse_f64(f[ncoord + 1])?,
            })
        })
        .collect()
}

pub fn write_diagnostics(path: &Path, records: &[StepRecord]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{DIAGNOSTICS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.step,
            fmt_f64(r.time),
            fmt_f64(r.energy),
            fmt_f64(r.residual),
            fmt_f64(r.step_seconds),
            fmt_f64(r.total_seconds),
            r.gamma_dim
        )?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub residual: f64,
    pub step_seconds: f64,
    pub total_seconds: f64,
    pub gamma_dim: usize,
}

pub fn read_diagnostics(path: &Path) -> io::Result<Vec<DiagnosticsRow>> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().ok_or_else(|| invalid("empty diagnostics".into()))??;
    if header != DIAGNOSTICS_HEADER {
        return Err(invalid(format!("unexpected header '{header}'")));
    }
    lines
        .map(|l| {
            let l = l?;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(invalid(format!("ragged diagnostics line '{l}'")));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| invalid(format!("bad integer '{s}'")));
            Ok(DiagnosticsRow {
                step: int(f[0])?,
                time: parse_f64(f[1])?,
                energy: parse_f64(f[2])?,
                residual: parse_f64(f[3])?,
                step_seconds: parse_f64(f[4])?,
                total_seconds: parse_f64(f[5])?,
                gamma_dim: int(f[6])?,
            })
        })
        .collect()
}

/// Header/value pairs written as a two-line CSV.
pub fn write_key_values(path: &Path, fields: &[(&str, String)]) -> io::Result<()> {
    let header: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
    let values: Vec<&str> = fields.iter().map(|(_, v)| v.as_str()).collect();
    fs::write(path, format!("{}\n{}\n", header.join(","), values.join(",")))
}

/// Reads a two-line CSV back into header/value pairs.
pub fn read_key_values(path: &Path) -> io::Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let (Some(h), Some(v)) = (lines.next(), lines.next()) else {
        return Err(invalid("expected header and one row".into()));
    };
    let h: Vec<&str> = h.split(',').collect();
    let v: Vec<&str> = v.split(',').collect();
    if h.len() != v.len() {
        return Err(invalid("header and row lengths differ".into()));
    }
    Ok(h.into_iter().zip(v).map(|(a, b)| (a.to_string(), b.to_string())).collect())
}

/// Diagnostics with the timing columns dropped, for reproducibility checks.
pub fn strip_timing(rows: &[DiagnosticsRow]) -> Vec<(usize, f64, f64, f64, usize)> {
    rows.iter()
        .map(|r| (r.step, r.time, r.energy, r.residual, r.gamma_dim))
        .collect()
}
