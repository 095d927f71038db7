//! CSV outputs: loss logs, schedule dumps, attention traces and drift reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value parses back to the identical `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use fancyvideo_core::analysis::DriftReport;
use fancyvideo_core::schedule::NoiseSchedule;
use fancyvideo_core::Tensor;

use crate::error::{Error, Result};

fn create(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(
        File::create(path).map_err(Error::io(path))?,
    ))
}

pub fn write_loss_log(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["step", "loss"])?;
    for (step, loss) in losses.iter().enumerate() {
        w.write_record([step.to_string(), loss.to_string()])?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<(u64, f64)>()
        .map(|row| Ok(row?.1))
        .collect()
}

pub fn write_schedule(path: &Path, schedule: &NoiseSchedule) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["t", "alphabar"])?;
    for (t, a) in schedule.alphabar().iter().enumerate() {
        w.write_record([t.to_string(), a.to_string()])?;
    }
    w.flush().map_err(Error::io(path))
}

/// Trace export: a header line `f hw n`, then one CSV row of `n` values per
/// `(frame, pixel)` in row-major order.
pub fn write_trace(out: &mut impl Write, map: &Tensor) -> Result<()> {
    let s = map.shape();
    if s.len() != 3 {
        return Err(Error::Format(format!(
            "trace has shape {s:?}, expected [f, hw, n]"
        )));
    }
    writeln!(out, "{} {} {}", s[0], s[1], s[2]).map_err(Error::io("<trace>"))?;
    let mut w = csv::Writer::from_writer(out);
    for row in map.data().chunks_exact(s[2].max(1)) {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush().map_err(Error::io("<trace>"))
}

pub fn read_trace(input: impl Read) -> Result<Tensor> {
    let mut input = BufReader::new(input);
    let mut header = String::new();
    input.read_line(&mut header).map_err(Error::io("<trace>"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("trace header {:?}: {e}", header.trim())))?;
    let [f, hw, n] = dims[..] else {
        return Err(Error::Format(format!(
            "trace header {:?} is not `f hw n`",
            header.trim()
        )));
    };
    let mut data = Vec::with_capacity(f * hw * n);
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    for record in r.records() {
        let record = record?;
        if record.len() != n {
            return Err(Error::Format(format!(
                "trace row has {} values, expected {n}",
                record.len()
            )));
        }
        for field in &record {
            data.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("trace value {field:?}: {e}")))?,
            );
        }
    }
    if data.len() != f * hw * n {
        return Err(Error::Format(format!(
            "trace holds {} values, header declares {f}x{hw}x{n}",
            data.len()
        )));
    }
    Ok(Tensor::new(vec![f, hw, n], data)?)
}

pub fn write_trace_file(path: &Path, map: &Tensor) -> Result<()> {
    let mut file = File::create(path).map_err(Error::io(path))?;
    write_trace(&mut file, map)
}

pub fn read_trace_file(path: &Path) -> Result<Tensor> {
    read_trace(File::open(path).map_err(Error::io(path))?)
}

/// One row per (block, frame): centroid, entropy and the block's total drift.
pub fn write_drift(out: impl Write, reports: &[(String, DriftReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "block",
        "frame",
        "centroid_x",
        "centroid_y",
        "entropy",
        "total_drift",
    ])?;
    for (label, r) in reports {
        for (fr, (&(x, y), h)) in r.centroids.iter().zip(&r.entropy).enumerate() {
            w.write_record([
                label.clone(),
                fr.to_string(),
                x.to_string(),
                y.to_string(),
                h.to_string(),
                r.total_drift.to_string(),
            ])?;
        }
    }
    w.flush().map_err(Error::io("<drift>"))
}
