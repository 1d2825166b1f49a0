//! CSV and JSON output.
//!
//! Floats are written with 17 significant digits, which reads back to the
//! same `f64`.

use std::io::{Read, Write};

use thiserror::Error;

use crate::ensemble::EnsembleTrace;
use crate::master::DistributionTrajectory;
use crate::scf::FieldTrajectory;

/// Probabilities below this are left out of distribution tables.
pub const MIN_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed table: {0}")]
    Format(String),
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(first: &str, prefix: &str, d: usize, rest: &[&str]) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((1..=d).map(|i| format!("{prefix}_{i}")))
        .chain(rest.iter().map(|s| s.to_string()))
        .collect()
}

/// `t,r_1,...,r_d` on the given times.
pub fn write_field_csv<W: Write>(out: W, field: &FieldTrajectory, times: &[f64]) -> Result<(), ExportError> {
    let rows: Vec<Vec<f64>> = times.iter().map(|&t| field.eval(t)).collect();
    write_table(out, "r", times, &rows)
}

/// `t,<prefix>_1,...,<prefix>_d` from explicit rows.
pub fn write_table<W: Write>(out: W, prefix: &str, times: &[f64], rows: &[Vec<f64>]) -> Result<(), ExportError> {
    let d = rows.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header("t", prefix, d, &[]))?;
    for (t, row) in times.iter().zip(rows) {
        w.write_record(std::iter::once(fmt_f64(*t)).chain(row.iter().map(|&x| fmt_f64(x))))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_table`] or [`write_field_csv`];
/// returns the times and rows.
pub fn read_table<R: Read>(input: R) -> Result<(Vec<f64>, Vec<Vec<f64>>), ExportError> {
    let mut r = csv::Reader::from_reader(input);
    let width = r.headers()?.len();
    if width < 2 {
        return Err(ExportError::Format("expected a time column and at least one value column".into()));
    }
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ExportError::Format(format!("row {}: {e}", line + 2)))?;
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    Ok((times, rows))
}

/// Reads a field table back into a piecewise-linear field that reproduces
/// the stored rows exactly at the stored times.
pub fn read_field_csv<R: Read>(input: R) -> Result<FieldTrajectory, ExportError> {
    let (times, rows) = read_table(input)?;
    if times.len() < 2 || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExportError::Format("times must be increasing with at least two rows".into()));
    }
    Ok(FieldTrajectory::from_samples(times, &rows))
}

/// `t,y_1,...,y_d,prob` for every state with probability at least
/// [`MIN_PROBABILITY`].
pub fn write_distribution_csv<W: Write>(out: W, traj: &DistributionTrajectory, times: &[f64]) -> Result<(), ExportError> {
    let lat = traj.lattice();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header("t", "y", lat.dim(), &["prob"]))?;
    for &t in times {
        let v = traj.at(t);
        for (y, &p) in lat.states().zip(&v) {
            if p >= MIN_PROBABILITY {
                let rec = std::iter::once(fmt_f64(t))
                    .chain(y.iter().map(|c| c.to_string()))
                    .chain(std::iter::once(fmt_f64(p)));
                w.write_record(rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `t,mean_1,...,mean_d,total_mass,tail_mass`.
pub fn write_master_moments_csv<W: Write>(out: W, traj: &DistributionTrajectory, times: &[f64]) -> Result<(), ExportError> {
    let d = traj.lattice().dim();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header("t", "mean", d, &["total_mass", "tail_mass"]))?;
    for &t in times {
        let rec = std::iter::once(t)
            .chain(traj.moments(t))
            .chain([traj.total_mass(t), traj.tail_mass(t)])
            .map(fmt_f64);
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,mean_1,...,mean_d,events_birth,events_death,events_mutation`.
pub fn write_trace_csv<W: Write>(out: W, trace: &EnsembleTrace) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header("t", "mean", trace.d, &["events_birth", "events_death", "events_mutation"]))?;
    for c in &trace.checkpoints {
        let rec = std::iter::once(fmt_f64(c.t))
            .chain(c.mean.iter().map(|&x| fmt_f64(x)))
            .chain([c.events.birth, c.events.death, c.events.mutation].map(|n| n.to_string()));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn write_json<W: Write, T: serde::Serialize + ?Sized>(mut out: W, value: &T) -> Result<(), ExportError> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}
