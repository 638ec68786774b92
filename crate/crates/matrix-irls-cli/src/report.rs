//! Sweep reports in CSV or JSON with stable columns and full-precision
//! floats.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::experiment::SweepRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: &str =
    "rho,m,trials,median_rel_error,q25,q75,median_iters,median_wall_time_s";

/// 17 significant digits: enough to reproduce every f64 bit-exactly on
/// parse-back.
fn full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders the sweep rows in the requested format.
pub fn render_report(rows: &[SweepRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        bail!("refusing to write an empty report");
    }
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    full(r.rho),
                    r.m,
                    r.trials,
                    full(r.median_rel_error),
                    full(r.q25),
                    full(r.q75),
                    full(r.median_iters),
                    full(r.median_wall_time_s),
                ));
            }
            Ok(out)
        }
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(rows)?;
            text.push('\n');
            Ok(text)
        }
    }
}

/// Writes the report to `path`, surfacing I/O failures with path context.
pub fn emit_report(rows: &[SweepRow], format: ReportFormat, path: &Path) -> Result<()> {
    let text = render_report(rows, format)?;
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("cannot create report file {}", path.display()))?;
    file.write_all(text.as_bytes())
        .with_context(|| format!("cannot write report to {}", path.display()))?;
    Ok(())
}

/// Parses a CSV report back into rows; the inverse of the CSV renderer.
pub fn parse_csv_report(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    let header = lines.next().context("empty report")?;
    if header != CSV_HEADER {
        bail!("unexpected report header: {header}");
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            bail!("line {} has {} fields, expected 8", idx + 2, fields.len());
        }
        rows.push(SweepRow {
            rho: fields[0].parse()?,
            m: fields[1].parse()?,
            trials: fields[2].parse()?,
            median_rel_error: fields[3].parse()?,
            q25: fields[4].parse()?,
            q75: fields[5].parse()?,
            median_iters: fields[6].parse()?,
            median_wall_time_s: fields[7].parse()?,
        });
    }
    Ok(rows)
}
