//! Per-iteration trace records and their CSV form.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "iter,elapsed_ms,elbo,param_error,grad_norm,min_denominator,fallback_count";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub elapsed_ms: f64,
    pub elbo: f64,
    pub param_error: Option<f64>,
    pub grad_norm: f64,
    pub min_denominator: f64,
    pub fallback_count: usize,
    /// Iterate after this step. Kept in memory only.
    pub lambda: Vec<f64>,
    /// Averaged iterate after this step (equal to `lambda` unless averaging).
    pub lambda_bar: Vec<f64>,
}

impl TraceRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_modulo_time(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.elapsed_ms = other.elapsed_ms;
        a == *other
    }
}

fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Terminal status of a traced run.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceStatus {
    Ok,
    Error(String),
}

/// Writes `# key=value` metadata lines, the header, one row per record and
/// a final `# status=...` line.
pub fn write_trace<W: Write>(
    mut w: W,
    metadata: &[(String, String)],
    records: &[TraceRecord],
    status: &TraceStatus,
) -> Result<()> {
    for (k, v) in metadata {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.iter,
            fmt_real(r.elapsed_ms),
            fmt_real(r.elbo),
            r.param_error.map(fmt_real).unwrap_or_default(),
            fmt_real(r.grad_norm),
            fmt_real(r.min_denominator),
            r.fallback_count
        )?;
    }
    match status {
        TraceStatus::Ok => writeln!(w, "# status=ok")?,
        TraceStatus::Error(msg) => writeln!(w, "# status=error:{}", msg.replace('\n', " "))?,
    }
    Ok(())
}

/// Writes a trace file; an empty record list is rejected.
pub fn emit_trace(
    path: &Path,
    metadata: &[(String, String)],
    records: &[TraceRecord],
    status: &TraceStatus,
) -> Result<()> {
    if records.is_empty() && *status == TraceStatus::Ok {
        return Err(Error::State("refusing to write an empty trace".into()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace(&mut f, metadata, records, status)?;
    f.flush()?;
    Ok(())
}

/// A trace read back from CSV. Iterates are not stored in the file, so the
/// parsed records have empty `lambda` and `lambda_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub metadata: Vec<(String, String)>,
    pub records: Vec<TraceRecord>,
    pub status: Option<TraceStatus>,
}

fn field<T: std::str::FromStr>(name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(name, format!("cannot parse `{s}`")))
}

pub fn read_trace<R: BufRead>(r: R) -> Result<ParsedTrace> {
    let mut metadata = Vec::new();
    let mut records = Vec::new();
    let mut status = None;
    let mut seen_header = false;
    for line in r.lines() {
        let line = line?;
        if let Some(meta) = line.strip_prefix("# ") {
            if let Some(rest) = meta.strip_prefix("status=") {
                status = Some(match rest.strip_prefix("error:") {
                    Some(msg) => TraceStatus::Error(msg.to_string()),
                    None => TraceStatus::Ok,
                });
            } else if let Some((k, v)) = meta.split_once('=') {
                metadata.push((k.to_string(), v.to_string()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line != TRACE_HEADER {
                return Err(Error::parse("header", format!("unexpected header `{line}`")));
            }
            seen_header = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::parse("row", format!("expected 7 columns, got {}", cols.len())));
        }
        records.push(TraceRecord {
            iter: field("iter", cols[0])?,
            elapsed_ms: field("elapsed_ms", cols[1])?,
            elbo: field("elbo", cols[2])?,
            param_error: if cols[3].is_empty() {
                None
            } else {
                Some(field("param_error", cols[3])?)
            },
            grad_norm: field("grad_norm", cols[4])?,
            min_denominator: field("min_denominator", cols[5])?,
            fallback_count: field("fallback_count", cols[6])?,
            lambda: Vec::new(),
            lambda_bar: Vec::new(),
        });
    }
    if !seen_header {
        return Err(Error::parse("header", "missing trace header"));
    }
    Ok(ParsedTrace {
        metadata,
        records,
        status,
    })
}

pub fn load_trace(path: &Path) -> Result<ParsedTrace> {
    let f = std::fs::File::open(path)?;
    read_trace(std::io::BufReader::new(f))
}
