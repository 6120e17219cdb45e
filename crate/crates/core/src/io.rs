//! Plain-text formats: quadrature lists and detector trace CSVs.
//!
//! Quadrature files hold one decimal number per line; blank lines and lines
//! starting with `#` are ignored. A single trace is CSV with header `t,x`.
//! Several traces share one CSV with header `trace_id,t,x`, and their
//! triggers live in a companion `trace_id,t_c` file.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::histogram::parse_scalar;
use crate::scalar::Scalar;
use crate::synth::{QuadratureBatch, TimeTrace};

pub fn write_quadratures<T: Scalar, W: Write>(batch: &QuadratureBatch<T>, mut out: W) -> Result<()> {
    for x in batch.samples() {
        writeln!(out, "{x}")?;
    }
    Ok(())
}

pub fn read_quadratures<T: Scalar, R: BufRead>(input: R) -> Result<QuadratureBatch<T>> {
    let mut samples = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v = parse_scalar::<T>(line)
            .map_err(|_| Error::Parse(format!("line {}: `{line}` is not a number", lineno + 1)))?;
        samples.push(v);
    }
    QuadratureBatch::new(samples)
}

pub fn write_trace_csv<T: Scalar, W: Write>(trace: &TimeTrace<T>, mut out: W) -> Result<()> {
    writeln!(out, "t,x")?;
    for (i, x) in trace.values.iter().enumerate() {
        writeln!(out, "{},{x}", trace.time(i))?;
    }
    Ok(())
}

/// Appends `trace` to a multi-trace CSV; write the header once with [`MULTI_TRACE_HEADER`].
pub fn write_trace_rows<T: Scalar, W: Write>(id: &str, trace: &TimeTrace<T>, mut out: W) -> Result<()> {
    for (i, x) in trace.values.iter().enumerate() {
        writeln!(out, "{id},{},{x}", trace.time(i))?;
    }
    Ok(())
}

pub const MULTI_TRACE_HEADER: &str = "trace_id,t,x";
pub const TRIGGER_HEADER: &str = "trace_id,t_c";

fn fields<'a>(line: &'a str, n: usize, lineno: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(Error::Parse(format!(
            "line {lineno}: expected {n} fields, found {}",
            parts.len()
        )));
    }
    Ok(parts)
}

/// Rebuilds a uniformly sampled trace from its time stamps and values.
fn assemble<T: Scalar>(times: &[T], values: Vec<T>, label: &str) -> Result<TimeTrace<T>> {
    if times.len() < 2 {
        return Err(Error::Parse(format!("trace {label} needs at least two samples")));
    }
    let dt = (times[times.len() - 1] - times[0]) / T::from_count(times.len() - 1);
    let tol = dt * T::lit(1e-6);
    for (i, &t) in times.iter().enumerate() {
        if (t - (times[0] + T::from_count(i) * dt)).abs() > tol.max(t.abs() * T::epsilon() * T::lit(64.0)) {
            return Err(Error::Parse(format!("trace {label} is not uniformly sampled")));
        }
    }
    TimeTrace::new(dt, times[0], values)
}

pub fn read_trace_csv<T: Scalar, R: BufRead>(input: R) -> Result<TimeTrace<T>> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == "t,x" => {}
        _ => return Err(Error::Parse("trace CSV must start with header `t,x`".into())),
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(&line, 2, i + 1)?;
        times.push(parse_scalar::<T>(f[0])?);
        values.push(parse_scalar::<T>(f[1])?);
    }
    assemble(&times, values, "")
}

/// Traces keyed by id, in order of first appearance.
pub fn read_multi_trace_csv<T: Scalar, R: BufRead>(input: R) -> Result<Vec<(String, TimeTrace<T>)>> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == MULTI_TRACE_HEADER => {}
        _ => {
            return Err(Error::Parse(format!(
                "multi-trace CSV must start with header `{MULTI_TRACE_HEADER}`"
            )))
        }
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, (Vec<T>, Vec<T>)> = BTreeMap::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(&line, 3, i + 1)?;
        let entry = rows.entry(f[0].to_string()).or_insert_with(|| {
            order.push(f[0].to_string());
            (Vec::new(), Vec::new())
        });
        entry.0.push(parse_scalar::<T>(f[1])?);
        entry.1.push(parse_scalar::<T>(f[2])?);
    }
    order
        .into_iter()
        .map(|id| {
            let (times, values) = rows.remove(&id).expect("id recorded on first sight");
            let trace = assemble(&times, values, &id)?;
            Ok((id, trace))
        })
        .collect()
}

/// `(trace_id, t_c)` pairs in file order.
pub fn read_triggers<T: Scalar, R: BufRead>(input: R) -> Result<Vec<(String, T)>> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == TRIGGER_HEADER => {}
        _ => {
            return Err(Error::Parse(format!(
                "trigger file must start with header `{TRIGGER_HEADER}`"
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(&line, 2, i + 1)?;
        out.push((f[0].to_string(), parse_scalar::<T>(f[1])?));
    }
    Ok(out)
}

pub fn write_triggers<T: Scalar, W: Write>(triggers: &[(String, T)], mut out: W) -> Result<()> {
    writeln!(out, "{TRIGGER_HEADER}")?;
    for (id, t) in triggers {
        writeln!(out, "{id},{t}")?;
    }
    Ok(())
}
