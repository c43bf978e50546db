//! CSV persistence of simulation traces.
//!
//! Layout: seven global columns followed by one block per phase
//! (`a`, `b`, `c`):
//!
//! ```text
//! t, v_avg, v_s_a, v_s_b, v_s_c, p_pv_total, p_ac,
//! i_a, i_a_ref, i_z_a,
//! v_c_a_u1..v_c_a_un, v_c_a_l1..v_c_a_ln,
//! u_a_u1..u_a_un, u_a_l1..u_a_ln,
//! p_pv_a_u1..p_pv_a_ln, g_a_u1..g_a_ln,
//! k_up_a, k_low_a, ...
//! ```
//!
//! Reals are written with nine significant digits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::engine::{LegRecord, SimResult, TraceRecord};
use crate::error::{Error, Result};
use crate::grid::Phase;

const GLOBAL_COLUMNS: [&str; 7] = ["t", "v_avg", "v_s_a", "v_s_b", "v_s_c", "p_pv_total", "p_ac"];

pub fn column_count(n: usize) -> usize {
    GLOBAL_COLUMNS.len() + 3 * (3 + 2 * 2 * n + 2 * n + 2 * n + 2)
}

fn sm_labels(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("u{j}")).chain((1..=n).map(|j| format!("l{j}"))).collect()
}

pub fn header(n: usize) -> Vec<String> {
    let mut cols: Vec<String> = GLOBAL_COLUMNS.iter().map(|s| s.to_string()).collect();
    let sms = sm_labels(n);
    for phase in Phase::ALL {
        let x = phase.label();
        cols.push(format!("i_{x}"));
        cols.push(format!("i_{x}_ref"));
        cols.push(format!("i_z_{x}"));
        for prefix in ["v_c", "u", "p_pv", "g"] {
            cols.extend(sms.iter().map(|sm| format!("{prefix}_{x}_{sm}")));
        }
        cols.push(format!("k_up_{x}"));
        cols.push(format!("k_low_{x}"));
    }
    cols
}

fn real(x: f64) -> String {
    format!("{x:.8e}")
}

fn row(record: &TraceRecord) -> Vec<String> {
    let mut out = vec![
        real(record.t),
        real(record.v_avg),
        real(record.v_s[0]),
        real(record.v_s[1]),
        real(record.v_s[2]),
        real(record.p_pv_total()),
        real(record.p_ac()),
    ];
    for leg in &record.legs {
        out.push(real(leg.i_ac));
        out.push(real(leg.i_ref));
        out.push(real(leg.i_z));
        out.extend(leg.v_c.iter().map(|&v| real(v)));
        out.extend(leg.u.iter().map(|&u| (u as u8).to_string()));
        out.extend(leg.p_pv.iter().map(|&p| real(p)));
        out.extend(leg.irradiance.iter().map(|&g| real(g)));
        out.push(leg.k_up.to_string());
        out.push(leg.k_low.to_string());
    }
    out
}

/// Writes the trace of `n`-SM-per-arm records to any writer.
pub fn write_trace<W: Write>(trace: &[TraceRecord], n: usize, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(n))?;
    for record in trace {
        w.write_record(row(record))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(result: &SimResult, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(&result.trace, result.n, file).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.into(),
            message: format!("{other:?}"),
        },
    }
}

/// Parses a trace previously written by [`write_trace`]. The number of SMs
/// per arm is inferred from the header.
pub fn read_trace<R: Read>(reader: R) -> std::result::Result<(usize, Vec<TraceRecord>), String> {
    let mut r = csv::Reader::from_reader(reader);
    let head: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    let per_n = column_count(1) - column_count(0);
    let extra = head.len().checked_sub(column_count(0)).ok_or("too few columns")?;
    if extra % per_n != 0 || extra == 0 {
        return Err(format!("unexpected column count {}", head.len()));
    }
    let n = extra / per_n;
    if head != header(n) {
        return Err("header does not match the trace schema".into());
    }

    let mut trace = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let field = |k: usize| -> std::result::Result<f64, String> {
            rec[k].parse::<f64>().map_err(|e| format!("row {}, column {}: {e}", line + 1, head[k]))
        };
        let mut k = GLOBAL_COLUMNS.len();
        let mut take = |count: usize| -> std::result::Result<Vec<f64>, String> {
            let v = (k..k + count).map(field).collect::<std::result::Result<Vec<_>, _>>()?;
            k += count;
            Ok(v)
        };
        let mut legs = Vec::with_capacity(3);
        for _ in 0..3 {
            let scalars = take(3)?;
            let v_c = take(2 * n)?;
            let u = take(2 * n)?.into_iter().map(|x| x != 0.0).collect();
            let p_pv = take(2 * n)?;
            let irradiance = take(2 * n)?;
            let counts = take(2)?;
            legs.push(LegRecord {
                i_ac: scalars[0],
                i_ref: scalars[1],
                i_z: scalars[2],
                v_c,
                u,
                p_pv,
                irradiance,
                k_up: counts[0] as usize,
                k_low: counts[1] as usize,
            });
        }
        trace.push(TraceRecord {
            t: field(0)?,
            v_avg: field(1)?,
            v_s: [field(2)?, field(3)?, field(4)?],
            legs,
        });
    }
    Ok((n, trace))
}

pub fn read_trace_csv(path: &Path) -> Result<(usize, Vec<TraceRecord>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(file).map_err(|message| Error::Format {
        path: path.into(),
        message,
    })
}
