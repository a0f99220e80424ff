//! Text formats for paths and explicit partition sequences.
//!
//! Path files carry one row per grid time and per jump time:
//!
//! ```text
//! # interp=linear
//! t,x1,...,xd,jump1,...,jumpd
//! ```
//!
//! The `x` columns hold the stored grid samples (the continuous part for
//! linear interpolation, the step values for constant interpolation) and are
//! left empty on rows that only carry a jump. Floats are written with 17
//! significant digits, so a write/read cycle is bit-exact.

use crate::error::{Error, Result};
use crate::partition::{Partition, PartitionSequence};
use crate::path::{CadlagPath, Interp, Jump};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_path_csv(x: &CadlagPath) -> String {
    let d = x.dim();
    let interp = match x.interp() {
        Interp::PiecewiseLinear => "linear",
        Interp::PiecewiseConstantRight => "constant",
    };
    let mut out = format!("# interp={interp}\nt");
    for i in 1..=d {
        out.push_str(&format!(",x{i}"));
    }
    for i in 1..=d {
        out.push_str(&format!(",jump{i}"));
    }
    out.push('\n');

    let grid = x.grid();
    let jumps = x.explicit_jumps();
    let (mut g, mut j) = (0, 0);
    while g < grid.len() || j < jumps.len() {
        let tg = grid.get(g).copied().unwrap_or(f64::INFINITY);
        let tj = jumps.get(j).map_or(f64::INFINITY, |jj| jj.time);
        let t = tg.min(tj);
        out.push_str(&fmt(t));
        if tg == t {
            for v in x.sample(g) {
                out.push(',');
                out.push_str(&fmt(*v));
            }
            g += 1;
        } else {
            out.push_str(&",".repeat(d));
        }
        if tj == t {
            for v in &jumps[j].delta {
                out.push(',');
                out.push_str(&fmt(*v));
            }
            j += 1;
        } else {
            for _ in 0..d {
                out.push_str(",0");
            }
        }
        out.push('\n');
    }
    out
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| parse_err(line, format!("bad number {field:?}: {e}")))
}

fn reader(text: &str, has_headers: bool) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(has_headers)
        .flexible(!has_headers)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

pub fn read_path_csv(text: &str) -> Result<CadlagPath> {
    let mut interp = Interp::PiecewiseLinear;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("interp=") {
                interp = match v.trim() {
                    "linear" => Interp::PiecewiseLinear,
                    "constant" => Interp::PiecewiseConstantRight,
                    other => return Err(parse_err(i + 1, format!("unknown interpolation {other:?}"))),
                };
            }
        }
    }
    let mut rdr = reader(text, true);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let cols = header.len();
    if cols < 3 || cols % 2 == 0 || header.get(0) != Some("t") {
        return Err(parse_err(1, "header must be t,x1..xd,jump1..jumpd"));
    }
    let d = (cols - 1) / 2;
    let mut grid = Vec::new();
    let mut samples = Vec::new();
    let mut jumps = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record_line(&rec);
        let t = parse_f64(&rec[0], line)?;
        let xs: Vec<&str> = (1..=d).map(|i| &rec[i]).collect();
        if xs.iter().all(|s| s.is_empty()) {
            // jump-only row
        } else if xs.iter().any(|s| s.is_empty()) {
            return Err(parse_err(line, "partially empty sample row"));
        } else {
            grid.push(t);
            for s in xs {
                samples.push(parse_f64(s, line)?);
            }
        }
        let delta = (d + 1..=2 * d).map(|i| parse_f64(&rec[i], line)).collect::<Result<Vec<_>>>()?;
        if delta.iter().any(|&v| v != 0.0) {
            jumps.push(Jump::new(t, delta));
        }
    }
    CadlagPath::new(d, grid, samples, jumps, interp)
}

/// One partition per line: the points `0 = t_0 < ... < t_n = T`.
pub fn read_partition_levels_csv(text: &str) -> Result<PartitionSequence> {
    let mut levels = Vec::new();
    for rec in reader(text, false).records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record_line(&rec);
        let points = rec.iter().filter(|s| !s.is_empty()).map(|s| parse_f64(s, line)).collect::<Result<Vec<_>>>()?;
        levels.push(Partition::from_points(points).map_err(|e| parse_err(line, e.to_string()))?);
    }
    PartitionSequence::explicit(levels)
}

pub fn write_partition_levels_csv(seq: &PartitionSequence) -> String {
    let mut out = String::new();
    for pi in seq.levels() {
        let row: Vec<String> = pi.points().into_iter().map(fmt).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
