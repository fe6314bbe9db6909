//! Grid CSV: `#`-prefixed metadata lines followed by one line per row.
//!
//! ```text
//! # measure=pwcca
//! # axis_x=a:0,a:1
//! # axis_y=b:0,b:1
//! # flags=0:1:4
//! # provenance.ridge_eps=1e-8
//! 9.0000000000000002e-01,...
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every f64.
//! `flags` lists nonzero cells as `row:col:bits` separated by `;`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{AxisEntry, SimilarityGrid};
use crate::error::{Error, Result};
use crate::measure::{Flags, Measure};

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

fn axis_line(axis: &[AxisEntry]) -> String {
    axis.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
}

pub fn to_csv(grid: &SimilarityGrid) -> String {
    let mut out = String::with_capacity(grid.values.len() * 25 + 256);
    let _ = writeln!(out, "# measure={}", grid.measure);
    let _ = writeln!(out, "# axis_x={}", axis_line(&grid.axis_x));
    let _ = writeln!(out, "# axis_y={}", axis_line(&grid.axis_y));
    let flagged: Vec<String> = (0..grid.rows())
        .flat_map(|i| (0..grid.cols()).map(move |j| (i, j)))
        .filter(|&(i, j)| !grid.flag(i, j).is_empty())
        .map(|(i, j)| format!("{i}:{j}:{}", grid.flag(i, j).0))
        .collect();
    let _ = writeln!(out, "# flags={}", flagged.join(";"));
    for (k, v) in &grid.provenance {
        let _ = writeln!(out, "# provenance.{}={}", escape(k), escape(v));
    }
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:.16e}", grid.value(i, j));
        }
        out.push('\n');
    }
    out
}

fn parse_axis(text: &str, line: usize) -> Result<Vec<AxisEntry>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .enumerate()
        .map(|(k, item)| {
            let bad = |msg: &str| Error::Csv { row: line, col: k + 1, message: format!("{msg}: {item:?}") };
            let (model, layer) = item.rsplit_once(':').ok_or_else(|| bad("axis entry is not model:layer"))?;
            let layer = layer.parse::<u16>().map_err(|_| bad("bad layer index"))?;
            Ok(AxisEntry::new(model, layer))
        })
        .collect()
}

fn parse_flags(text: &str, line: usize) -> Result<Vec<(usize, usize, Flags)>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .enumerate()
        .map(|(k, item)| {
            let bad = || Error::Csv { row: line, col: k + 1, message: format!("bad flag entry {item:?}") };
            let mut it = item.splitn(3, ':').map(|p| p.parse::<u64>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(i)), Some(Ok(j)), Some(Ok(bits))) if bits <= u32::MAX as u64 => {
                    Ok((i as usize, j as usize, Flags(bits as u32)))
                }
                _ => Err(bad()),
            }
        })
        .collect()
}

/// Parses text written by [`to_csv`]. Errors carry 1-based line and field numbers.
pub fn from_csv(text: &str) -> Result<SimilarityGrid> {
    let mut measure = None;
    let mut axis_x = None;
    let mut axis_y = None;
    let mut flag_list = Vec::new();
    let mut provenance = BTreeMap::new();
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if let Some(meta) = raw.strip_prefix('#') {
            let meta = meta.trim_start();
            let Some((key, value)) = meta.split_once('=') else {
                continue;
            };
            match key {
                "measure" => {
                    let m: Measure = value
                        .parse()
                        .map_err(|_| Error::Csv { row: line, col: 1, message: format!("unknown measure {value:?}") })?;
                    measure = Some(m);
                }
                "axis_x" => axis_x = Some(parse_axis(value, line)?),
                "axis_y" => axis_y = Some(parse_axis(value, line)?),
                "flags" => flag_list = parse_flags(value, line)?,
                k => {
                    if let Some(p) = k.strip_prefix("provenance.") {
                        provenance.insert(unescape(p), unescape(value));
                    }
                }
            }
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        let values = raw
            .split(',')
            .enumerate()
            .map(|(k, field)| {
                let v: f64 = field.trim().parse().map_err(|_| Error::Csv {
                    row: line,
                    col: k + 1,
                    message: format!("not a number: {field:?}"),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Csv { row: line, col: k + 1, message: format!("non-finite value {field:?}") })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, values));
    }

    let missing = |what: &str| Error::Csv { row: 0, col: 0, message: format!("missing `# {what}=` header") };
    let measure = measure.ok_or_else(|| missing("measure"))?;
    let axis_x = axis_x.ok_or_else(|| missing("axis_x"))?;
    let axis_y = axis_y.ok_or_else(|| missing("axis_y"))?;
    if rows.len() != axis_x.len() {
        let row = rows.last().map_or(0, |r| r.0);
        return Err(Error::Csv {
            row,
            col: 0,
            message: format!("expected {} data rows, found {}", axis_x.len(), rows.len()),
        });
    }
    let cols = axis_y.len();
    let mut values = Vec::with_capacity(axis_x.len() * cols);
    for (line, row) in rows {
        if row.len() != cols {
            return Err(Error::Csv {
                row: line,
                col: row.len().min(cols) + 1,
                message: format!("expected {cols} fields, found {}", row.len()),
            });
        }
        values.extend(row);
    }
    let mut flags = vec![Flags::NONE; values.len()];
    for (i, j, f) in flag_list {
        if i >= axis_x.len() || j >= cols {
            return Err(Error::Csv { row: 0, col: 0, message: format!("flag cell {i}:{j} is outside the grid") });
        }
        flags[i * cols + j] = f;
    }
    let cells = (0..axis_x.len())
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| (axis_x[i].clone(), axis_y[j].clone(), crate::measure::Score::new(values[i * cols + j], flags[i * cols + j])))
        .collect::<Vec<_>>();
    super::assemble(measure, axis_x, axis_y, cells, provenance)
}
