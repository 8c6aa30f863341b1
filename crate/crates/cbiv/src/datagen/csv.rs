//! Dataset file format.
//!
//! Header: `z0..z{mz-1},x0..x{mx-1},t,y` optionally followed by
//! `oracle_mu0,oracle_mu1,oracle_p` (binary) or `oracle_x1,oracle_x2`
//! (continuous). UTF-8, comma-separated, one row per unit. Values are
//! written with Rust's shortest-round-trip float formatting, so a
//! write/read cycle is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::{Dataset, Oracle, TreatmentKind};

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = Vec::new();
    for j in 0..ds.z.ncols() {
        header.push(format!("z{j}"));
    }
    for j in 0..ds.x.ncols() {
        header.push(format!("x{j}"));
    }
    header.push("t".into());
    header.push("y".into());
    match &ds.oracle {
        Some(Oracle::Binary { .. }) => {
            header.extend(["oracle_mu0".into(), "oracle_mu1".into(), "oracle_p".into()]);
        }
        Some(Oracle::Continuous { .. }) => {
            header.extend(["oracle_x1".into(), "oracle_x2".into()]);
        }
        None => {}
    }
    writeln!(w, "{}", header.join(","))?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..ds.n() {
        row.clear();
        for j in 0..ds.z.ncols() {
            row.push(ds.z[[i, j]].to_string());
        }
        for j in 0..ds.x.ncols() {
            row.push(ds.x[[i, j]].to_string());
        }
        row.push(ds.t[i].to_string());
        row.push(ds.y[i].to_string());
        match &ds.oracle {
            Some(Oracle::Binary { mu0, mu1, propensity }) => {
                row.push(mu0[i].to_string());
                row.push(mu1[i].to_string());
                row.push(propensity[i].to_string());
            }
            Some(Oracle::Continuous { x1, x2 }) => {
                row.push(x1[i].to_string());
                row.push(x2[i].to_string());
            }
            None => {}
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OracleKind {
    None,
    Binary,
    Continuous,
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let header = header.map_err(Error::Io)?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();

    let mut pos = 0;
    let mut m_z = 0;
    while pos < cols.len() && cols[pos] == format!("z{m_z}") {
        m_z += 1;
        pos += 1;
    }
    let mut m_x = 0;
    while pos < cols.len() && cols[pos] == format!("x{m_x}") {
        m_x += 1;
        pos += 1;
    }
    if m_x == 0 {
        return Err(parse_err(1, "expected at least one x column".into()));
    }
    if pos >= cols.len() || cols[pos] != "t" {
        return Err(parse_err(1, "missing column \"t\"".into()));
    }
    pos += 1;
    if pos >= cols.len() || cols[pos] != "y" {
        return Err(parse_err(1, "missing column \"y\"".into()));
    }
    pos += 1;
    let oracle_kind = match &cols[pos..] {
        [] => OracleKind::None,
        ["oracle_mu0", "oracle_mu1", "oracle_p"] => OracleKind::Binary,
        ["oracle_x1", "oracle_x2"] => OracleKind::Continuous,
        rest => {
            return Err(parse_err(
                1,
                format!("unrecognized trailing columns {rest:?}"),
            ))
        }
    };
    let width = cols.len();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno0, line) in lines {
        let line = line.map_err(Error::Io)?;
        let lineno = lineno0 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != width {
            return Err(parse_err(
                lineno,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let mut parsed = Vec::with_capacity(width);
        for (k, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| {
                parse_err(lineno, format!("field {} ({:?}) is not a number", k + 1, f))
            })?;
            parsed.push(v);
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let n = rows.len();
    let col = |j: usize| Array1::from_shape_fn(n, |i| rows[i][j]);
    let block = |start: usize, w: usize| {
        Array2::from_shape_fn((n, w), |(i, j)| rows[i][start + j])
    };

    let z = block(0, m_z);
    let x = block(m_z, m_x);
    let t = col(m_z + m_x);
    let y = col(m_z + m_x + 1);
    let oracle = match oracle_kind {
        OracleKind::None => None,
        OracleKind::Binary => Some(Oracle::Binary {
            mu0: col(m_z + m_x + 2),
            mu1: col(m_z + m_x + 3),
            propensity: col(m_z + m_x + 4),
        }),
        OracleKind::Continuous => Some(Oracle::Continuous {
            x1: col(m_z + m_x + 2),
            x2: col(m_z + m_x + 3),
        }),
    };
    let treatment_kind = match oracle_kind {
        OracleKind::Binary => TreatmentKind::Binary,
        OracleKind::Continuous => TreatmentKind::Continuous,
        OracleKind::None => {
            if t.iter().all(|&v| v == 0.0 || v == 1.0) {
                TreatmentKind::Binary
            } else {
                TreatmentKind::Continuous
            }
        }
    };
    let ds = Dataset {
        z,
        x,
        t,
        y,
        oracle,
        treatment_kind,
    };
    ds.validate()?;
    Ok(ds)
}

fn parse_err(line: usize, message: String) -> Error {
    Error::Parse { line, message }
}
