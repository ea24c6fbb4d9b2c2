//! Dense row-major CSV for matrices and operator families, preceded by a
//! one-line JSON header:
//!
//! ```text
//! # {"schema_version":1,"dim":3,"n":1,"time_grid":[],"interpolation":"piecewise-constant","blocks":["A","B1"]}
//! 1,0,0
//! ...
//! ```
//!
//! Blocks of `dim` rows follow in header order, once per grid time (once in
//! total for an empty grid, i.e. a time-independent family).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::family::{Interpolation, OperatorFamily, TimeMatrix};
use super::linalg::Matrix;
use crate::error::{Error, Result};

pub const MATRIX_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub schema_version: u32,
    pub dim: usize,
    pub n: usize,
    pub time_grid: Vec<f64>,
    #[serde(default)]
    pub interpolation: Interpolation,
    pub blocks: Vec<String>,
}

fn write_header<W: Write>(w: &mut W, header: &MatrixHeader) -> Result<()> {
    writeln!(w, "# {}", serde_json::to_string(header)?)?;
    Ok(())
}

fn write_rows<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn read_header<R: BufRead>(r: &mut R) -> Result<MatrixHeader> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let json = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::InvalidParameter("matrix file must start with a `#` JSON header".into()))?;
    let header: MatrixHeader = serde_json::from_str(json.trim())?;
    if header.schema_version != MATRIX_SCHEMA_VERSION {
        return Err(Error::InvalidParameter(format!(
            "unsupported matrix schema version {}",
            header.schema_version
        )));
    }
    Ok(header)
}

fn read_blocks<R: BufRead>(r: R, dim: usize, count: usize) -> Result<Vec<Matrix>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidParameter(format!("bad number `{s}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
        }
        rows.push(row);
    }
    if rows.len() != dim * count {
        return Err(Error::DimensionMismatch { expected: dim * count, got: rows.len() });
    }
    Ok(rows
        .chunks(dim)
        .map(|chunk| Matrix::from_fn(dim, dim, |i, j| chunk[i][j]))
        .collect())
}

pub fn write_matrix_csv<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    let header = MatrixHeader {
        schema_version: MATRIX_SCHEMA_VERSION,
        dim: m.nrows(),
        n: 0,
        time_grid: Vec::new(),
        interpolation: Interpolation::PiecewiseConstant,
        blocks: vec!["M".into()],
    };
    write_header(w, &header)?;
    write_rows(w, m)
}

pub fn read_matrix_csv<R: BufRead>(mut r: R) -> Result<Matrix> {
    let header = read_header(&mut r)?;
    let mut blocks = read_blocks(r, header.dim, 1)?;
    Ok(blocks.remove(0))
}

/// Writes `A`, the `B_k` and (when present) `Ã′` on the union of the
/// members' grids. The nonlinearity is not serialised.
pub fn write_family_csv<W: Write>(w: &mut W, ops: &OperatorFamily, rule: Interpolation) -> Result<()> {
    let grid = ops.time_grid();
    let mut blocks = vec!["A".to_string()];
    blocks.extend((1..=ops.noise_count()).map(|k| format!("B{k}")));
    if ops.a_tilde_prime().is_some() {
        blocks.push("A_tilde_prime".into());
    }
    let header = MatrixHeader {
        schema_version: MATRIX_SCHEMA_VERSION,
        dim: ops.dim(),
        n: ops.noise_count(),
        time_grid: grid.clone(),
        interpolation: rule,
        blocks,
    };
    write_header(w, &header)?;
    let times = if grid.is_empty() { vec![0.0] } else { grid };
    for &t in &times {
        write_rows(w, &*ops.a_at(t)?)?;
        for k in 0..ops.noise_count() {
            write_rows(w, &*ops.b_at(k, t)?)?;
        }
        if let Some(d) = ops.a_tilde_prime() {
            write_rows(w, &*d.at(t)?)?;
        }
    }
    Ok(())
}

pub fn read_family_csv<R: BufRead>(mut r: R) -> Result<OperatorFamily> {
    let header = read_header(&mut r)?;
    let per_time = header.blocks.len();
    if per_time != header.n + 1 && per_time != header.n + 2 {
        return Err(Error::InvalidParameter(format!(
            "{} blocks declared for n = {}",
            per_time, header.n
        )));
    }
    let steps = header.time_grid.len().max(1);
    let blocks = read_blocks(r, header.dim, per_time * steps)?;
    let member = |idx: usize| -> Result<TimeMatrix> {
        let series: Vec<Matrix> = (0..steps).map(|s| blocks[s * per_time + idx].clone()).collect();
        if header.time_grid.is_empty() {
            Ok(TimeMatrix::Constant(series.into_iter().next().unwrap()))
        } else {
            TimeMatrix::sampled(header.time_grid.clone(), series, header.interpolation)
        }
    };
    let a = member(0)?;
    let bs = (1..=header.n).map(member).collect::<Result<Vec<_>>>()?;
    let mut ops = OperatorFamily::new(a, bs)?;
    if per_time == header.n + 2 {
        ops = ops.with_a_tilde_prime(member(header.n + 1)?)?;
    }
    Ok(ops)
}
