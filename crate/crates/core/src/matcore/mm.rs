//! Matrix Market coordinate format reader and writer.
//!
//! Supported: real/integer/pattern fields, general/symmetric symmetry.
//! Written files always use "real general" with 17 significant digits so the
//! read-back reproduces the exact f64 bits.

use super::{CsrMatrix, CsrViolation};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported field '{0}' (only real, integer and pattern are accepted)")]
    UnsupportedField(String),
    #[error("unsupported symmetry '{0}' (only general and symmetric are accepted)")]
    UnsupportedSymmetry(String),
    #[error("parsed matrix is not valid CSR: {0}")]
    Invalid(#[from] CsrViolation),
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

fn parse_err(line: usize, msg: impl Into<String>) -> MmError {
    MmError::Parse { line, msg: msg.into() }
}

pub fn read(path: &Path) -> Result<CsrMatrix, MmError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (lineno, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))
        .and_then(|(i, l)| Ok((i + 1, l?)))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() < 5 || !tokens[0].eq_ignore_ascii_case("%%MatrixMarket") {
        return Err(parse_err(lineno, "missing %%MatrixMarket header"));
    }
    if !tokens[1].eq_ignore_ascii_case("matrix") || !tokens[2].eq_ignore_ascii_case("coordinate") {
        return Err(parse_err(lineno, "only 'matrix coordinate' files are supported"));
    }
    let field = match tokens[3].to_ascii_lowercase().as_str() {
        "real" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(MmError::UnsupportedField(other.to_string())),
    };
    let symmetric = match tokens[4].to_ascii_lowercase().as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(MmError::UnsupportedSymmetry(other.to_string())),
    };

    // Size line: first non-comment, non-blank line after the header.
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match dims {
            None => {
                if toks.len() != 3 {
                    return Err(parse_err(lineno, "size line must have 3 fields"));
                }
                let nrows = toks[0]
                    .parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("bad row count: {e}")))?;
                let ncols = toks[1]
                    .parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("bad column count: {e}")))?;
                let nnz = toks[2]
                    .parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("bad nonzero count: {e}")))?;
                entries.reserve(if symmetric { 2 * nnz } else { nnz });
                dims = Some((nrows, ncols, nnz));
            }
            Some((nrows, ncols, _)) => {
                let expected = if field == Field::Pattern { 2 } else { 3 };
                if toks.len() != expected {
                    return Err(parse_err(
                        lineno,
                        format!("entry must have {expected} fields, got {}", toks.len()),
                    ));
                }
                let r = toks[0]
                    .parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("bad row index: {e}")))?;
                let c = toks[1]
                    .parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("bad column index: {e}")))?;
                if r < 1 || r > nrows || c < 1 || c > ncols {
                    return Err(parse_err(lineno, format!("coordinate ({r}, {c}) out of range")));
                }
                let v = match field {
                    Field::Pattern => 1.0,
                    _ => toks[2]
                        .parse::<f64>()
                        .map_err(|e| parse_err(lineno, format!("bad value: {e}")))?,
                };
                // 1-based on disk, 0-based in memory.
                entries.push((r - 1, c - 1, v));
                if symmetric && r != c {
                    entries.push((c - 1, r - 1, v));
                }
            }
        }
    }
    let (nrows, ncols, nnz) = dims.ok_or_else(|| parse_err(0, "missing size line"))?;
    if !symmetric && entries.len() != nnz {
        return Err(parse_err(0, format!("expected {nnz} entries, found {}", entries.len())));
    }
    Ok(CsrMatrix::from_coo(nrows, ncols, entries)?)
}

pub fn write(m: &CsrMatrix, path: &Path) -> Result<(), MmError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for i in 0..m.nrows() {
        for j in m.rowptr()[i]..m.rowptr()[i + 1] {
            // 17 significant digits round-trip any f64 exactly.
            writeln!(w, "{} {} {:.16e}", i + 1, m.colind()[j] as usize + 1, m.values()[j])?;
        }
    }
    w.flush()?;
    Ok(())
}
