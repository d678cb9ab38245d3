//! Synthetic matrix generation. Each generator kind is engineered to stress a
//! different structural regime: banded (regular, streaming), uniform-random
//! (irregular gathers), power-law rows (heavy-tail imbalance), block-dense
//! (dense compute-heavy regions).

use super::CsrMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorKind {
    /// All nonzeros within |col - row| <= (bandwidth - 1) / 2.
    Banded { bandwidth: usize },
    /// Nonzero cells drawn uniformly without replacement.
    UniformRandom,
    /// Row lengths proportional to rank^(-exponent).
    PowerLawRows { exponent: f64 },
    /// Dense square blocks along the diagonal.
    BlockDense { block_size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub nrows: usize,
    pub ncols: usize,
    pub target_nnz: usize,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("target nnz {target} exceeds structural capacity {capacity} of the {kind} kind")]
    Infeasible { kind: &'static str, target: usize, capacity: usize },
    #[error("invalid generator spec: {0}")]
    BadSpec(String),
}

impl GeneratorSpec {
    pub fn id(&self) -> String {
        let (kind, extra) = match self.kind {
            GeneratorKind::Banded { bandwidth } => ("banded", format!(",{bandwidth}")),
            GeneratorKind::UniformRandom => ("uniform-random", String::new()),
            GeneratorKind::PowerLawRows { exponent } => ("power-law-rows", format!(",{exponent}")),
            GeneratorKind::BlockDense { block_size } => ("block-dense", format!(",{block_size}")),
        };
        format!(
            "gen:{kind},{},{},{},{}{extra}",
            self.nrows, self.ncols, self.target_nnz, self.seed
        )
    }
}

/// Parses the CLI form `gen:kind,rows,cols,nnz,seed[,extra]`.
impl FromStr for GeneratorSpec {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, GenError> {
        let body = s.strip_prefix("gen:").unwrap_or(s);
        let parts: Vec<&str> = body.split(',').collect();
        if parts.len() < 5 {
            return Err(GenError::BadSpec(format!(
                "expected gen:kind,rows,cols,nnz,seed[,extra], got '{s}'"
            )));
        }
        let num = |p: &str, what: &str| -> Result<usize, GenError> {
            p.parse().map_err(|e| GenError::BadSpec(format!("bad {what} '{p}': {e}")))
        };
        let nrows = num(parts[1], "rows")?;
        let ncols = num(parts[2], "cols")?;
        let target_nnz = num(parts[3], "nnz")?;
        let seed = parts[4]
            .parse()
            .map_err(|e| GenError::BadSpec(format!("bad seed '{}': {e}", parts[4])))?;
        let extra = parts.get(5).copied();
        let kind = match parts[0] {
            "banded" => GeneratorKind::Banded { bandwidth: num(extra.unwrap_or("3"), "bandwidth")? },
            "uniform-random" => GeneratorKind::UniformRandom,
            "power-law-rows" => GeneratorKind::PowerLawRows {
                exponent: extra
                    .unwrap_or("2.0")
                    .parse()
                    .map_err(|e| GenError::BadSpec(format!("bad exponent: {e}")))?,
            },
            "block-dense" => {
                GeneratorKind::BlockDense { block_size: num(extra.unwrap_or("8"), "block size")? }
            }
            other => return Err(GenError::BadSpec(format!("unknown kind '{other}'"))),
        };
        Ok(GeneratorSpec { kind, nrows, ncols, target_nnz, seed })
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<CsrMatrix, GenError> {
    if spec.target_nnz > spec.nrows.saturating_mul(spec.ncols) {
        return Err(GenError::Infeasible {
            kind: "any",
            target: spec.target_nnz,
            capacity: spec.nrows * spec.ncols,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells = match spec.kind {
        GeneratorKind::Banded { bandwidth } => banded_cells(spec, bandwidth, &mut rng)?,
        GeneratorKind::UniformRandom => uniform_cells(spec, &mut rng),
        GeneratorKind::PowerLawRows { exponent } => power_law_cells(spec, exponent, &mut rng)?,
        GeneratorKind::BlockDense { block_size } => block_cells(spec, block_size, &mut rng)?,
    };
    let entries: Vec<(usize, usize, f64)> =
        cells.into_iter().map(|(r, c)| (r, c, rng.gen_range(-1.0..1.0))).collect();
    let m = CsrMatrix::from_coo(spec.nrows, spec.ncols, entries)
        .expect("generated cells are distinct and in range");
    Ok(m)
}

fn banded_cells(
    spec: &GeneratorSpec,
    bandwidth: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>, GenError> {
    if bandwidth == 0 {
        return Err(GenError::BadSpec("bandwidth must be >= 1".into()));
    }
    let half = (bandwidth - 1) / 2;
    // Row spans of the band, as cumulative offsets into the candidate cells.
    let mut row_start = Vec::with_capacity(spec.nrows + 1);
    let mut row_lo = Vec::with_capacity(spec.nrows);
    let mut total = 0usize;
    row_start.push(0);
    for i in 0..spec.nrows {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(spec.ncols.saturating_sub(1));
        let width = if spec.ncols == 0 || lo > hi { 0 } else { hi - lo + 1 };
        row_lo.push(lo);
        total += width;
        row_start.push(total);
    }
    if spec.target_nnz > total {
        return Err(GenError::Infeasible { kind: "banded", target: spec.target_nnz, capacity: total });
    }
    let mut picks = sample(rng, total, spec.target_nnz).into_vec();
    picks.sort_unstable();
    let mut cells = Vec::with_capacity(spec.target_nnz);
    let mut row = 0usize;
    for p in picks {
        while row_start[row + 1] <= p {
            row += 1;
        }
        cells.push((row, row_lo[row] + (p - row_start[row])));
    }
    Ok(cells)
}

fn uniform_cells(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let total = spec.nrows * spec.ncols;
    sample(rng, total, spec.target_nnz)
        .into_iter()
        .map(|p| (p / spec.ncols, p % spec.ncols))
        .collect()
}

fn power_law_cells(
    spec: &GeneratorSpec,
    exponent: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>, GenError> {
    if !(exponent.is_finite() && exponent > 0.0) {
        return Err(GenError::BadSpec("power-law exponent must be positive".into()));
    }
    let weights: Vec<f64> = (0..spec.nrows).map(|i| ((i + 1) as f64).powf(-exponent)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut lens: Vec<usize> = weights
        .iter()
        .map(|w| (((spec.target_nnz as f64) * w / wsum).floor() as usize).min(spec.ncols))
        .collect();
    // Hand out the remainder (and any capacity lost to the ncols cap) in rank
    // order so the head of the distribution stays the heaviest.
    let mut assigned: usize = lens.iter().sum();
    'outer: while assigned < spec.target_nnz {
        let before = assigned;
        for l in lens.iter_mut() {
            if *l < spec.ncols {
                *l += 1;
                assigned += 1;
                if assigned == spec.target_nnz {
                    break 'outer;
                }
            }
        }
        if assigned == before {
            return Err(GenError::Infeasible {
                kind: "power-law-rows",
                target: spec.target_nnz,
                capacity: assigned,
            });
        }
    }
    let mut cells = Vec::with_capacity(spec.target_nnz);
    for (i, &len) in lens.iter().enumerate() {
        for c in sample(rng, spec.ncols, len) {
            cells.push((i, c));
        }
    }
    Ok(cells)
}

fn block_cells(
    spec: &GeneratorSpec,
    block_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>, GenError> {
    let _ = rng;
    if block_size == 0 {
        return Err(GenError::BadSpec("block size must be >= 1".into()));
    }
    // Dense blocks along the diagonal, clipped at the matrix edges.
    let mut capacity = 0usize;
    let mut blocks = Vec::new();
    let mut r0 = 0usize;
    while r0 < spec.nrows && r0 < spec.ncols {
        let rows = block_size.min(spec.nrows - r0);
        let cols = block_size.min(spec.ncols - r0);
        capacity += rows * cols;
        blocks.push((r0, rows, cols));
        r0 += block_size;
    }
    if spec.target_nnz > capacity {
        return Err(GenError::Infeasible {
            kind: "block-dense",
            target: spec.target_nnz,
            capacity,
        });
    }
    let mut cells = Vec::with_capacity(spec.target_nnz);
    let mut left = spec.target_nnz;
    'outer: for (r0, rows, cols) in blocks {
        for i in 0..rows {
            for j in 0..cols {
                if left == 0 {
                    break 'outer;
                }
                cells.push((r0 + i, r0 + j));
                left -= 1;
            }
        }
    }
    Ok(cells)
}
