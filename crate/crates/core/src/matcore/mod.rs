//! Canonical CSR matrix representation, validation, Matrix Market I/O and
//! synthetic matrix generation.

mod gen;
mod mm;

pub use gen::{GenError, GeneratorKind, GeneratorSpec};
pub use mm::MmError;

use std::fmt;
use std::path::Path;

/// Sparse matrix in compressed sparse row form.
///
/// Column indices are 32-bit; matrices with `ncols >= 2^32` are rejected at
/// construction. Values are double precision. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    rowptr: Vec<usize>,
    colind: Vec<u32>,
    values: Vec<f64>,
}

/// First violated CSR invariant, with its location.
#[derive(Debug, Clone, PartialEq)]
pub enum CsrViolation {
    RowptrLength { expected: usize, got: usize },
    RowptrStart { got: usize },
    RowptrEnd { expected: usize, got: usize },
    RowptrDecreasing { row: usize },
    ColumnOutOfRange { row: usize, nz: usize, col: u32 },
    ColumnsNotIncreasing { row: usize, nz: usize },
    StreamLengthMismatch { colind: usize, values: usize },
    NcolsTooLarge { ncols: usize },
}

impl fmt::Display for CsrViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CsrViolation::RowptrLength { expected, got } => {
                write!(f, "rowptr length {got}, expected {expected}")
            }
            CsrViolation::RowptrStart { got } => write!(f, "rowptr[0] = {got}, expected 0"),
            CsrViolation::RowptrEnd { expected, got } => {
                write!(f, "rowptr[nrows] = {got}, expected NNZ = {expected}")
            }
            CsrViolation::RowptrDecreasing { row } => {
                write!(f, "rowptr nondecreasing violated at row {row}")
            }
            CsrViolation::ColumnOutOfRange { row, nz, col } => {
                write!(f, "column {col} out of range at row {row}, nonzero {nz}")
            }
            CsrViolation::ColumnsNotIncreasing { row, nz } => {
                write!(f, "strictly increasing columns violated at row {row}, nonzero {nz}")
            }
            CsrViolation::StreamLengthMismatch { colind, values } => {
                write!(f, "colind length {colind} != values length {values}")
            }
            CsrViolation::NcolsTooLarge { ncols } => {
                write!(f, "ncols {ncols} exceeds 32-bit column index range")
            }
        }
    }
}

impl std::error::Error for CsrViolation {}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays, validating every invariant.
    pub fn new(
        nrows: usize,
        ncols: usize,
        rowptr: Vec<usize>,
        colind: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self, CsrViolation> {
        let m = CsrMatrix { nrows, ncols, rowptr, colind, values };
        m.validate()?;
        Ok(m)
    }

    /// Builds a matrix without invariant checks. Used for profiling clones
    /// whose colind is deliberately degenerate (e.g. all entries of a row
    /// equal); such matrices are only fed to kernels, never persisted.
    pub(crate) fn new_unchecked(
        nrows: usize,
        ncols: usize,
        rowptr: Vec<usize>,
        colind: Vec<u32>,
        values: Vec<f64>,
    ) -> Self {
        CsrMatrix { nrows, ncols, rowptr, colind, values }
    }

    /// Checks all CSR invariants, reporting the first violation found.
    pub fn validate(&self) -> Result<(), CsrViolation> {
        if self.ncols > u32::MAX as usize {
            return Err(CsrViolation::NcolsTooLarge { ncols: self.ncols });
        }
        if self.rowptr.len() != self.nrows + 1 {
            return Err(CsrViolation::RowptrLength {
                expected: self.nrows + 1,
                got: self.rowptr.len(),
            });
        }
        if self.rowptr[0] != 0 {
            return Err(CsrViolation::RowptrStart { got: self.rowptr[0] });
        }
        if self.colind.len() != self.values.len() {
            return Err(CsrViolation::StreamLengthMismatch {
                colind: self.colind.len(),
                values: self.values.len(),
            });
        }
        for i in 0..self.nrows {
            if self.rowptr[i + 1] < self.rowptr[i] {
                return Err(CsrViolation::RowptrDecreasing { row: i + 1 });
            }
        }
        if self.rowptr[self.nrows] != self.colind.len() {
            return Err(CsrViolation::RowptrEnd {
                expected: self.colind.len(),
                got: self.rowptr[self.nrows],
            });
        }
        for i in 0..self.nrows {
            let span = self.rowptr[i]..self.rowptr[i + 1];
            for j in span {
                let col = self.colind[j];
                if col as usize >= self.ncols {
                    return Err(CsrViolation::ColumnOutOfRange { row: i, nz: j, col });
                }
                if j > self.rowptr[i] && self.colind[j - 1] >= col {
                    return Err(CsrViolation::ColumnsNotIncreasing { row: i, nz: j });
                }
            }
        }
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.colind.len()
    }

    pub fn rowptr(&self) -> &[usize] {
        &self.rowptr
    }

    pub fn colind(&self) -> &[u32] {
        &self.colind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of nonzeros in row `i`.
    pub fn row_len(&self, i: usize) -> usize {
        self.rowptr[i + 1] - self.rowptr[i]
    }

    /// Length of the longest row (0 for an empty matrix).
    pub fn max_row_len(&self) -> usize {
        (0..self.nrows).map(|i| self.row_len(i)).max().unwrap_or(0)
    }

    /// Mean nonzeros per row over all rows.
    pub fn avg_row_len(&self) -> f64 {
        if self.nrows == 0 {
            0.0
        } else {
            self.nnz() as f64 / self.nrows as f64
        }
    }

    /// Builds a CSR matrix from unsorted coordinate triplets, summing
    /// duplicate entries.
    pub fn from_coo(
        nrows: usize,
        ncols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self, CsrViolation> {
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut rowptr = vec![0usize; nrows + 1];
        let mut colind = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                rowptr[r + 1] += 1;
                colind.push(c as u32);
                values.push(v);
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            rowptr[i + 1] += rowptr[i];
        }
        CsrMatrix::new(nrows, ncols, rowptr, colind, values)
    }

    /// Reads a Matrix Market coordinate file (real/integer/pattern,
    /// general/symmetric).
    pub fn read_matrix_market<P: AsRef<Path>>(path: P) -> Result<Self, MmError> {
        mm::read(path.as_ref())
    }

    /// Writes the matrix in Matrix Market coordinate format with enough
    /// significant digits for a bit-exact round trip.
    pub fn write_matrix_market<P: AsRef<Path>>(&self, path: P) -> Result<(), MmError> {
        mm::write(self, path.as_ref())
    }

    /// Generates a synthetic matrix; deterministic in the spec's seed.
    pub fn generate(spec: &GeneratorSpec) -> Result<Self, GenError> {
        gen::generate(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> CsrMatrix {
        CsrMatrix::new(2, 2, vec![0, 1, 2], vec![0, 1], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn identity_validates() {
        assert!(identity2().validate().is_ok());
    }

    #[test]
    fn rowptr_decreasing_detected() {
        let m = CsrMatrix {
            nrows: 2,
            ncols: 2,
            rowptr: vec![0, 2, 1],
            colind: vec![0, 1],
            values: vec![1.0, 1.0],
        };
        assert_eq!(m.validate(), Err(CsrViolation::RowptrDecreasing { row: 2 }));
    }

    #[test]
    fn columns_not_increasing_detected() {
        let m = CsrMatrix {
            nrows: 1,
            ncols: 2,
            rowptr: vec![0, 2],
            colind: vec![1, 0],
            values: vec![1.0, 1.0],
        };
        assert_eq!(m.validate(), Err(CsrViolation::ColumnsNotIncreasing { row: 0, nz: 1 }));
    }

    #[test]
    fn column_out_of_range_detected() {
        let m = CsrMatrix {
            nrows: 1,
            ncols: 2,
            rowptr: vec![0, 1],
            colind: vec![5],
            values: vec![1.0],
        };
        assert_eq!(
            m.validate(),
            Err(CsrViolation::ColumnOutOfRange { row: 0, nz: 0, col: 5 })
        );
    }

    #[test]
    fn empty_rows_are_legal() {
        let m = CsrMatrix::new(3, 3, vec![0, 1, 1, 2], vec![0, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(m.row_len(1), 0);
    }

    #[test]
    fn from_coo_sums_duplicates() {
        let m = CsrMatrix::from_coo(2, 2, vec![(0, 0, 1.0), (1, 1, 7.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(m.values(), &[3.0, 7.0]);
        assert_eq!(m.colind(), &[0, 1]);
    }
}
