//! Derived matrix representations used by the optimization pool: column index
//! delta compression and long-row decomposition.

use crate::matcore::CsrMatrix;

/// Delta-compressed column indices. Each row stores its first column
/// absolutely; the rest are consecutive differences at a single uniform width
/// (8 or 16 bits, never mixed).
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaCsrMatrix {
    nrows: usize,
    ncols: usize,
    rowptr: Vec<usize>,
    values: Vec<f64>,
    /// Absolute first column per row; `ncols` as sentinel for empty rows.
    first_col: Vec<u32>,
    deltas: DeltaStream,
    /// Start of each row's deltas; delta_ptr[nrows] = NNZ - nonempty rows.
    delta_ptr: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeltaStream {
    W8(Vec<u8>),
    W16(Vec<u16>),
}

impl DeltaCsrMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn rowptr(&self) -> &[usize] {
        &self.rowptr
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn first_col(&self) -> &[u32] {
        &self.first_col
    }

    pub fn deltas(&self) -> &DeltaStream {
        &self.deltas
    }

    pub fn delta_ptr(&self) -> &[usize] {
        &self.delta_ptr
    }

    pub fn width(&self) -> u8 {
        match self.deltas {
            DeltaStream::W8(_) => 8,
            DeltaStream::W16(_) => 16,
        }
    }

    /// Expands back to plain CSR (test oracle for the round-trip invariant).
    pub fn reconstruct(&self) -> CsrMatrix {
        let mut colind = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let span = self.rowptr[i]..self.rowptr[i + 1];
            if span.is_empty() {
                continue;
            }
            let mut col = self.first_col[i];
            colind.push(col);
            let dspan = self.delta_ptr[i]..self.delta_ptr[i + 1];
            match &self.deltas {
                DeltaStream::W8(d) => {
                    for k in dspan {
                        col += d[k] as u32;
                        colind.push(col);
                    }
                }
                DeltaStream::W16(d) => {
                    for k in dspan {
                        col += d[k] as u32;
                        colind.push(col);
                    }
                }
            }
        }
        CsrMatrix::new(self.nrows, self.ncols, self.rowptr.clone(), colind, self.values.clone())
            .expect("reconstruction preserves CSR invariants")
    }
}

/// Compresses column indices to uniform-width deltas. Width 8 is used iff all
/// within-row deltas fit in a byte, else 16 iff they fit in two; otherwise the
/// matrix is reported not compressible and callers fall back to plain CSR.
pub fn compress_delta(m: &CsrMatrix) -> Option<DeltaCsrMatrix> {
    let mut max_delta = 0u32;
    for i in 0..m.nrows() {
        let span = &m.colind()[m.rowptr()[i]..m.rowptr()[i + 1]];
        for w in span.windows(2) {
            max_delta = max_delta.max(w[1] - w[0]);
        }
    }
    if max_delta >= 1 << 16 {
        return None;
    }
    let mut first_col = Vec::with_capacity(m.nrows());
    let mut delta_ptr = Vec::with_capacity(m.nrows() + 1);
    delta_ptr.push(0);
    let mut raw = Vec::with_capacity(m.nnz().saturating_sub(1));
    for i in 0..m.nrows() {
        let span = &m.colind()[m.rowptr()[i]..m.rowptr()[i + 1]];
        first_col.push(span.first().copied().unwrap_or(m.ncols() as u32));
        for w in span.windows(2) {
            raw.push(w[1] - w[0]);
        }
        delta_ptr.push(raw.len());
    }
    let deltas = if max_delta < 1 << 8 {
        DeltaStream::W8(raw.iter().map(|&d| d as u8).collect())
    } else {
        DeltaStream::W16(raw.iter().map(|&d| d as u16).collect())
    };
    Some(DeltaCsrMatrix {
        nrows: m.nrows(),
        ncols: m.ncols(),
        rowptr: m.rowptr().to_vec(),
        values: m.values().to_vec(),
        first_col,
        deltas,
        delta_ptr,
    })
}

/// Long-row decomposition. All nonzeros stay in place in the shared
/// colind/values streams; the short-part rowptr counts only short-row
/// nonzeros and `offset[i]` holds the number of long-row nonzeros before the
/// boundary of row i, so `rowptr[i] + offset[i]` recovers the original CSR
/// row start.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedCsrMatrix {
    nrows: usize,
    ncols: usize,
    rowptr: Vec<usize>,
    offset: Vec<usize>,
    lrowind: Vec<usize>,
    colind: Vec<u32>,
    values: Vec<f64>,
    threshold: usize,
}

impl DecomposedCsrMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn rowptr(&self) -> &[usize] {
        &self.rowptr
    }

    pub fn offset(&self) -> &[usize] {
        &self.offset
    }

    pub fn lrowind(&self) -> &[usize] {
        &self.lrowind
    }

    pub fn colind(&self) -> &[u32] {
        &self.colind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    /// Nonzero span of row `i` in the shared streams (original CSR span).
    pub fn row_span(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.rowptr[i] + self.offset[i];
        let end = self.rowptr[i + 1] + self.offset[i + 1];
        start..end
    }
}

/// Default long-row cutoff when the tuner does not supply one: only
/// heavy-tail rows qualify.
pub fn default_decompose_threshold(m: &CsrMatrix) -> usize {
    ((8.0 * m.avg_row_len()).ceil() as usize).max(1)
}

/// Marks rows with more than `threshold` nonzeros as long and builds the
/// offset/lrowind bookkeeping.
pub fn decompose(m: &CsrMatrix, threshold: usize) -> DecomposedCsrMatrix {
    assert!(threshold >= 1, "decomposition threshold must be >= 1");
    let mut rowptr = Vec::with_capacity(m.nrows() + 1);
    let mut offset = Vec::with_capacity(m.nrows() + 1);
    let mut lrowind = Vec::new();
    let mut short = 0usize;
    let mut long = 0usize;
    rowptr.push(0);
    offset.push(0);
    for i in 0..m.nrows() {
        let len = m.row_len(i);
        if len > threshold {
            lrowind.push(i);
            long += len;
        } else {
            short += len;
        }
        rowptr.push(short);
        offset.push(long);
    }
    DecomposedCsrMatrix {
        nrows: m.nrows(),
        ncols: m.ncols(),
        rowptr,
        offset,
        lrowind,
        colind: m.colind().to_vec(),
        values: m.values().to_vec(),
        threshold,
    }
}
