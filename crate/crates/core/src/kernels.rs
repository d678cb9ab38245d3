//! Parallel SpMV kernel variants and the warm-cache timing harness.
//!
//! Every variant computes y = A*x with per-row sequential accumulation, so
//! row sums are bit-identical across thread counts for the order-preserving
//! kernels (csr, delta, prefetch). The unrolled and decomposed variants
//! reassociate additions and carry a 1e-12 relative tolerance instead.

use crate::matcore::CsrMatrix;
use crate::variants::{DecomposedCsrMatrix, DeltaCsrMatrix, DeltaStream};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;
use thiserror::Error;

/// Inner-loop unroll factor (independent accumulators per row).
pub const UNROLL: usize = 4;
/// Default row chunk claimed per step of the dynamic self-scheduling queue.
pub const DEFAULT_CHUNK: usize = 64;
/// Cache line size assumed for the prefetch distance.
pub const CACHE_LINE_BYTES: usize = 64;
/// Prefetch distance: elements of the 4-byte index stream per cache line.
pub const PREFETCH_DIST: usize = CACHE_LINE_BYTES / 4;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("kernel id requests base {requested} but was given {given} data")]
    BaseMismatch { requested: BaseFormat, given: BaseFormat },
    #[error("invalid kernel combination: {0}")]
    InvalidCombination(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseFormat {
    Csr,
    Delta,
    Decomposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schedule {
    StaticNnzBalanced,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnerLoop {
    Plain,
    UnrolledVectorized,
}

/// Identifies one member of the optimization pool. The base formats are
/// mutually exclusive by construction; any prefetch/schedule/inner-loop
/// combination is legal with any base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelId {
    pub base: BaseFormat,
    pub prefetch: bool,
    pub schedule: Schedule,
    pub inner: InnerLoop,
}

impl KernelId {
    pub fn baseline() -> Self {
        KernelId {
            base: BaseFormat::Csr,
            prefetch: false,
            schedule: Schedule::StaticNnzBalanced,
            inner: InnerLoop::Plain,
        }
    }

    /// True for variants whose per-row summation order matches the baseline.
    pub fn order_preserving(&self) -> bool {
        self.inner == InnerLoop::Plain && self.base != BaseFormat::Decomposed
    }
}

impl fmt::Display for BaseFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseFormat::Csr => "csr",
            BaseFormat::Delta => "delta",
            BaseFormat::Decomposed => "decomposed",
        })
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}+prefetch-{}+{}+{}",
            self.base,
            if self.prefetch { "on" } else { "off" },
            match self.schedule {
                Schedule::StaticNnzBalanced => "static",
                Schedule::Dynamic => "dynamic",
            },
            match self.inner {
                InnerLoop::Plain => "plain",
                InnerLoop::UnrolledVectorized => "unrolled",
            }
        )
    }
}

impl FromStr for KernelId {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, KernelError> {
        let mut id = KernelId::baseline();
        for part in s.split('+') {
            match part {
                "csr" => id.base = BaseFormat::Csr,
                "delta" => id.base = BaseFormat::Delta,
                "decomposed" => id.base = BaseFormat::Decomposed,
                "prefetch-on" => id.prefetch = true,
                "prefetch-off" => id.prefetch = false,
                "static" => id.schedule = Schedule::StaticNnzBalanced,
                "dynamic" => id.schedule = Schedule::Dynamic,
                "plain" => id.inner = InnerLoop::Plain,
                "unrolled" => id.inner = InnerLoop::UnrolledVectorized,
                other => {
                    return Err(KernelError::InvalidCombination(format!(
                        "unknown kernel component '{other}'"
                    )))
                }
            }
        }
        Ok(id)
    }
}

/// Static one-dimensional row partitioning with approximately equal nonzeros
/// per thread.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    ranges: Vec<(usize, usize)>,
    nthreads: usize,
}

impl Partition {
    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }

    pub fn nthreads(&self) -> usize {
        self.nthreads
    }

    pub fn single(nrows: usize) -> Self {
        Partition { ranges: vec![(0, nrows)], nthreads: 1 }
    }
}

/// Greedy row scan: rows are assigned to a thread until its nonzero count
/// reaches ceil(NNZ / nthreads); the last thread takes the remainder.
pub fn partition_by_nnz(m: &CsrMatrix, nthreads: usize) -> Partition {
    assert!(nthreads >= 1);
    let nnz = m.nnz();
    let target = nnz.div_ceil(nthreads.max(1)).max(1);
    let mut ranges = Vec::with_capacity(nthreads);
    let mut row = 0usize;
    for t in 0..nthreads {
        let start = row;
        if t + 1 == nthreads {
            row = m.nrows();
        } else {
            let mut acc = 0usize;
            while row < m.nrows() && acc < target {
                acc += m.row_len(row);
                row += 1;
            }
        }
        ranges.push((start, row));
    }
    Partition { ranges, nthreads }
}

// ---------------------------------------------------------------------------
// Row evaluation over the three base formats.
// ---------------------------------------------------------------------------

#[inline(always)]
fn prefetch_read<T>(data: &[T], idx: usize) {
    #[cfg(target_arch = "x86_64")]
    unsafe {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        _mm_prefetch(data.as_ptr().add(idx) as *const i8, _MM_HINT_T0);
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        let _ = (data, idx);
    }
}

#[inline(always)]
fn csr_span_sum<const PF: bool, const UN: bool>(
    colind: &[u32],
    values: &[f64],
    lo: usize,
    hi: usize,
    x: &[f64],
) -> f64 {
    if UN && hi - lo >= UNROLL {
        let mut acc = [0.0f64; UNROLL];
        let mut j = lo;
        while j + UNROLL <= hi {
            if PF {
                let p = (j + PREFETCH_DIST).min(colind.len() - 1);
                prefetch_read(x, colind[p] as usize);
            }
            acc[0] += values[j] * x[colind[j] as usize];
            acc[1] += values[j + 1] * x[colind[j + 1] as usize];
            acc[2] += values[j + 2] * x[colind[j + 2] as usize];
            acc[3] += values[j + 3] * x[colind[j + 3] as usize];
            j += UNROLL;
        }
        let mut rem = 0.0f64;
        while j < hi {
            rem += values[j] * x[colind[j] as usize];
            j += 1;
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + rem
    } else {
        let mut acc = 0.0f64;
        for j in lo..hi {
            if PF {
                let p = (j + PREFETCH_DIST).min(colind.len().saturating_sub(1));
                prefetch_read(x, colind[p] as usize);
            }
            acc += values[j] * x[colind[j] as usize];
        }
        acc
    }
}

trait RowEval: Sync {
    fn nrows(&self) -> usize;
    fn row_sum<const PF: bool, const UN: bool>(&self, row: usize, x: &[f64]) -> f64;
}

struct CsrEval<'a>(&'a CsrMatrix);

impl RowEval for CsrEval<'_> {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }

    #[inline(always)]
    fn row_sum<const PF: bool, const UN: bool>(&self, row: usize, x: &[f64]) -> f64 {
        let lo = self.0.rowptr()[row];
        let hi = self.0.rowptr()[row + 1];
        csr_span_sum::<PF, UN>(self.0.colind(), self.0.values(), lo, hi, x)
    }
}

/// Short-row phase of the decomposed kernel: long rows have an empty short
/// span and evaluate to 0.
struct DecompShortEval<'a>(&'a DecomposedCsrMatrix);

impl RowEval for DecompShortEval<'_> {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }

    #[inline(always)]
    fn row_sum<const PF: bool, const UN: bool>(&self, row: usize, x: &[f64]) -> f64 {
        // Short rows: offset constant across the row, span is the original.
        let lo = self.0.rowptr()[row] + self.0.offset()[row];
        let hi = self.0.rowptr()[row + 1] + self.0.offset()[row];
        csr_span_sum::<PF, UN>(self.0.colind(), self.0.values(), lo, hi, x)
    }
}

trait DeltaInts: Sync {
    fn at(&self, i: usize) -> u32;
}

impl DeltaInts for &[u8] {
    #[inline(always)]
    fn at(&self, i: usize) -> u32 {
        self[i] as u32
    }
}

impl DeltaInts for &[u16] {
    #[inline(always)]
    fn at(&self, i: usize) -> u32 {
        self[i] as u32
    }
}

struct DeltaEval<'a, D: DeltaInts> {
    m: &'a DeltaCsrMatrix,
    deltas: D,
}

impl<D: DeltaInts> RowEval for DeltaEval<'_, D> {
    fn nrows(&self) -> usize {
        self.m.nrows()
    }

    #[inline(always)]
    fn row_sum<const PF: bool, const UN: bool>(&self, row: usize, x: &[f64]) -> f64 {
        let lo = self.m.rowptr()[row];
        let hi = self.m.rowptr()[row + 1];
        if lo == hi {
            return 0.0;
        }
        let values = self.m.values();
        let dlo = self.m.delta_ptr()[row];
        let mut col = self.m.first_col()[row] as usize;
        if UN && hi - lo >= UNROLL {
            let mut acc = [0.0f64; UNROLL];
            // Keep the first element out of the lanes so lane k always pairs
            // value lo+1+4t+k with its reconstructed column.
            let mut rem = 0.0f64;
            rem += values[lo] * x[col];
            let n = hi - lo - 1;
            let mut k = 0usize;
            while k + UNROLL <= n {
                if PF {
                    let p = (lo + 1 + k + PREFETCH_DIST).min(values.len() - 1);
                    prefetch_read(values, p);
                }
                let c0 = col + self.deltas.at(dlo + k) as usize;
                let c1 = c0 + self.deltas.at(dlo + k + 1) as usize;
                let c2 = c1 + self.deltas.at(dlo + k + 2) as usize;
                let c3 = c2 + self.deltas.at(dlo + k + 3) as usize;
                acc[0] += values[lo + 1 + k] * x[c0];
                acc[1] += values[lo + 2 + k] * x[c1];
                acc[2] += values[lo + 3 + k] * x[c2];
                acc[3] += values[lo + 4 + k] * x[c3];
                col = c3;
                k += UNROLL;
            }
            while k < n {
                col += self.deltas.at(dlo + k) as usize;
                rem += values[lo + 1 + k] * x[col];
                k += 1;
            }
            (acc[0] + acc[1]) + (acc[2] + acc[3]) + rem
        } else {
            let mut acc = 0.0f64;
            acc += values[lo] * x[col];
            for k in 0..(hi - lo - 1) {
                if PF {
                    let p = (lo + 1 + k + PREFETCH_DIST).min(values.len() - 1);
                    prefetch_read(values, p);
                }
                col += self.deltas.at(dlo + k) as usize;
                acc += values[lo + 1 + k] * x[col];
            }
            acc
        }
    }
}

/// Adapter letting the profiler run ad-hoc per-row computations (e.g. the
/// regular-access micro-kernel) through the same thread machinery.
pub(crate) struct FnEval<F: Fn(usize, &[f64]) -> f64 + Sync> {
    pub nrows: usize,
    pub f: F,
}

impl<F: Fn(usize, &[f64]) -> f64 + Sync> RowEval for FnEval<F> {
    fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline(always)]
    fn row_sum<const PF: bool, const UN: bool>(&self, row: usize, x: &[f64]) -> f64 {
        (self.f)(row, x)
    }
}

pub(crate) fn run_static_fn<F: Fn(usize, &[f64]) -> f64 + Sync>(
    eval: &FnEval<F>,
    x: &[f64],
    y: &mut [f64],
    part: &Partition,
    busy: Option<&mut [f64]>,
) {
    run_rows_static::<_, false, false>(eval, x, y, part, busy);
}

// ---------------------------------------------------------------------------
// Thread execution.
// ---------------------------------------------------------------------------

/// Raw shared output slice for the dynamic schedule, where row ownership is
/// decided at runtime. Each row is written by exactly one thread.
struct SharedOut {
    ptr: *mut f64,
    len: usize,
}

unsafe impl Send for SharedOut {}
unsafe impl Sync for SharedOut {}

impl SharedOut {
    #[inline(always)]
    unsafe fn write(&self, i: usize, v: f64) {
        debug_assert!(i < self.len);
        *self.ptr.add(i) = v
    }
}

fn busy_slots<'a>(busy: Option<&'a mut [f64]>, nthreads: usize) -> Vec<Option<&'a mut f64>> {
    match busy {
        Some(b) => {
            assert_eq!(b.len(), nthreads);
            b.iter_mut().map(Some).collect()
        }
        None => (0..nthreads).map(|_| None).collect(),
    }
}

fn run_rows_static<E: RowEval, const PF: bool, const UN: bool>(
    eval: &E,
    x: &[f64],
    y: &mut [f64],
    part: &Partition,
    busy: Option<&mut [f64]>,
) {
    let slots = busy_slots(busy, part.nthreads());
    if part.nthreads() == 1 {
        let (lo, hi) = part.ranges()[0];
        let mut slots = slots;
        let t0 = Instant::now();
        for i in lo..hi {
            y[i] = eval.row_sum::<PF, UN>(i, x);
        }
        if let Some(Some(b)) = slots.get_mut(0) {
            **b += t0.elapsed().as_secs_f64();
        }
        return;
    }
    // Hand each thread the exclusive y slice of its row range.
    let mut chunks: Vec<&mut [f64]> = Vec::with_capacity(part.nthreads());
    let mut rest = y;
    let mut pos = 0usize;
    for &(lo, hi) in part.ranges() {
        debug_assert_eq!(lo, pos);
        let (head, tail) = rest.split_at_mut(hi - lo);
        chunks.push(head);
        rest = tail;
        pos = hi;
    }
    std::thread::scope(|s| {
        for ((&(lo, hi), ys), slot) in part.ranges().iter().zip(chunks).zip(slots) {
            s.spawn(move || {
                let t0 = Instant::now();
                for i in lo..hi {
                    ys[i - lo] = eval.row_sum::<PF, UN>(i, x);
                }
                if let Some(b) = slot {
                    *b += t0.elapsed().as_secs_f64();
                }
            });
        }
    });
}

fn run_rows_dynamic<E: RowEval, const PF: bool, const UN: bool>(
    eval: &E,
    x: &[f64],
    y: &mut [f64],
    nthreads: usize,
    chunk: usize,
    busy: Option<&mut [f64]>,
) {
    let nrows = eval.nrows();
    let slots = busy_slots(busy, nthreads);
    let queue = AtomicUsize::new(0);
    let out = SharedOut { ptr: y.as_mut_ptr(), len: y.len() };
    std::thread::scope(|s| {
        for slot in slots {
            let queue = &queue;
            let out = &out;
            s.spawn(move || {
                let t0 = Instant::now();
                loop {
                    let lo = queue.fetch_add(chunk, Ordering::Relaxed);
                    if lo >= nrows {
                        break;
                    }
                    let hi = (lo + chunk).min(nrows);
                    for i in lo..hi {
                        // Safety: each row index is claimed by one thread.
                        unsafe { out.write(i, eval.row_sum::<PF, UN>(i, x)) };
                    }
                }
                if let Some(b) = slot {
                    *b += t0.elapsed().as_secs_f64();
                }
            });
        }
    });
}

/// Cooperative long-row phase: each long row's nonzeros are split into
/// contiguous equal spans across all threads, partials are thread-private and
/// reduced single-threaded afterwards.
fn run_long_rows(
    m: &DecomposedCsrMatrix,
    x: &[f64],
    y: &mut [f64],
    nthreads: usize,
    prefetch: bool,
    unrolled: bool,
    busy: Option<&mut [f64]>,
) {
    let nlong = m.lrowind().len();
    if nlong == 0 {
        return;
    }
    let slots = busy_slots(busy, nthreads);
    let mut partials = vec![vec![0.0f64; nlong]; nthreads];
    std::thread::scope(|s| {
        for ((t, part), slot) in partials.iter_mut().enumerate().zip(slots) {
            s.spawn(move || {
                let t0 = Instant::now();
                for (k, &row) in m.lrowind().iter().enumerate() {
                    let span = m.row_span(row);
                    let len = span.len();
                    let per = len.div_ceil(nthreads);
                    let lo = span.start + (t * per).min(len);
                    let hi = span.start + ((t + 1) * per).min(len);
                    part[k] = match (prefetch, unrolled) {
                        (false, false) => csr_span_sum::<false, false>(m.colind(), m.values(), lo, hi, x),
                        (true, false) => csr_span_sum::<true, false>(m.colind(), m.values(), lo, hi, x),
                        (false, true) => csr_span_sum::<false, true>(m.colind(), m.values(), lo, hi, x),
                        (true, true) => csr_span_sum::<true, true>(m.colind(), m.values(), lo, hi, x),
                    };
                }
                if let Some(b) = slot {
                    *b += t0.elapsed().as_secs_f64();
                }
            });
        }
    });
    for (k, &row) in m.lrowind().iter().enumerate() {
        let mut acc = partials[0][k];
        for part in &partials[1..] {
            acc += part[k];
        }
        y[row] = acc;
    }
}

// ---------------------------------------------------------------------------
// Composed kernels.
// ---------------------------------------------------------------------------

/// Matrix data backing a kernel, matching KernelId's base format.
pub enum KernelData<'a> {
    Csr(&'a CsrMatrix),
    Delta(&'a DeltaCsrMatrix),
    Decomposed(&'a DecomposedCsrMatrix),
}

impl KernelData<'_> {
    fn base(&self) -> BaseFormat {
        match self {
            KernelData::Csr(_) => BaseFormat::Csr,
            KernelData::Delta(_) => BaseFormat::Delta,
            KernelData::Decomposed(_) => BaseFormat::Decomposed,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        match self {
            KernelData::Csr(m) => (m.nrows(), m.ncols(), m.nnz()),
            KernelData::Delta(m) => (m.nrows(), m.ncols(), m.nnz()),
            KernelData::Decomposed(m) => (m.nrows(), m.ncols(), m.nnz()),
        }
    }
}

/// A runnable kernel implementing all features requested by its id jointly.
pub struct Kernel<'a> {
    id: KernelId,
    data: KernelData<'a>,
    partition: Partition,
    chunk: usize,
}

/// Timed SpMV-shaped computation; implemented by composed kernels and the
/// profiler's micro-benchmark kernels.
pub trait TimedKernel: Sync {
    fn flops_per_call(&self) -> f64;
    fn nthreads(&self) -> usize;
    fn run_timed(&self, x: &[f64], y: &mut [f64], busy: Option<&mut [f64]>)
        -> Result<(), KernelError>;
}

/// Builds the kernel implementing every feature of `id` simultaneously.
pub fn compose<'a>(
    id: KernelId,
    data: KernelData<'a>,
    partition: Partition,
) -> Result<Kernel<'a>, KernelError> {
    if data.base() != id.base {
        return Err(KernelError::BaseMismatch { requested: id.base, given: data.base() });
    }
    Ok(Kernel { id, data, partition, chunk: DEFAULT_CHUNK })
}

impl<'a> Kernel<'a> {
    pub fn id(&self) -> KernelId {
        self.id
    }

    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }

    pub fn nnz(&self) -> usize {
        self.data.dims().2
    }

    pub fn run(&self, x: &[f64], y: &mut [f64]) -> Result<(), KernelError> {
        self.run_timed(x, y, None)
    }

    fn check_dims(&self, x: &[f64], y: &[f64]) -> Result<(), KernelError> {
        let (nrows, ncols, _) = self.data.dims();
        if x.len() != ncols {
            return Err(KernelError::DimensionMismatch {
                what: "x",
                expected: ncols,
                got: x.len(),
            });
        }
        if y.len() != nrows {
            return Err(KernelError::DimensionMismatch {
                what: "y",
                expected: nrows,
                got: y.len(),
            });
        }
        Ok(())
    }

    fn dispatch_rows<E: RowEval>(
        &self,
        eval: &E,
        x: &[f64],
        y: &mut [f64],
        busy: Option<&mut [f64]>,
    ) {
        let pf = self.id.prefetch;
        let un = self.id.inner == InnerLoop::UnrolledVectorized;
        match self.id.schedule {
            Schedule::StaticNnzBalanced => match (pf, un) {
                (false, false) => run_rows_static::<E, false, false>(eval, x, y, &self.partition, busy),
                (true, false) => run_rows_static::<E, true, false>(eval, x, y, &self.partition, busy),
                (false, true) => run_rows_static::<E, false, true>(eval, x, y, &self.partition, busy),
                (true, true) => run_rows_static::<E, true, true>(eval, x, y, &self.partition, busy),
            },
            Schedule::Dynamic => {
                let nt = self.partition.nthreads();
                match (pf, un) {
                    (false, false) => {
                        run_rows_dynamic::<E, false, false>(eval, x, y, nt, self.chunk, busy)
                    }
                    (true, false) => {
                        run_rows_dynamic::<E, true, false>(eval, x, y, nt, self.chunk, busy)
                    }
                    (false, true) => {
                        run_rows_dynamic::<E, false, true>(eval, x, y, nt, self.chunk, busy)
                    }
                    (true, true) => {
                        run_rows_dynamic::<E, true, true>(eval, x, y, nt, self.chunk, busy)
                    }
                }
            }
        }
    }
}

impl TimedKernel for Kernel<'_> {
    fn flops_per_call(&self) -> f64 {
        2.0 * self.nnz() as f64
    }

    fn nthreads(&self) -> usize {
        self.partition.nthreads()
    }

    fn run_timed(
        &self,
        x: &[f64],
        y: &mut [f64],
        mut busy: Option<&mut [f64]>,
    ) -> Result<(), KernelError> {
        self.check_dims(x, y)?;
        match &self.data {
            KernelData::Csr(m) => self.dispatch_rows(&CsrEval(m), x, y, busy),
            KernelData::Delta(m) => match m.deltas() {
                DeltaStream::W8(d) => {
                    self.dispatch_rows(&DeltaEval { m, deltas: d.as_slice() }, x, y, busy)
                }
                DeltaStream::W16(d) => {
                    self.dispatch_rows(&DeltaEval { m, deltas: d.as_slice() }, x, y, busy)
                }
            },
            KernelData::Decomposed(m) => {
                // Phase 1: short rows; long rows get an empty span (y = 0).
                self.dispatch_rows(&DecompShortEval(m), x, y, busy.as_deref_mut());
                // Phase 2: cooperative long rows.
                run_long_rows(
                    m,
                    x,
                    y,
                    self.partition.nthreads(),
                    self.id.prefetch,
                    self.id.inner == InnerLoop::UnrolledVectorized,
                    busy,
                );
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Named variants (thin wrappers over compose).
// ---------------------------------------------------------------------------

pub fn spmv_csr(m: &CsrMatrix, x: &[f64], y: &mut [f64], p: &Partition) -> Result<(), KernelError> {
    compose(KernelId::baseline(), KernelData::Csr(m), p.clone())?.run(x, y)
}

pub fn spmv_delta(
    m: &DeltaCsrMatrix,
    x: &[f64],
    y: &mut [f64],
    p: &Partition,
) -> Result<(), KernelError> {
    let id = KernelId { base: BaseFormat::Delta, ..KernelId::baseline() };
    compose(id, KernelData::Delta(m), p.clone())?.run(x, y)
}

pub fn spmv_decomposed(
    m: &DecomposedCsrMatrix,
    x: &[f64],
    y: &mut [f64],
    p: &Partition,
) -> Result<(), KernelError> {
    let id = KernelId { base: BaseFormat::Decomposed, ..KernelId::baseline() };
    compose(id, KernelData::Decomposed(m), p.clone())?.run(x, y)
}

pub fn spmv_prefetch(
    m: &CsrMatrix,
    x: &[f64],
    y: &mut [f64],
    p: &Partition,
) -> Result<(), KernelError> {
    let id = KernelId { prefetch: true, ..KernelId::baseline() };
    compose(id, KernelData::Csr(m), p.clone())?.run(x, y)
}

pub fn spmv_dynamic(
    m: &CsrMatrix,
    x: &[f64],
    y: &mut [f64],
    nthreads: usize,
    chunk: usize,
) -> Result<(), KernelError> {
    let id = KernelId { schedule: Schedule::Dynamic, ..KernelId::baseline() };
    let p = Partition { ranges: vec![(0, m.nrows())], nthreads };
    compose(id, KernelData::Csr(m), p)?.with_chunk(chunk).run(x, y)
}

pub fn spmv_unrolled(
    m: &CsrMatrix,
    x: &[f64],
    y: &mut [f64],
    p: &Partition,
) -> Result<(), KernelError> {
    let id = KernelId { inner: InnerLoop::UnrolledVectorized, ..KernelId::baseline() };
    compose(id, KernelData::Csr(m), p.clone())?.run(x, y)
}

// ---------------------------------------------------------------------------
// Timing harness.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct TimingResult {
    /// Harmonic mean of the per-run rates, in Gflop/s.
    pub gflops: f64,
    pub per_run_gflops: Vec<f64>,
    /// Per run, per thread: busy seconds averaged over iterations.
    pub per_thread_times: Vec<Vec<f64>>,
    pub runs: usize,
    pub iters: usize,
}

impl TimingResult {
    /// Mean seconds of one SpMV call, derived from the summarized rate.
    pub fn secs_per_iter(&self, nnz: usize) -> f64 {
        2.0 * nnz as f64 / (self.gflops * 1e9)
    }
}

pub fn harmonic_mean(rates: &[f64]) -> f64 {
    let n = rates.len() as f64;
    n / rates.iter().map(|r| 1.0 / r).sum::<f64>()
}

/// Warm-cache benchmark: one untimed warm-up call, then `runs` runs of
/// `iters` consecutive calls on the same buffers. Per-run rate is over the
/// mean per-iteration wall time; runs are summarized with the harmonic mean.
pub fn benchmark<K: TimedKernel>(
    kernel: &K,
    x: &[f64],
    y: &mut [f64],
    runs: usize,
    iters: usize,
) -> Result<TimingResult, KernelError> {
    assert!(runs >= 1 && iters >= 1);
    let nt = kernel.nthreads();
    kernel.run_timed(x, y, None)?; // warm-up
    let mut per_run_gflops = Vec::with_capacity(runs);
    let mut per_thread_times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let mut busy = vec![0.0f64; nt];
        let t0 = Instant::now();
        for _ in 0..iters {
            kernel.run_timed(x, y, Some(&mut busy))?;
        }
        let wall = t0.elapsed().as_secs_f64();
        let rate = kernel.flops_per_call() * iters as f64 / wall;
        per_run_gflops.push(rate / 1e9);
        per_thread_times.push(busy.iter().map(|b| b / iters as f64).collect());
    }
    Ok(TimingResult {
        gflops: harmonic_mean(&per_run_gflops),
        per_run_gflops,
        per_thread_times,
        runs,
        iters,
    })
}
