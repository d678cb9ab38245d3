//! Bound-and-bottleneck profiler: sustainable-bandwidth measurement and the
//! five per-class SpMV performance bounds.
//!
//! P_MB and P_peak are analytic (bandwidth model over compulsory traffic),
//! P_IMB is deduced from the baseline run's per-thread times, and only P_ML
//! and P_CMP require a micro-benchmark on the fly.

use crate::kernels::{
    self, benchmark, compose, partition_by_nnz, FnEval, KernelData, KernelError, KernelId,
    Partition, TimedKernel, TimingResult,
};
use crate::matcore::CsrMatrix;
use serde::Serialize;
use std::fs;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

/// Bytes per column index in the CSR baseline accounting.
pub const INDEX_BYTES: usize = 4;
/// Bytes per nonzero value and per vector element.
pub const VALUE_BYTES: usize = 8;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("bandwidth unmeasurable: {0}")]
    Unmeasurable(String),
    #[error("kernel error: {0}")]
    Kernel(#[from] KernelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("machine profile file: {0}")]
    ProfileFile(String),
}

/// Measured machine characteristics the analytic bounds depend on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MachineProfile {
    /// Sustainable main-memory bandwidth, bytes/s.
    pub bmax_main: f64,
    /// Sustainable bandwidth for cache-resident working sets, bytes/s.
    pub bmax_llc: f64,
    /// Last-level cache capacity, bytes.
    pub llc_size: usize,
    /// Cache line size, bytes.
    pub cache_line: usize,
    pub nthreads: usize,
    pub fingerprint: String,
}

/// Benchmark methodology knobs: warm-cache runs summarized with the harmonic
/// mean.
#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub runs: usize,
    pub iters: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { runs: 5, iters: 128 }
    }
}

/// Baseline performance plus the five per-class upper bounds, in flop/s.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub p_csr: f64,
    pub p_mb: f64,
    pub p_ml: f64,
    pub p_imb: f64,
    pub p_cmp: f64,
    pub p_peak: f64,
    pub working_set: usize,
    pub fits_in_llc: bool,
    /// Which fields came from a timed micro-benchmark (the rest are analytic
    /// or deduced from the baseline run).
    pub measured: Vec<String>,
    pub index_bytes: usize,
    pub nthreads: usize,
}

/// CSR footprint: values + column indices + row pointers.
pub fn csr_bytes(m: &CsrMatrix) -> usize {
    VALUE_BYTES * m.nnz() + INDEX_BYTES * m.nnz() + INDEX_BYTES * (m.nrows() + 1)
}

/// Working set driving the cache-fit rule: matrix plus both vectors.
pub fn working_set_bytes(m: &CsrMatrix) -> usize {
    csr_bytes(m) + VALUE_BYTES * m.ncols() + VALUE_BYTES * m.nrows()
}

fn bmax_for(m: &CsrMatrix, prof: &MachineProfile) -> (f64, bool) {
    let fits = working_set_bytes(m) <= prof.llc_size;
    (if fits { prof.bmax_llc } else { prof.bmax_main }, fits)
}

/// Bandwidth-saturation bound: 2*NNZ over the compulsory traffic of the CSR
/// arrays and both vectors at B_max.
pub fn p_mb(m: &CsrMatrix, prof: &MachineProfile) -> f64 {
    let (bmax, _) = bmax_for(m, prof);
    let traffic = (csr_bytes(m) + VALUE_BYTES * (m.ncols() + m.nrows())) as f64;
    2.0 * m.nnz() as f64 / (traffic / bmax)
}

/// Format-independent ceiling: all index traffic eliminated, values only.
pub fn p_peak(m: &CsrMatrix, prof: &MachineProfile) -> f64 {
    let (bmax, _) = bmax_for(m, prof);
    let traffic = (VALUE_BYTES * (m.nnz() + m.ncols() + m.nrows())) as f64;
    2.0 * m.nnz() as f64 / (traffic / bmax)
}

/// Imbalance bound: 2*NNZ over the median per-thread busy time, so outlier
/// threads lose influence.
pub fn p_imb(timing: &TimingResult, nnz: usize) -> f64 {
    let nt = timing.per_thread_times[0].len();
    let runs = timing.per_thread_times.len() as f64;
    let mut per_thread: Vec<f64> = (0..nt)
        .map(|t| timing.per_thread_times.iter().map(|r| r[t]).sum::<f64>() / runs)
        .collect();
    per_thread.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t_median = if nt % 2 == 1 {
        per_thread[nt / 2]
    } else {
        (per_thread[nt / 2 - 1] + per_thread[nt / 2]) / 2.0
    };
    2.0 * nnz as f64 / t_median
}

/// Structural clone with every column index replaced by the row index, which
/// turns the irregular x gathers into regular accesses.
pub fn ml_clone(m: &CsrMatrix) -> CsrMatrix {
    let mut colind = Vec::with_capacity(m.nnz());
    let cap = (m.ncols().saturating_sub(1)) as u32;
    for i in 0..m.nrows() {
        let c = (i as u32).min(cap);
        for _ in m.rowptr()[i]..m.rowptr()[i + 1] {
            colind.push(c);
        }
    }
    CsrMatrix::new_unchecked(
        m.nrows(),
        m.ncols(),
        m.rowptr().to_vec(),
        colind,
        m.values().to_vec(),
    )
}

/// Latency bound: benchmarks the baseline kernel on the regular-access clone.
pub fn p_ml(m: &CsrMatrix, nthreads: usize, cfg: BenchConfig) -> Result<f64, BoundsError> {
    let clone = ml_clone(m);
    let part = partition_by_nnz(&clone, nthreads);
    let kernel = compose(KernelId::baseline(), KernelData::Csr(&clone), part)?;
    let x = vec![1.0f64; m.ncols()];
    let mut y = vec![0.0f64; m.nrows()];
    let t = benchmark(&kernel, &x, &mut y, cfg.runs, cfg.iters)?;
    Ok(t.gflops * 1e9)
}

/// Micro-kernel for the computational bound: y[i] = sum_j values[j] * x[i],
/// colind never read.
pub struct RowRegularKernel<'a> {
    m: &'a CsrMatrix,
    partition: Partition,
}

impl<'a> RowRegularKernel<'a> {
    pub fn new(m: &'a CsrMatrix, nthreads: usize) -> Self {
        RowRegularKernel { m, partition: partition_by_nnz(m, nthreads) }
    }
}

impl TimedKernel for RowRegularKernel<'_> {
    fn flops_per_call(&self) -> f64 {
        2.0 * self.m.nnz() as f64
    }

    fn nthreads(&self) -> usize {
        self.partition.nthreads()
    }

    fn run_timed(
        &self,
        x: &[f64],
        y: &mut [f64],
        busy: Option<&mut [f64]>,
    ) -> Result<(), KernelError> {
        if x.len() != self.m.ncols() {
            return Err(KernelError::DimensionMismatch {
                what: "x",
                expected: self.m.ncols(),
                got: x.len(),
            });
        }
        if y.len() != self.m.nrows() {
            return Err(KernelError::DimensionMismatch {
                what: "y",
                expected: self.m.nrows(),
                got: y.len(),
            });
        }
        let m = self.m;
        let cap = m.ncols().saturating_sub(1);
        let eval = FnEval {
            nrows: m.nrows(),
            f: move |i: usize, x: &[f64]| {
                let xi = x[i.min(cap)];
                let mut acc = 0.0;
                for j in m.rowptr()[i]..m.rowptr()[i + 1] {
                    acc += m.values()[j] * xi;
                }
                acc
            },
        };
        kernels::run_static_fn(&eval, x, y, &self.partition, busy);
        Ok(())
    }
}

/// Computational bound: benchmarks the regular-access, index-free kernel.
pub fn p_cmp(m: &CsrMatrix, nthreads: usize, cfg: BenchConfig) -> Result<f64, BoundsError> {
    let kernel = RowRegularKernel::new(m, nthreads);
    let x = vec![1.0f64; m.ncols()];
    let mut y = vec![0.0f64; m.nrows()];
    let t = benchmark(&kernel, &x, &mut y, cfg.runs, cfg.iters)?;
    Ok(t.gflops * 1e9)
}

/// Full bound-and-bottleneck profile of one matrix on one machine. Exactly
/// three timed micro-benchmarks run: the baseline, the ML clone and the CMP
/// kernel.
pub fn profile(
    m: &CsrMatrix,
    prof: &MachineProfile,
    nthreads: usize,
    cfg: BenchConfig,
) -> Result<BoundsReport, BoundsError> {
    let part = partition_by_nnz(m, nthreads);
    let kernel = compose(KernelId::baseline(), KernelData::Csr(m), part)?;
    let x = vec![1.0f64; m.ncols()];
    let mut y = vec![0.0f64; m.nrows()];
    let baseline = benchmark(&kernel, &x, &mut y, cfg.runs, cfg.iters)?;
    let p_csr = baseline.gflops * 1e9;
    let imb = p_imb(&baseline, m.nnz());
    let ml = p_ml(m, nthreads, cfg)?;
    let cmp = p_cmp(m, nthreads, cfg)?;
    let (_, fits) = bmax_for(m, prof);
    Ok(BoundsReport {
        p_csr,
        p_mb: p_mb(m, prof),
        p_ml: ml,
        p_imb: imb,
        p_cmp: cmp,
        p_peak: p_peak(m, prof),
        working_set: working_set_bytes(m),
        fits_in_llc: fits,
        measured: vec!["p_csr".into(), "p_ml".into(), "p_cmp".into()],
        index_bytes: INDEX_BYTES,
        nthreads,
    })
}

// ---------------------------------------------------------------------------
// STREAM-triad bandwidth measurement.
// ---------------------------------------------------------------------------

const TRIAD_SCALAR: f64 = 3.0;
const TRIAD_TRIALS: usize = 10;

fn triad_pass(a: &mut [f64], b: &[f64], c: &[f64], nthreads: usize) {
    let n = a.len();
    let per = n.div_ceil(nthreads);
    std::thread::scope(|s| {
        let mut rest = a;
        let mut off = 0usize;
        for _ in 0..nthreads {
            let take = per.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            let lo = off;
            s.spawn(move || {
                for (i, ai) in head.iter_mut().enumerate() {
                    *ai = b[lo + i] + TRIAD_SCALAR * c[lo + i];
                }
            });
            rest = tail;
            off += take;
        }
    });
}

/// Best-of-trials triad bandwidth in bytes/s for arrays of `n` doubles.
fn triad_bandwidth(n: usize, nthreads: usize) -> Result<f64, BoundsError> {
    let mut a = vec![0.0f64; n];
    let b = vec![1.0f64; n];
    let c = vec![2.0f64; n];
    // Calibrate pass count so one trial is comfortably above timer noise.
    triad_pass(&mut a, &b, &c, nthreads);
    let t0 = Instant::now();
    triad_pass(&mut a, &b, &c, nthreads);
    let one = t0.elapsed().as_secs_f64();
    if one <= 0.0 {
        return Err(BoundsError::Unmeasurable("triad pass below timer resolution".into()));
    }
    let passes = ((0.02 / one).ceil() as usize).clamp(1, 1000);
    let bytes_per_pass = 3.0 * VALUE_BYTES as f64 * n as f64;
    let mut best = 0.0f64;
    for _ in 0..TRIAD_TRIALS {
        let t0 = Instant::now();
        for _ in 0..passes {
            triad_pass(&mut a, &b, &c, nthreads);
        }
        let secs = t0.elapsed().as_secs_f64();
        if secs < 1e-6 {
            return Err(BoundsError::Unmeasurable(format!(
                "trial of {passes} passes took {secs} s"
            )));
        }
        best = best.max(bytes_per_pass * passes as f64 / secs);
    }
    Ok(best)
}

fn read_sysfs_usize(path: &str) -> Option<usize> {
    let s = fs::read_to_string(path).ok()?;
    s.trim().parse().ok()
}

fn detect_cache_line() -> usize {
    read_sysfs_usize("/sys/devices/system/cpu/cpu0/cache/index0/coherency_line_size").unwrap_or(64)
}

fn detect_llc_size() -> usize {
    // Largest cache level reported for cpu0.
    let mut best = 0usize;
    for idx in 0..8 {
        let base = format!("/sys/devices/system/cpu/cpu0/cache/index{idx}");
        let Ok(size) = fs::read_to_string(format!("{base}/size")) else { continue };
        let size = size.trim();
        let bytes = if let Some(k) = size.strip_suffix('K') {
            k.parse::<usize>().ok().map(|v| v * 1024)
        } else if let Some(mb) = size.strip_suffix('M') {
            mb.parse::<usize>().ok().map(|v| v * 1024 * 1024)
        } else {
            size.parse::<usize>().ok()
        };
        if let Some(b) = bytes {
            best = best.max(b);
        }
    }
    if best == 0 {
        32 * 1024 * 1024
    } else {
        best
    }
}

fn machine_fingerprint(nthreads: usize) -> String {
    let host = fs::read_to_string("/proc/sys/kernel/hostname")
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|_| "unknown-host".into());
    format!("{host}-t{nthreads}")
}

/// Measures sustainable bandwidth with a triad streaming benchmark: one
/// working set at least 4x the LLC for main memory, one at most half the LLC
/// for cache-resident bandwidth.
pub fn measure_bandwidth(
    nthreads: usize,
    llc_override: Option<usize>,
    line_override: Option<usize>,
) -> Result<MachineProfile, BoundsError> {
    let llc_size = llc_override.unwrap_or_else(detect_llc_size);
    let cache_line = line_override.unwrap_or_else(detect_cache_line);
    let n_main = (4 * llc_size).div_ceil(3 * VALUE_BYTES);
    let n_llc = (llc_size / 2 / (3 * VALUE_BYTES)).max(1024);
    let bmax_main = triad_bandwidth(n_main, nthreads)?;
    let bmax_llc = triad_bandwidth(n_llc, nthreads)?.max(bmax_main);
    Ok(MachineProfile {
        bmax_main,
        bmax_llc,
        llc_size,
        cache_line,
        nthreads,
        fingerprint: machine_fingerprint(nthreads),
    })
}

// ---------------------------------------------------------------------------
// Machine-profile persistence (key-value text file, shared with the
// classifier's rule parameters).
// ---------------------------------------------------------------------------

pub fn save_profile(
    path: &Path,
    prof: &MachineProfile,
    params: Option<&crate::clsprofile::RuleParams>,
) -> Result<(), BoundsError> {
    let mut s = String::new();
    s.push_str(&format!("fingerprint={}\n", prof.fingerprint));
    s.push_str(&format!("nthreads={}\n", prof.nthreads));
    s.push_str(&format!("bmax_main={:.17e}\n", prof.bmax_main));
    s.push_str(&format!("bmax_llc={:.17e}\n", prof.bmax_llc));
    s.push_str(&format!("llc_size={}\n", prof.llc_size));
    s.push_str(&format!("cache_line={}\n", prof.cache_line));
    if let Some(p) = params {
        s.push_str(&format!("t_ml={:.17e}\n", p.t_ml));
        s.push_str(&format!("t_imb={:.17e}\n", p.t_imb));
        s.push_str(&format!("approx_tol={:.17e}\n", p.approx_tol));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn load_profile(
    path: &Path,
) -> Result<(MachineProfile, Option<crate::clsprofile::RuleParams>), BoundsError> {
    let content = fs::read_to_string(path)?;
    let mut kv = std::collections::HashMap::new();
    for (ln, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| BoundsError::ProfileFile(format!("line {}: missing '='", ln + 1)))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| BoundsError::ProfileFile(format!("missing key '{k}'")))
    };
    let parse_f = |k: &str| -> Result<f64, BoundsError> {
        get(k)?.parse().map_err(|e| BoundsError::ProfileFile(format!("bad {k}: {e}")))
    };
    let parse_u = |k: &str| -> Result<usize, BoundsError> {
        get(k)?.parse().map_err(|e| BoundsError::ProfileFile(format!("bad {k}: {e}")))
    };
    let prof = MachineProfile {
        bmax_main: parse_f("bmax_main")?,
        bmax_llc: parse_f("bmax_llc")?,
        llc_size: parse_u("llc_size")?,
        cache_line: parse_u("cache_line")?,
        nthreads: parse_u("nthreads")?,
        fingerprint: get("fingerprint")?.clone(),
    };
    let params = match (kv.get("t_ml"), kv.get("t_imb"), kv.get("approx_tol")) {
        (Some(a), Some(b), Some(c)) => Some(crate::clsprofile::RuleParams {
            t_ml: a.parse().map_err(|e| BoundsError::ProfileFile(format!("bad t_ml: {e}")))?,
            t_imb: b.parse().map_err(|e| BoundsError::ProfileFile(format!("bad t_imb: {e}")))?,
            approx_tol: c
                .parse()
                .map_err(|e| BoundsError::ProfileFile(format!("bad approx_tol: {e}")))?,
        }),
        _ => None,
    };
    Ok((prof, params))
}
