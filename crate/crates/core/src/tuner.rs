//! End-to-end tuning: bottleneck detection, class-to-optimization mapping,
//! joint kernel composition, benchmark comparison and amortization analysis.

use crate::bounds::{self, BenchConfig, BoundsError, MachineProfile};
use crate::clsfeature::{predict, TreeModel};
use crate::clsprofile::{classify, Class, ClassSet, RuleParams};
use crate::featext::{self, FeatError, FeatureVector};
use crate::kernels::{
    benchmark, compose, partition_by_nnz, BaseFormat, InnerLoop, Kernel, KernelData, KernelError,
    KernelId, Partition, Schedule, TimingResult, DEFAULT_CHUNK,
};
use crate::matcore::CsrMatrix;
use crate::variants::{compress_delta, decompose, DecomposedCsrMatrix, DeltaCsrMatrix};
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};
use std::fmt::Write as _;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("feature mode requires a trained model")]
    MissingModel,
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Feat(#[from] FeatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Profile,
    Feature,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Profile => "profile",
            Mode::Feature => "feature",
        }
    }
}

/// Thresholds for the IMB subcategory rules; both cutoffs are heuristics and
/// stay configurable.
#[derive(Debug, Clone, Copy)]
pub struct PlanConfig {
    /// A row is "pathologically dense" when nnz_max > dense_row_k * nnz_avg.
    pub dense_row_k: f64,
    /// Decomposition threshold factor applied to nnz_avg.
    pub decompose_factor: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { dense_row_k: 100.0, decompose_factor: 8.0 }
    }
}

/// Which optimizations to apply, with one rationale entry per triggering
/// class.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationPlan {
    pub kernel_id: KernelId,
    pub needs_delta: bool,
    /// Decomposition threshold in nonzeros per row, when decomposition fires.
    pub needs_decompose: Option<usize>,
    pub rationale: Vec<(Class, String)>,
}

impl OptimizationPlan {
    pub fn baseline() -> Self {
        OptimizationPlan {
            kernel_id: KernelId::baseline(),
            needs_delta: false,
            needs_decompose: None,
            rationale: Vec::new(),
        }
    }
}

impl Serialize for OptimizationPlan {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("OptimizationPlan", 4)?;
        st.serialize_field("kernel", &self.kernel_id.to_string())?;
        st.serialize_field("needs_delta", &self.needs_delta)?;
        st.serialize_field("needs_decompose", &self.needs_decompose)?;
        struct Rat<'a>(&'a [(Class, String)]);
        impl Serialize for Rat<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(self.0.len()))?;
                for (c, why) in self.0 {
                    m.serialize_entry(c.name(), why)?;
                }
                m.end()
            }
        }
        st.serialize_field("rationale", &Rat(&self.rationale))?;
        st.end()
    }
}

/// Iterations needed before preprocessing overhead is repaid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Amortization {
    Iterations(u64),
    NotBeneficial,
}

impl Serialize for Amortization {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Amortization::Iterations(n) => s.serialize_u64(*n),
            Amortization::NotBeneficial => s.serialize_str("not-beneficial"),
        }
    }
}

impl std::fmt::Display for Amortization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Amortization::Iterations(n) => write!(f, "{n}"),
            Amortization::NotBeneficial => f.write_str("not-beneficial"),
        }
    }
}

/// n_iters_min = ceil(t_pre / (t_base_iter - t_opt_iter)); a non-positive
/// denominator means the optimization never pays off.
pub fn n_iters_min(t_pre: f64, t_base_iter: f64, t_opt_iter: f64) -> Amortization {
    let denom = t_base_iter - t_opt_iter;
    if denom > 0.0 && t_pre.is_finite() {
        Amortization::Iterations((t_pre / denom).ceil().max(0.0) as u64)
    } else {
        Amortization::NotBeneficial
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneResult {
    pub classes: ClassSet,
    pub plan: OptimizationPlan,
    pub baseline: TimingResult,
    pub optimized: TimingResult,
    /// Classification plus representation-conversion seconds.
    pub t_pre: f64,
    pub n_iters_min: Amortization,
    pub fingerprint: String,
    pub nthreads: usize,
}

impl TuneResult {
    pub fn speedup(&self) -> f64 {
        self.optimized.gflops / self.baseline.gflops
    }
}

/// Maps a class set to one jointly-applied optimization plan. Decomposition
/// takes precedence over delta compression when both fire, since a kernel
/// cannot use both base formats at once.
pub fn plan_from_classes(
    classes: ClassSet,
    f: &FeatureVector,
    cfg: &PlanConfig,
) -> OptimizationPlan {
    let mut plan = OptimizationPlan::baseline();
    if classes.contains(Class::Mb) {
        plan.needs_delta = true;
        plan.kernel_id.inner = InnerLoop::UnrolledVectorized;
        plan.rationale
            .push((Class::Mb, "delta compression + unrolled-vectorized inner loop".into()));
    }
    if classes.contains(Class::Ml) {
        plan.kernel_id.prefetch = true;
        plan.rationale.push((Class::Ml, "software prefetching on x".into()));
    }
    if classes.contains(Class::Imb) {
        if f.nnz_max > cfg.dense_row_k * f.nnz_avg {
            let threshold = (cfg.decompose_factor * f.nnz_avg).ceil().max(1.0) as usize;
            plan.needs_decompose = Some(threshold);
            plan.rationale.push((
                Class::Imb,
                format!(
                    "long-row decomposition at threshold {threshold} \
                     (nnz_max > {}*nnz_avg)",
                    cfg.dense_row_k
                ),
            ));
        } else if f.bw_sd > f.bw_avg {
            plan.kernel_id.schedule = Schedule::Dynamic;
            plan.rationale
                .push((Class::Imb, "dynamic scheduling (bw_sd > bw_avg)".into()));
        } else {
            plan.kernel_id.schedule = Schedule::Dynamic;
            plan.rationale.push((Class::Imb, "dynamic scheduling (fallback)".into()));
        }
    }
    if classes.contains(Class::Cmp) {
        plan.kernel_id.inner = InnerLoop::UnrolledVectorized;
        plan.rationale.push((Class::Cmp, "unrolled-vectorized inner loop".into()));
    }
    if plan.needs_decompose.is_some() && plan.needs_delta {
        plan.needs_delta = false;
        if let Some(entry) = plan.rationale.iter_mut().find(|(c, _)| *c == Class::Mb) {
            entry.1 = "delta compression superseded by decomposition (formats are \
                       mutually exclusive); unrolled-vectorized inner loop kept"
                .into();
        }
    }
    plan.kernel_id.base = if plan.needs_decompose.is_some() {
        BaseFormat::Decomposed
    } else if plan.needs_delta {
        BaseFormat::Delta
    } else {
        BaseFormat::Csr
    };
    plan
}

/// Converted matrix representation owned for the kernel's lifetime.
enum PlannedData {
    Csr,
    Delta(DeltaCsrMatrix),
    Decomposed(DecomposedCsrMatrix),
}

fn convert(m: &CsrMatrix, plan: &mut OptimizationPlan) -> PlannedData {
    if let Some(threshold) = plan.needs_decompose {
        return PlannedData::Decomposed(decompose(m, threshold));
    }
    if plan.needs_delta {
        match compress_delta(m) {
            Some(d) => return PlannedData::Delta(d),
            None => {
                // Column deltas too wide for 16 bits: fall back to CSR and
                // record it so the plan stays honest.
                plan.needs_delta = false;
                plan.kernel_id.base = BaseFormat::Csr;
                if let Some(entry) = plan.rationale.iter_mut().find(|(c, _)| *c == Class::Mb) {
                    entry.1 = "delta compression not applicable (row deltas exceed 16 \
                               bits); unrolled-vectorized inner loop kept"
                        .into();
                }
            }
        }
    }
    PlannedData::Csr
}

fn planned_kernel<'a>(
    id: KernelId,
    m: &'a CsrMatrix,
    data: &'a PlannedData,
    part: Partition,
    chunk: usize,
) -> Result<Kernel<'a>, KernelError> {
    let kd = match data {
        PlannedData::Csr => KernelData::Csr(m),
        PlannedData::Delta(d) => KernelData::Delta(d),
        PlannedData::Decomposed(d) => KernelData::Decomposed(d),
    };
    Ok(compose(id, kd, part)?.with_chunk(chunk))
}

#[derive(Debug, Clone, Copy)]
pub struct TuneConfig {
    pub nthreads: usize,
    pub bench: BenchConfig,
    pub plan: PlanConfig,
    pub chunk: usize,
}

impl TuneConfig {
    pub fn new(nthreads: usize) -> Self {
        TuneConfig {
            nthreads,
            bench: BenchConfig::default(),
            plan: PlanConfig::default(),
            chunk: DEFAULT_CHUNK,
        }
    }
}

/// Detects bottlenecks, applies the mapped optimizations jointly and
/// benchmarks the result against the baseline CSR kernel. `t_pre` covers
/// classification and representation conversion; the comparison benchmarks
/// are excluded from it.
pub fn tune(
    m: &CsrMatrix,
    mode: Mode,
    model: Option<&TreeModel>,
    prof: &MachineProfile,
    params: &RuleParams,
    cfg: &TuneConfig,
) -> Result<TuneResult, TuneError> {
    if mode == Mode::Feature && model.is_none() {
        return Err(TuneError::MissingModel);
    }
    let pre_start = Instant::now();
    let features = featext::extract(m, prof)?;
    let classes = match mode {
        Mode::Profile => {
            let report = bounds::profile(m, prof, cfg.nthreads, cfg.bench)?;
            classify(&report, params)
        }
        Mode::Feature => predict(model.unwrap(), &features),
    };
    let mut plan = plan_from_classes(classes, &features, &cfg.plan);
    let data = convert(m, &mut plan);
    let t_pre = pre_start.elapsed().as_secs_f64();

    let part = partition_by_nnz(m, cfg.nthreads);
    let x = vec![1.0f64; m.ncols()];
    let mut y = vec![0.0f64; m.nrows()];
    let base_kernel = compose(KernelId::baseline(), KernelData::Csr(m), part.clone())?;
    let baseline = benchmark(&base_kernel, &x, &mut y, cfg.bench.runs, cfg.bench.iters)?;
    let opt_kernel = planned_kernel(plan.kernel_id, m, &data, part, cfg.chunk)?;
    let optimized = benchmark(&opt_kernel, &x, &mut y, cfg.bench.runs, cfg.bench.iters)?;
    // Correctness is never traded for speed: the planned kernel must still
    // produce the reference result (test builds only, the oracle is O(N^2)).
    #[cfg(debug_assertions)]
    {
        let want = crate::reference::dense_matvec(m, &x);
        let err = crate::reference::max_rel_error(&y, &want);
        debug_assert!(err <= 1e-10, "planned kernel diverged from oracle: {err}");
    }
    let n = n_iters_min(
        t_pre,
        baseline.secs_per_iter(m.nnz()),
        optimized.secs_per_iter(m.nnz()),
    );
    Ok(TuneResult {
        classes,
        plan,
        baseline,
        optimized,
        t_pre,
        n_iters_min: n,
        fingerprint: prof.fingerprint.clone(),
        nthreads: cfg.nthreads,
    })
}

pub const CORPUS_CSV_HEADER: &str =
    "matrix_id,classes,plan,baseline_gflops,optimized_gflops,speedup,n_iters_min,error";

#[derive(Debug)]
pub struct CorpusRow {
    pub matrix_id: String,
    pub result: Result<TuneResult, TuneError>,
}

#[derive(Debug)]
pub struct CorpusReport {
    pub rows: Vec<CorpusRow>,
}

impl CorpusReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.result.is_ok())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(CORPUS_CSV_HEADER);
        s.push('\n');
        for row in &self.rows {
            match &row.result {
                Ok(r) => {
                    // Classes joined with ';' so the column stays one CSV
                    // field.
                    let classes = if r.classes.is_empty() {
                        "-".to_string()
                    } else {
                        r.classes.iter().map(|c| c.name()).collect::<Vec<_>>().join(";")
                    };
                    let _ = writeln!(
                        s,
                        "{},{},{},{:.4},{:.4},{:.3},{},",
                        row.matrix_id,
                        classes,
                        r.plan.kernel_id,
                        r.baseline.gflops,
                        r.optimized.gflops,
                        r.speedup(),
                        r.n_iters_min
                    );
                }
                Err(e) => {
                    let msg = e.to_string().replace(',', ";").replace('\n', " ");
                    let _ = writeln!(s, "{},,,,,,,{msg}", row.matrix_id);
                }
            }
        }
        s
    }
}

/// Tunes every matrix in turn, recording per-matrix failures in their row and
/// continuing. Sequential on purpose: concurrent tunes would pollute each
/// other's timings.
pub fn run_corpus(
    corpus: &[(String, CsrMatrix)],
    mode: Mode,
    model: Option<&TreeModel>,
    prof: &MachineProfile,
    params: &RuleParams,
    cfg: &TuneConfig,
) -> CorpusReport {
    let rows = corpus
        .iter()
        .map(|(id, m)| CorpusRow {
            matrix_id: id.clone(),
            result: tune(m, mode, model, prof, params, cfg),
        })
        .collect();
    CorpusReport { rows }
}
