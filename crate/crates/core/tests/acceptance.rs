//! Acceptance gate: one test per criterion, each printing a PASS (or WARN for
//! the hardware-dependent soft criteria) line.

use spmvtune::bounds::{self, working_set_bytes, BenchConfig, BoundsReport, MachineProfile};
use spmvtune::clsfeature::{
    loo_evaluate, model_to_string, predict, train, LabeledSample, TreeParams,
};
use spmvtune::clsprofile::{classify, Class, ClassSet, RuleParams};
use spmvtune::featext::{self, FeatureId, FeatureVector, ALL_FEATURES};
use spmvtune::kernels::{
    benchmark, compose, partition_by_nnz, BaseFormat, InnerLoop, KernelData, KernelId, Partition,
    Schedule,
};
use spmvtune::matcore::{CsrMatrix, GeneratorKind, GeneratorSpec};
use spmvtune::reference::{abs_row_sums, dense_matvec, max_scaled_error};
use spmvtune::tuner::{self, n_iters_min, Amortization, Mode, TuneConfig};
use spmvtune::variants::{compress_delta, decompose, default_decompose_threshold};

fn test_machine() -> MachineProfile {
    MachineProfile {
        bmax_main: 1e11,
        bmax_llc: 2e11,
        llc_size: 32 * 1024 * 1024,
        cache_line: 64,
        nthreads: 4,
        fingerprint: "acceptance".into(),
    }
}

/// Generates with the requested nonzero count, halving on structural
/// infeasibility so every (kind, shape) pair yields a matrix.
fn gen_feasible(kind: GeneratorKind, nrows: usize, ncols: usize, nnz: usize, seed: u64) -> CsrMatrix {
    let mut target = nnz.clamp(1, nrows * ncols);
    loop {
        match CsrMatrix::generate(&GeneratorSpec { kind, nrows, ncols, target_nnz: target, seed }) {
            Ok(m) => return m,
            Err(_) if target > 1 => target /= 2,
            Err(e) => panic!("cannot generate {kind:?} {nrows}x{ncols}: {e}"),
        }
    }
}

/// 200 matrices: all four generator kinds over shapes from 1x1 to 2000x2000,
/// square and rectangular.
fn corpus_200() -> Vec<CsrMatrix> {
    let kinds = [
        GeneratorKind::Banded { bandwidth: 5 },
        GeneratorKind::UniformRandom,
        GeneratorKind::PowerLawRows { exponent: 1.8 },
        GeneratorKind::BlockDense { block_size: 4 },
    ];
    let shapes: [(usize, usize); 10] = [
        (1, 1),
        (2, 3),
        (7, 7),
        (16, 5),
        (40, 40),
        (64, 128),
        (200, 200),
        (333, 100),
        (1000, 1000),
        (2000, 2000),
    ];
    let mut out = Vec::with_capacity(200);
    for (ki, &kind) in kinds.iter().enumerate() {
        for (si, &(nr, nc)) in shapes.iter().enumerate() {
            for rep in 0..5u64 {
                let nnz = (nr * nc / 10).clamp(1, 4 * (nr + nc));
                out.push(gen_feasible(kind, nr, nc, nnz, (ki * 100 + si * 10) as u64 + rep));
            }
        }
    }
    assert_eq!(out.len(), 200);
    out
}

fn all_kernel_ids() -> Vec<KernelId> {
    let mut ids = Vec::new();
    for base in [BaseFormat::Csr, BaseFormat::Delta, BaseFormat::Decomposed] {
        for prefetch in [false, true] {
            for schedule in [Schedule::StaticNnzBalanced, Schedule::Dynamic] {
                for inner in [InnerLoop::Plain, InnerLoop::UnrolledVectorized] {
                    ids.push(KernelId { base, prefetch, schedule, inner });
                }
            }
        }
    }
    ids
}

fn seeded_x(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 37 + 11) % 101) as f64 * 0.013 - 0.5).collect()
}

#[test]
fn acceptance_01_kernel_correctness() {
    let corpus = corpus_200();
    let ids = all_kernel_ids();
    let mut checked = 0usize;
    for m in &corpus {
        let x = seeded_x(m.ncols());
        let want = dense_matvec(m, &x);
        // Error scale per component: the row's absolute term sum, so rows
        // whose signed sum cancels to near zero do not inflate the ratio.
        let scale = abs_row_sums(m, &x);
        let delta = compress_delta(m);
        let dec = decompose(m, default_decompose_threshold(m));
        for &id in &ids {
            let mut y1: Option<Vec<f64>> = None;
            for nthreads in [1usize, 2, 4, 8] {
                let part = partition_by_nnz(m, nthreads);
                let data = match id.base {
                    BaseFormat::Csr => KernelData::Csr(m),
                    BaseFormat::Delta => match &delta {
                        Some(d) => KernelData::Delta(d),
                        None => continue,
                    },
                    BaseFormat::Decomposed => KernelData::Decomposed(&dec),
                };
                let k = compose(id, data, part).unwrap().with_chunk(8);
                let mut y = vec![0.0f64; m.nrows()];
                k.run(&x, &mut y).unwrap();
                let tol = if id.order_preserving() { 1e-13 } else { 1e-12 };
                let err = max_scaled_error(&y, &want, &scale);
                assert!(err <= tol, "{id} at {nthreads} threads: err {err}");
                if id.order_preserving() {
                    match &y1 {
                        None => y1 = Some(y),
                        Some(first) => {
                            assert!(
                                first.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()),
                                "{id}: thread count {nthreads} changed bits"
                            );
                        }
                    }
                }
                checked += 1;
            }
        }
    }
    println!("PASS criterion 1: {checked} kernel runs matched the dense oracle (order-preserving bit-identical across 1/2/4/8 threads)");
}

#[test]
fn acceptance_02_representation_round_trips() {
    let corpus = corpus_200();
    let mut compressed = 0usize;
    for m in &corpus {
        if let Some(d) = compress_delta(m) {
            assert_eq!(&d.reconstruct(), m, "delta round trip changed the matrix");
            compressed += 1;
        }
        for threshold in [1usize, 4, default_decompose_threshold(m)] {
            let dec = decompose(m, threshold);
            assert_eq!(dec.nnz(), m.nnz(), "decomposition lost nonzeros");
            for i in 0..=m.nrows() {
                assert_eq!(
                    dec.rowptr()[i] + dec.offset()[i],
                    m.rowptr()[i],
                    "conservation violated at row {i}"
                );
            }
        }
    }
    println!("PASS criterion 2: delta round trip exact on {compressed} compressible matrices; decomposition conserves rowptr[i]+offset[i] on all 200");
}

#[test]
fn acceptance_03_bounds_algebra() {
    let prof = test_machine();
    // Analytic ordering on the whole corpus.
    for m in corpus_200() {
        assert!(
            bounds::p_peak(&m, &prof) >= bounds::p_mb(&m, &prof),
            "p_peak < p_mb"
        );
    }
    // Benchmark-backed: p_imb uses the median busy time, which cannot fall
    // below the wall time by more than scheduling noise.
    let cfg = BenchConfig { runs: 3, iters: 16 };
    for seed in 0..6u64 {
        let m = gen_feasible(GeneratorKind::UniformRandom, 400, 400, 6000, seed);
        let r = bounds::profile(&m, &prof, 2, cfg).unwrap();
        assert!(r.p_imb >= 0.95 * r.p_csr, "p_imb {} < 0.95*p_csr {}", r.p_imb, r.p_csr);
    }
    // NNZ = 10^6 over N = 10^3 is fully dense: index traffic is half of the
    // value traffic, so P_peak/P_MB approaches 1.5.
    let m = gen_feasible(GeneratorKind::UniformRandom, 1000, 1000, 1_000_000, 1);
    assert_eq!(m.nnz(), 1_000_000);
    let mut small_llc = prof.clone();
    small_llc.llc_size = 1 << 20; // force the main-memory bandwidth regime
    let ratio = bounds::p_peak(&m, &small_llc) / bounds::p_mb(&m, &small_llc);
    assert!((ratio - 1.5).abs() / 1.5 < 0.01, "ratio {ratio}");
    println!("PASS criterion 3: p_peak>=p_mb on 200 matrices, p_imb>=0.95*p_csr on 6 runs, P_peak/P_MB = {ratio:.4}");
}

#[test]
fn acceptance_04_feature_oracle() {
    let prof = test_machine();
    let kinds = [
        GeneratorKind::Banded { bandwidth: 7 },
        GeneratorKind::UniformRandom,
        GeneratorKind::PowerLawRows { exponent: 2.0 },
        GeneratorKind::BlockDense { block_size: 5 },
    ];
    let mut n = 0usize;
    for (ki, &kind) in kinds.iter().enumerate() {
        for seed in 0..25u64 {
            let dim = 20 + 13 * (seed as usize % 7);
            let m = gen_feasible(kind, dim, dim + ki, dim * 4, seed);
            let a = featext::extract(&m, &prof).unwrap();
            let b = featext::extract_naive(&m, &prof).unwrap();
            for id in ALL_FEATURES {
                let (u, v) = (a.get(id), b.get(id));
                let scale = u.abs().max(v.abs()).max(1.0);
                assert!((u - v).abs() <= 1e-12 * scale, "{}: {u} vs {v}", id.name());
            }
            n += 1;
        }
    }
    assert_eq!(n, 100);
    // Worked single-row example with 64-byte lines.
    let m = CsrMatrix::new(1, 21, vec![0, 4], vec![4, 5, 6, 20], vec![1.0; 4]).unwrap();
    let f = featext::extract(&m, &prof).unwrap();
    assert_eq!(f.bw_avg, 17.0);
    assert_eq!(f.clustering_avg, 0.5); // 2 groups / 4 nonzeros
    assert_eq!(f.misses_avg, 1.0); // one gap wider than 8 elements
    println!("PASS criterion 4: streaming extractor equals naive oracle on 100 matrices; worked row [4,5,6,20] gives bw=17, ngroups=2, clustering=0.5, misses=1");
}

fn report(p_csr: f64, p_mb: f64, p_ml: f64, p_imb: f64, p_cmp: f64, p_peak: f64) -> BoundsReport {
    BoundsReport {
        p_csr,
        p_mb,
        p_ml,
        p_imb,
        p_cmp,
        p_peak,
        working_set: 0,
        fits_in_llc: false,
        measured: vec![],
        index_bytes: 4,
        nthreads: 4,
    }
}

#[test]
fn acceptance_05_classifier_rules() {
    let params = RuleParams::default(); // t_ml = 1.25, t_imb = 1.24, tol = 0.10
    let set = |cs: &[Class]| cs.iter().fold(ClassSet::EMPTY, |s, &c| s.with(c));
    // Hand-derived table covering every rule branch and its boundaries.
    let cases: [(BoundsReport, &[Class]); 16] = [
        // 1: everything equal, nothing fires
        (report(1.0, 1.0, 1.0, 1.0, 1.0, 1.0), &[]),
        // 2: bandwidth saturated and cheaper formats would help
        (report(1.0, 1.0, 1.0, 1.0, 1.5, 2.0), &[Class::Mb]),
        // 3: latency ratio above threshold only
        (report(1.0, 1.2, 1.3, 1.0, 1.5, 2.0), &[Class::Ml]),
        // 4: imbalance ratio above threshold only
        (report(1.0, 1.2, 1.0, 1.25, 1.5, 2.0), &[Class::Imb]),
        // 5: compute bound, first trigger (p_mb > p_cmp)
        (report(1.0, 2.0, 1.0, 1.0, 1.0, 3.0), &[Class::Cmp]),
        // 6: compute bound, second trigger (p_cmp > p_peak)
        (report(1.0, 1.2, 1.0, 1.0, 4.0, 3.0), &[Class::Cmp]),
        // 7: ML ratio exactly at threshold, strict comparison keeps it out
        (report(1.0, 1.2, 1.25, 1.0, 1.5, 2.0), &[]),
        // 8: IMB ratio exactly at threshold
        (report(1.0, 1.2, 1.0, 1.24, 1.5, 2.0), &[]),
        // 9: MB boundary, p_csr exactly (1 - tol) * p_mb still counts
        (report(0.9, 1.0, 0.9, 0.9, 1.5, 2.0), &[Class::Mb]),
        // 10: just below the MB boundary
        (report(0.89, 1.0, 0.89, 0.89, 1.5, 2.0), &[]),
        // 11: MB and ML together
        (report(1.0, 1.0, 1.3, 1.0, 1.5, 2.0), &[Class::Mb, Class::Ml]),
        // 12: MB and IMB together
        (report(1.0, 1.0, 1.0, 1.3, 1.5, 2.0), &[Class::Mb, Class::Imb]),
        // 13: CMP with ML and IMB (MB blocked by p_mb > p_cmp)
        (report(1.0, 2.0, 1.3, 1.3, 1.0, 3.0), &[Class::Ml, Class::Imb, Class::Cmp]),
        // 14: p_mb == p_cmp boundary: neither MB (needs <) nor CMP (needs >)
        (report(1.4, 1.5, 1.4, 1.4, 1.5, 2.0), &[]),
        // 15: p_cmp == p_peak boundary
        (report(1.0, 1.2, 1.0, 1.0, 2.0, 2.0), &[]),
        // 16: three classes at once (MB and CMP are mutually exclusive)
        (report(1.0, 1.05, 1.3, 1.3, 1.5, 2.0), &[Class::Mb, Class::Ml, Class::Imb]),
    ];
    for (i, (r, expect)) in cases.iter().enumerate() {
        let got = classify(r, &params);
        assert_eq!(got, set(expect), "case {}", i + 1);
    }
    println!("PASS criterion 5: all 16 hand-constructed reports map to their derived class sets under the default thresholds");
}

#[test]
fn acceptance_06_bottleneck_sanity_soft() {
    let hw_threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    if hw_threads < 4 {
        println!("WARN criterion 6: skipped, machine has {hw_threads} < 4 threads");
        return;
    }
    let nthreads = 4;
    let prof = match bounds::measure_bandwidth(nthreads, None, None) {
        Ok(p) => p,
        Err(e) => {
            println!("WARN criterion 6: bandwidth measurement failed ({e})");
            return;
        }
    };
    let cfg = BenchConfig { runs: 3, iters: 32 };
    let params = RuleParams::default();

    // One row holding ~60% of all nonzeros.
    let nrows = 200usize;
    let ncols = 12_000usize;
    let mut entries = Vec::new();
    for c in 0..6000usize {
        entries.push((0usize, 2 * c, 1.0));
    }
    for i in 1..nrows {
        for k in 0..20usize {
            entries.push((i, (i * 53 + k * 601) % ncols, 1.0));
        }
    }
    let m = CsrMatrix::from_coo(nrows, ncols, entries).unwrap();
    assert!(m.row_len(0) * 2 >= m.nnz());
    let r = bounds::profile(&m, &prof, nthreads, cfg).unwrap();
    let classes = classify(&r, &params);
    let imb_ok = classes.contains(Class::Imb);

    // Irregular gathers across a large x vector.
    let m2 = gen_feasible(GeneratorKind::UniformRandom, 100_000, 100_000, 1_000_000, 3);
    let r2 = bounds::profile(&m2, &prof, nthreads, BenchConfig { runs: 3, iters: 4 }).unwrap();
    let ml_ok = r2.p_ml > r2.p_csr;

    if imb_ok && ml_ok {
        println!(
            "PASS criterion 6: heavy-row matrix classified {classes}; uniform 1e6-nnz matrix p_ml/p_csr = {:.3}",
            r2.p_ml / r2.p_csr
        );
    } else {
        println!(
            "WARN criterion 6 (soft, timing-dependent): heavy-row classes = {classes} (IMB expected), p_imb/p_csr = {:.3}; p_ml/p_csr = {:.3} (> 1 expected)",
            r.p_imb / r.p_csr,
            r2.p_ml / r2.p_csr
        );
    }
}

#[test]
fn acceptance_07_cart_properties() {
    fn fv(v: f64) -> FeatureVector {
        FeatureVector {
            size_flag: 0,
            density: 0.1,
            nnz_min: v,
            nnz_max: v,
            nnz_avg: v,
            nnz_sd: 0.0,
            bw_min: 1.0,
            bw_max: 1.0,
            bw_avg: 1.0,
            bw_sd: 0.0,
            scatter_avg: 1.0,
            scatter_sd: 0.0,
            clustering_avg: 1.0,
            misses_avg: 0.0,
        }
    }
    let ml = ClassSet::EMPTY.with(Class::Ml);
    let mb = ClassSet::EMPTY.with(Class::Mb);
    let sample = |v: f64, labels: ClassSet, id: &str| LabeledSample {
        features: fv(v),
        labels,
        matrix_id: id.into(),
    };
    let unpruned = TreeParams { max_depth: usize::MAX, min_leaf: 1 };

    // Determinism: byte-identical models across repeated training.
    let train_set = vec![
        sample(1.0, ClassSet::EMPTY, "a"),
        sample(3.0, ml, "b"),
        sample(7.0, ml, "c"),
        sample(9.0, mb, "d"),
    ];
    let m1 = train(&train_set, &[FeatureId::NnzAvg], unpruned).unwrap();
    let m2 = train(&train_set, &[FeatureId::NnzAvg], unpruned).unwrap();
    assert_eq!(model_to_string(&m1), model_to_string(&m2));

    // Unpruned memorization of distinct feature vectors.
    let labels = [ml, ClassSet::EMPTY, mb, ml.with(Class::Imb), ClassSet::EMPTY.with(Class::Cmp)];
    let mem: Vec<LabeledSample> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sample(i as f64 * 1.5, l, &format!("m{i}")))
        .collect();
    let model = train(&mem, &[FeatureId::NnzAvg], unpruned).unwrap();
    for s in &mem {
        assert_eq!(predict(&model, &s.features), s.labels);
    }

    // 4-point one-dimensional example splits at the midpoint 5.
    let four = vec![
        sample(1.0, ClassSet::EMPTY, "a"),
        sample(3.0, ClassSet::EMPTY, "b"),
        sample(7.0, ml, "c"),
        sample(9.0, ml, "d"),
    ];
    let m4 = train(&four, &[FeatureId::NnzAvg], unpruned).unwrap();
    let txt = model_to_string(&m4);
    assert!(txt.contains("thr=5.0000000000000000e0"), "model:\n{txt}");

    // LOO with a 3-cluster and one distant outlier: 3 of 4 exact.
    let loo_set = vec![
        sample(1.0, ml, "a"),
        sample(2.0, ml, "b"),
        sample(3.0, ml, "c"),
        sample(100.0, mb, "outlier"),
    ];
    let ev = loo_evaluate(&loo_set, &[FeatureId::NnzAvg], unpruned).unwrap();
    assert_eq!(ev.exact_match_ratio, 0.75);
    println!("PASS criterion 7: deterministic models, perfect memorization, split at 5, LOO outlier exact-match 0.75");
}

#[test]
fn acceptance_08_amortization() {
    assert_eq!(n_iters_min(1.0, 0.010, 0.005), Amortization::Iterations(200));
    assert_eq!(n_iters_min(1.0, 0.005, 0.010), Amortization::NotBeneficial);
    assert_eq!(n_iters_min(1.0, 0.005, 0.005), Amortization::NotBeneficial);
    println!("PASS criterion 8: 1 s / (10 ms - 5 ms) = 200 iterations; non-positive denominator reports not-beneficial");
}

#[test]
fn acceptance_09_10_end_to_end_soft() {
    let hw_threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let nthreads = hw_threads.min(4);
    let prof = test_machine();
    let params = RuleParams::default();
    let cfg = TuneConfig {
        nthreads,
        bench: BenchConfig { runs: 3, iters: 16 },
        plan: Default::default(),
        chunk: 64,
    };
    // 20-matrix corpus mixing all generator kinds, skewed toward shapes the
    // optimizations target.
    let mut corpus = Vec::new();
    for seed in 0..5u64 {
        corpus.push((
            format!("banded-{seed}"),
            gen_feasible(GeneratorKind::Banded { bandwidth: 9 }, 3000, 3000, 24_000, seed),
        ));
        corpus.push((
            format!("uniform-{seed}"),
            gen_feasible(GeneratorKind::UniformRandom, 2000, 2000, 30_000, seed),
        ));
        corpus.push((
            format!("powerlaw-{seed}"),
            gen_feasible(GeneratorKind::PowerLawRows { exponent: 2.2 }, 2000, 2000, 30_000, seed),
        ));
        corpus.push((
            format!("block-{seed}"),
            gen_feasible(GeneratorKind::BlockDense { block_size: 16 }, 2000, 2000, 30_000, seed),
        ));
    }
    assert_eq!(corpus.len(), 20);

    let profile_report = tuner::run_corpus(&corpus, Mode::Profile, None, &prof, &params, &cfg);
    assert!(profile_report.all_ok(), "some matrices failed to tune");
    let csv = profile_report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 21, "header plus one row per matrix");
    assert_eq!(lines[0], tuner::CORPUS_CSV_HEADER);
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 8, "malformed row: {line}");
    }
    let speedups: Vec<f64> = profile_report
        .rows
        .iter()
        .map(|r| r.result.as_ref().unwrap().speedup())
        .collect();
    let mean = speedups.iter().sum::<f64>() / speedups.len() as f64;
    if mean >= 1.0 {
        println!("PASS criterion 9: 20-matrix bench CSV well formed, mean speedup {mean:.3} >= 1.0");
    } else {
        println!("WARN criterion 9 (soft, hardware-dependent): mean speedup {mean:.3} < 1.0");
    }

    // Criterion 10: train a model on the profile-guided labels and compare
    // amortization medians between the two modes.
    let samples: Vec<LabeledSample> = corpus
        .iter()
        .zip(&profile_report.rows)
        .map(|((id, m), row)| LabeledSample {
            features: featext::extract(m, &prof).unwrap(),
            labels: row.result.as_ref().unwrap().classes,
            matrix_id: id.clone(),
        })
        .collect();
    let model = train(
        &samples,
        &spmvtune::clsfeature::feature_preset("preset-nnz").unwrap(),
        TreeParams::default(),
    )
    .unwrap();
    let feature_report =
        tuner::run_corpus(&corpus, Mode::Feature, Some(&model), &prof, &params, &cfg);
    assert!(feature_report.all_ok());
    let median = |rows: &tuner::CorpusReport| -> f64 {
        let mut v: Vec<f64> = rows
            .rows
            .iter()
            .map(|r| match r.result.as_ref().unwrap().n_iters_min {
                Amortization::Iterations(n) => n as f64,
                Amortization::NotBeneficial => f64::INFINITY,
            })
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
    };
    let med_profile = median(&profile_report);
    let med_feature = median(&feature_report);
    if med_feature <= med_profile {
        println!("PASS criterion 10: feature-mode median n_iters_min {med_feature} <= profile-mode median {med_profile}");
    } else {
        println!("WARN criterion 10 (soft): feature-mode median {med_feature} > profile-mode median {med_profile}");
    }
}

// Working-set helper used above must agree with the profiler's definition.
#[test]
fn working_set_definition_consistent() {
    let m = CsrMatrix::new(2, 2, vec![0, 1, 2], vec![0, 1], vec![1.0, 1.0]).unwrap();
    assert_eq!(working_set_bytes(&m), 12 * 2 + 4 * 3 + 8 * 2 + 8 * 2);
    let _ = Partition::single(2);
    let k = compose(KernelId::baseline(), KernelData::Csr(&m), partition_by_nnz(&m, 1)).unwrap();
    let mut y = vec![0.0; 2];
    let t = benchmark(&k, &[1.0, 1.0], &mut y, 1, 1).unwrap();
    assert!(t.gflops > 0.0);
}
