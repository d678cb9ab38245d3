//! Command-line front end: machine profiling, feature extraction, bottleneck
//! classification, model training and end-to-end tuning.

use clap::{Parser, Subcommand, ValueEnum};
use spmvtune::bounds::{
    self, load_profile, measure_bandwidth, save_profile, BenchConfig, MachineProfile,
};
use spmvtune::clsfeature::{
    self, load_model, parse_feature_subset, samples_from_csv, samples_to_csv, save_model,
    LabeledSample, TreeModel, TreeParams,
};
use spmvtune::clsprofile::{classify, ClassSet, Grid, GridSample, RuleParams};
use spmvtune::featext::{self, FeatureVector};
use spmvtune::kernels::{benchmark, compose, partition_by_nnz, KernelData, KernelId};
use spmvtune::matcore::{CsrMatrix, GeneratorSpec};
use spmvtune::tuner::{self, plan_from_classes, Mode, PlanConfig, TuneConfig};
use std::collections::HashMap;
use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "spmvtune", version, about = "SpMV bottleneck analysis and tuning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Profile,
    Feature,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Profile => Mode::Profile,
            ModeArg::Feature => Mode::Feature,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Measure sustainable memory bandwidth and write a machine-profile file
    Bandwidth {
        #[arg(long)]
        threads: Option<usize>,
        /// Override the detected last-level cache size in bytes
        #[arg(long)]
        llc_bytes: Option<usize>,
        /// Override the detected cache line size in bytes
        #[arg(long)]
        line_bytes: Option<usize>,
        #[arg(long, default_value = "machine-profile.txt")]
        out: PathBuf,
    },
    /// Print the structural feature row for one matrix
    Features {
        /// Matrix Market file or gen:kind,rows,cols,nnz,seed[,extra]
        matrix: String,
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Print the bound-and-bottleneck report for one matrix as JSON
    Profile {
        matrix: String,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 128)]
        iters: usize,
    },
    /// Print the bottleneck class set for one matrix
    Classify {
        matrix: String,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 128)]
        iters: usize,
    },
    /// Train a decision-tree model on a corpus labeled by the profiler
    Train {
        /// Directory of .mtx files, comma list of matrices, or labeled .csv
        #[arg(long)]
        corpus: String,
        #[arg(long)]
        out: PathBuf,
        /// preset-n, preset-nnz, all, or a comma list of feature names
        #[arg(long, default_value = "preset-nnz")]
        features: String,
        #[arg(long, default_value_t = 8)]
        max_depth: usize,
        #[arg(long, default_value_t = 3)]
        min_leaf: usize,
        /// Also write the bootstrapped labeled samples as CSV
        #[arg(long)]
        dump_samples: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 128)]
        iters: usize,
    },
    /// Leave-one-out evaluation of the tree classifier on a corpus
    Evaluate {
        #[arg(long)]
        corpus: String,
        /// Leave-one-out cross validation (the only supported protocol)
        #[arg(long)]
        loo: bool,
        #[arg(long, default_value = "preset-nnz")]
        features: String,
        #[arg(long, default_value_t = 8)]
        max_depth: usize,
        #[arg(long, default_value_t = 3)]
        min_leaf: usize,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 128)]
        iters: usize,
    },
    /// Grid-search the rule thresholds against measured per-plan gains
    Gridsearch {
        #[arg(long)]
        corpus: String,
        /// Machine-profile file to read and update with the tuned thresholds
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 128)]
        iters: usize,
    },
    /// Detect bottlenecks, apply the mapped optimizations and compare
    Tune {
        matrix: String,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 128)]
        iters: usize,
    },
    /// Tune every matrix in a corpus and write a CSV report
    Bench {
        #[arg(long)]
        corpus: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Profile)]
        mode: ModeArg,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 128)]
        iters: usize,
    },
}

type CliResult<T> = Result<T, Box<dyn Error>>;

/// Thread count: flag, then SPMV_THREADS, then the hardware parallelism.
fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("SPMV_THREADS").ok().and_then(|v| v.parse().ok()))
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn load_matrix(spec: &str) -> CliResult<(String, CsrMatrix)> {
    if spec.starts_with("gen:") {
        let g = GeneratorSpec::from_str(spec)?;
        // CSV-safe id: the canonical spec string contains commas.
        let id = g.id().replace(':', "-").replace(',', "-");
        return Ok((id, CsrMatrix::generate(&g)?));
    }
    let path = Path::new(spec);
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_string());
    Ok((id, CsrMatrix::read_matrix_market(path)?))
}

/// A corpus argument is a directory of .mtx files or a semicolon-separated
/// list of matrix specs (generator specs contain commas themselves).
fn load_corpus(arg: &str) -> CliResult<Vec<(String, CsrMatrix)>> {
    let path = Path::new(arg);
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "mtx"))
            .collect();
        files.sort();
        return files.iter().map(|p| load_matrix(&p.to_string_lossy())).collect();
    }
    let mut out = Vec::new();
    for part in arg.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(load_matrix(part)?);
    }
    Ok(out)
}

/// Labeled samples from a corpus argument: a .csv of previously bootstrapped
/// samples is read directly, anything else is profiled and labeled now.
fn load_samples(
    arg: &str,
    prof: &MachineProfile,
    params: &RuleParams,
    nthreads: usize,
    cfg: BenchConfig,
) -> CliResult<Vec<LabeledSample>> {
    if arg.ends_with(".csv") && Path::new(arg).is_file() {
        return Ok(samples_from_csv(&std::fs::read_to_string(arg)?)?);
    }
    let corpus = load_corpus(arg)?;
    Ok(clsfeature::bootstrap_labels(&corpus, prof, params, nthreads, cfg)?)
}

/// Loads the machine profile from a file or measures one now.
fn obtain_profile(
    path: Option<&Path>,
    nthreads: usize,
) -> CliResult<(MachineProfile, RuleParams)> {
    match path {
        Some(p) => {
            let (prof, params) = load_profile(p)?;
            Ok((prof, params.unwrap_or_default()))
        }
        None => {
            eprintln!("no --profile given; measuring memory bandwidth...");
            Ok((measure_bandwidth(nthreads, None, None)?, RuleParams::default()))
        }
    }
}

fn load_model_opt(path: Option<&Path>) -> CliResult<Option<TreeModel>> {
    Ok(match path {
        Some(p) => Some(load_model(p)?),
        None => None,
    })
}

/// Measured gain of every class subset's plan relative to the baseline, for
/// the threshold grid search.
fn measure_gains(
    m: &CsrMatrix,
    f: &FeatureVector,
    nthreads: usize,
    cfg: BenchConfig,
) -> CliResult<HashMap<ClassSet, f64>> {
    let part = partition_by_nnz(m, nthreads);
    let x = vec![1.0f64; m.ncols()];
    let mut y = vec![0.0f64; m.nrows()];
    let base = compose(KernelId::baseline(), KernelData::Csr(m), part.clone())?;
    let base_rate = benchmark(&base, &x, &mut y, cfg.runs, cfg.iters)?.gflops;
    let mut gains = HashMap::new();
    for classes in ClassSet::all_subsets() {
        let plan = plan_from_classes(classes, f, &PlanConfig::default());
        let delta_owned;
        let decomp_owned;
        let data = if let Some(thr) = plan.needs_decompose {
            decomp_owned = spmvtune::variants::decompose(m, thr);
            KernelData::Decomposed(&decomp_owned)
        } else if plan.needs_delta {
            match spmvtune::variants::compress_delta(m) {
                Some(d) => {
                    delta_owned = d;
                    KernelData::Delta(&delta_owned)
                }
                None => KernelData::Csr(m),
            }
        } else {
            KernelData::Csr(m)
        };
        let mut id = plan.kernel_id;
        if matches!(data, KernelData::Csr(_)) {
            id.base = spmvtune::kernels::BaseFormat::Csr;
        }
        let k = compose(id, data, part.clone())?;
        let rate = benchmark(&k, &x, &mut y, cfg.runs, cfg.iters)?.gflops;
        gains.insert(classes, rate / base_rate);
    }
    Ok(gains)
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.cmd {
        Cmd::Bandwidth { threads, llc_bytes, line_bytes, out } => {
            let nthreads = resolve_threads(threads);
            let prof = measure_bandwidth(nthreads, llc_bytes, line_bytes)?;
            save_profile(&out, &prof, None)?;
            println!("{}", serde_json::to_string_pretty(&prof)?);
            println!("written to {}", out.display());
        }
        Cmd::Features { matrix, profile } => {
            let nthreads = resolve_threads(None);
            let (m_id, m) = load_matrix(&matrix)?;
            // Only llc_size and cache_line matter here; avoid the bandwidth
            // measurement when no profile file is given.
            let prof = match profile {
                Some(p) => load_profile(&p)?.0,
                None => MachineProfile {
                    bmax_main: 0.0,
                    bmax_llc: 0.0,
                    llc_size: 32 * 1024 * 1024,
                    cache_line: 64,
                    nthreads,
                    fingerprint: "unprofiled".into(),
                },
            };
            let f = featext::extract(&m, &prof)?;
            println!("matrix_id,{}", FeatureVector::csv_header());
            println!("{},{}", m_id, f.csv_row());
        }
        Cmd::Profile { matrix, threads, profile, runs, iters } => {
            let nthreads = resolve_threads(threads);
            let (prof, _) = obtain_profile(profile.as_deref(), nthreads)?;
            let (m_id, m) = load_matrix(&matrix)?;
            let report = bounds::profile(&m, &prof, nthreads, BenchConfig { runs, iters })?;
            let out = serde_json::json!({
                "matrix_id": m_id,
                "fingerprint": prof.fingerprint,
                "nthreads": nthreads,
                "report": report,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Cmd::Classify { matrix, mode, model, threads, profile, runs, iters } => {
            let nthreads = resolve_threads(threads);
            let (m_id, m) = load_matrix(&matrix)?;
            let classes = match mode {
                ModeArg::Profile => {
                    let (prof, params) = obtain_profile(profile.as_deref(), nthreads)?;
                    let report =
                        bounds::profile(&m, &prof, nthreads, BenchConfig { runs, iters })?;
                    classify(&report, &params)
                }
                ModeArg::Feature => {
                    let model = load_model_opt(model.as_deref())?
                        .ok_or("feature mode requires --model")?;
                    let (prof, _) = match profile {
                        Some(ref p) => load_profile(p).map(|(a, b)| (a, b))?,
                        None => (
                            MachineProfile {
                                bmax_main: 0.0,
                                bmax_llc: 0.0,
                                llc_size: 32 * 1024 * 1024,
                                cache_line: 64,
                                nthreads,
                                fingerprint: "unprofiled".into(),
                            },
                            None,
                        ),
                    };
                    let f = featext::extract(&m, &prof)?;
                    clsfeature::predict(&model, &f)
                }
            };
            println!("{m_id}: {classes}");
        }
        Cmd::Train {
            corpus,
            out,
            features,
            max_depth,
            min_leaf,
            dump_samples,
            threads,
            profile,
            runs,
            iters,
        } => {
            let nthreads = resolve_threads(threads);
            let (prof, params) = obtain_profile(profile.as_deref(), nthreads)?;
            let cfg = BenchConfig { runs, iters };
            let samples = load_samples(&corpus, &prof, &params, nthreads, cfg)?;
            if let Some(p) = dump_samples {
                std::fs::write(&p, samples_to_csv(&samples))?;
            }
            let subset = parse_feature_subset(&features)?;
            let model =
                clsfeature::train(&samples, &subset, TreeParams { max_depth, min_leaf })?;
            save_model(&model, &out)?;
            println!("trained on {} samples, model written to {}", samples.len(), out.display());
        }
        Cmd::Evaluate {
            corpus,
            loo,
            features,
            max_depth,
            min_leaf,
            threads,
            profile,
            runs,
            iters,
        } => {
            if !loo {
                return Err("only --loo evaluation is supported".into());
            }
            let nthreads = resolve_threads(threads);
            let (prof, params) = obtain_profile(profile.as_deref(), nthreads)?;
            let cfg = BenchConfig { runs, iters };
            let samples = load_samples(&corpus, &prof, &params, nthreads, cfg)?;
            let subset = parse_feature_subset(&features)?;
            let report =
                clsfeature::loo_evaluate(&samples, &subset, TreeParams { max_depth, min_leaf })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Gridsearch { corpus, profile, threads, runs, iters } => {
            let nthreads = resolve_threads(threads);
            let (prof, _) = load_profile(&profile)?;
            let cfg = BenchConfig { runs, iters };
            let matrices = load_corpus(&corpus)?;
            let mut samples = Vec::with_capacity(matrices.len());
            for (id, m) in &matrices {
                eprintln!("measuring gains for {id}...");
                let report = bounds::profile(m, &prof, nthreads, cfg)?;
                let f = featext::extract(m, &prof)?;
                let gains = measure_gains(m, &f, nthreads, cfg)?;
                samples.push(GridSample { report, gains });
            }
            let best = spmvtune::clsprofile::grid_search(&samples, &Grid::default())?;
            save_profile(&profile, &prof, Some(&best))?;
            println!("{}", serde_json::to_string_pretty(&best)?);
            println!("thresholds written to {}", profile.display());
        }
        Cmd::Tune { matrix, mode, model, threads, profile, runs, iters } => {
            let nthreads = resolve_threads(threads);
            let (prof, params) = obtain_profile(profile.as_deref(), nthreads)?;
            let model = load_model_opt(model.as_deref())?;
            let (m_id, m) = load_matrix(&matrix)?;
            let cfg = TuneConfig {
                nthreads,
                bench: BenchConfig { runs, iters },
                plan: PlanConfig::default(),
                chunk: spmvtune::kernels::DEFAULT_CHUNK,
            };
            let r = tuner::tune(&m, mode.into(), model.as_ref(), &prof, &params, &cfg)?;
            let out = serde_json::json!({ "matrix_id": m_id, "result": r });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Cmd::Bench { corpus, out, mode, model, threads, profile, runs, iters } => {
            let nthreads = resolve_threads(threads);
            let (prof, params) = obtain_profile(profile.as_deref(), nthreads)?;
            let model = load_model_opt(model.as_deref())?;
            let matrices = load_corpus(&corpus)?;
            let cfg = TuneConfig {
                nthreads,
                bench: BenchConfig { runs, iters },
                plan: PlanConfig::default(),
                chunk: spmvtune::kernels::DEFAULT_CHUNK,
            };
            let report =
                tuner::run_corpus(&matrices, mode.into(), model.as_ref(), &prof, &params, &cfg);
            std::fs::write(&out, report.to_csv())?;
            let ok = report.rows.iter().filter(|r| r.result.is_ok()).count();
            println!(
                "{}/{} matrices tuned on {} ({} threads); report written to {}",
                ok,
                report.rows.len(),
                prof.fingerprint,
                nthreads,
                out.display()
            );
            if !report.all_ok() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
