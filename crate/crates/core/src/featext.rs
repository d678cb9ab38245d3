//! Structural feature extraction: per-row nonzero counts, column spans,
//! scatter, clustering and estimated cache-missing gaps, aggregated with
//! population statistics over nonempty rows.

use crate::bounds::{working_set_bytes, MachineProfile, VALUE_BYTES};
use crate::matcore::CsrMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeatError {
    #[error("matrix has no nonzero elements")]
    EmptyMatrix,
}

/// Feature identifiers, in the canonical CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureId {
    Size,
    Density,
    NnzMin,
    NnzMax,
    NnzAvg,
    NnzSd,
    BwMin,
    BwMax,
    BwAvg,
    BwSd,
    ScatterAvg,
    ScatterSd,
    ClusteringAvg,
    MissesAvg,
}

pub const ALL_FEATURES: [FeatureId; 14] = [
    FeatureId::Size,
    FeatureId::Density,
    FeatureId::NnzMin,
    FeatureId::NnzMax,
    FeatureId::NnzAvg,
    FeatureId::NnzSd,
    FeatureId::BwMin,
    FeatureId::BwMax,
    FeatureId::BwAvg,
    FeatureId::BwSd,
    FeatureId::ScatterAvg,
    FeatureId::ScatterSd,
    FeatureId::ClusteringAvg,
    FeatureId::MissesAvg,
];

impl FeatureId {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureId::Size => "size",
            FeatureId::Density => "density",
            FeatureId::NnzMin => "nnz_min",
            FeatureId::NnzMax => "nnz_max",
            FeatureId::NnzAvg => "nnz_avg",
            FeatureId::NnzSd => "nnz_sd",
            FeatureId::BwMin => "bw_min",
            FeatureId::BwMax => "bw_max",
            FeatureId::BwAvg => "bw_avg",
            FeatureId::BwSd => "bw_sd",
            FeatureId::ScatterAvg => "scatter_avg",
            FeatureId::ScatterSd => "scatter_sd",
            FeatureId::ClusteringAvg => "clustering_avg",
            FeatureId::MissesAvg => "misses_avg",
        }
    }

    pub fn from_name(name: &str) -> Option<FeatureId> {
        // "dispersion" is treated as a synonym for scatter.
        let name = name.replace("dispersion", "scatter");
        ALL_FEATURES.iter().copied().find(|f| f.name() == name)
    }

    pub fn index(&self) -> usize {
        ALL_FEATURES.iter().position(|f| f == self).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureVector {
    /// 1 if the working set fits in the LLC, else 0.
    pub size_flag: u8,
    pub density: f64,
    pub nnz_min: f64,
    pub nnz_max: f64,
    pub nnz_avg: f64,
    pub nnz_sd: f64,
    pub bw_min: f64,
    pub bw_max: f64,
    pub bw_avg: f64,
    pub bw_sd: f64,
    pub scatter_avg: f64,
    pub scatter_sd: f64,
    pub clustering_avg: f64,
    pub misses_avg: f64,
}

impl FeatureVector {
    pub fn get(&self, id: FeatureId) -> f64 {
        match id {
            FeatureId::Size => self.size_flag as f64,
            FeatureId::Density => self.density,
            FeatureId::NnzMin => self.nnz_min,
            FeatureId::NnzMax => self.nnz_max,
            FeatureId::NnzAvg => self.nnz_avg,
            FeatureId::NnzSd => self.nnz_sd,
            FeatureId::BwMin => self.bw_min,
            FeatureId::BwMax => self.bw_max,
            FeatureId::BwAvg => self.bw_avg,
            FeatureId::BwSd => self.bw_sd,
            FeatureId::ScatterAvg => self.scatter_avg,
            FeatureId::ScatterSd => self.scatter_sd,
            FeatureId::ClusteringAvg => self.clustering_avg,
            FeatureId::MissesAvg => self.misses_avg,
        }
    }

    pub fn is_finite(&self) -> bool {
        ALL_FEATURES.iter().all(|&f| self.get(f).is_finite())
    }

    pub fn csv_header() -> String {
        ALL_FEATURES.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
    }

    pub fn csv_row(&self) -> String {
        ALL_FEATURES
            .iter()
            .map(|&f| format!("{:.17e}", self.get(f)))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Streaming min/max/mean/sd (Welford) over one pass.
struct Stats {
    min: f64,
    max: f64,
    sum: f64,
    mean: f64,
    m2: f64,
    n: usize,
}

impl Stats {
    fn new() -> Self {
        Stats { min: f64::INFINITY, max: f64::NEG_INFINITY, sum: 0.0, mean: 0.0, m2: 0.0, n: 0 }
    }

    fn push(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        self.sum += v;
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn avg(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Population standard deviation.
    fn sd(&self) -> f64 {
        (self.m2 / self.n as f64).max(0.0).sqrt()
    }
}

/// Extracts all features in one pass over rowptr plus one pass over colind.
/// Per-row quantities are computed over nonempty rows only.
pub fn extract(m: &CsrMatrix, prof: &MachineProfile) -> Result<FeatureVector, FeatError> {
    if m.nnz() == 0 {
        return Err(FeatError::EmptyMatrix);
    }
    let line_elems = (prof.cache_line / VALUE_BYTES).max(1) as u32;
    let mut nnz = Stats::new();
    let mut bw = Stats::new();
    let mut scatter = Stats::new();
    let mut clustering_sum = 0.0f64;
    let mut misses_sum = 0.0f64;
    for i in 0..m.nrows() {
        let lo = m.rowptr()[i];
        let hi = m.rowptr()[i + 1];
        if lo == hi {
            continue;
        }
        let len = hi - lo;
        let row = &m.colind()[lo..hi];
        // Inclusive span, so singleton rows get bw = 1 and scatter stays
        // defined.
        let span = (row[len - 1] - row[0] + 1) as f64;
        let mut ngroups = 1usize;
        let mut misses = 0usize;
        for w in row.windows(2) {
            let gap = w[1] - w[0];
            if gap > 1 {
                ngroups += 1;
            }
            if gap > line_elems {
                misses += 1;
            }
        }
        nnz.push(len as f64);
        bw.push(span);
        scatter.push(len as f64 / span);
        clustering_sum += ngroups as f64 / len as f64;
        misses_sum += misses as f64;
    }
    let nrows_ne = nnz.n as f64;
    Ok(FeatureVector {
        size_flag: u8::from(working_set_bytes(m) <= prof.llc_size),
        density: m.nnz() as f64 / (m.nrows() as f64 * m.ncols() as f64),
        nnz_min: nnz.min,
        nnz_max: nnz.max,
        nnz_avg: nnz.avg(),
        nnz_sd: nnz.sd(),
        bw_min: bw.min,
        bw_max: bw.max,
        bw_avg: bw.avg(),
        bw_sd: bw.sd(),
        scatter_avg: scatter.avg(),
        scatter_sd: scatter.sd(),
        clustering_avg: clustering_sum / nrows_ne,
        misses_avg: misses_sum / nrows_ne,
    })
}

/// Independent naive re-implementation used as the extraction oracle:
/// per-row loops, no streaming statistics.
pub fn extract_naive(m: &CsrMatrix, prof: &MachineProfile) -> Result<FeatureVector, FeatError> {
    if m.nnz() == 0 {
        return Err(FeatError::EmptyMatrix);
    }
    let line_elems = prof.cache_line / VALUE_BYTES;
    let rows: Vec<&[u32]> = (0..m.nrows())
        .map(|i| &m.colind()[m.rowptr()[i]..m.rowptr()[i + 1]])
        .filter(|r| !r.is_empty())
        .collect();
    let nnzs: Vec<f64> = rows.iter().map(|r| r.len() as f64).collect();
    let bws: Vec<f64> = rows
        .iter()
        .map(|r| (r[r.len() - 1] as f64) - (r[0] as f64) + 1.0)
        .collect();
    let scatters: Vec<f64> = nnzs.iter().zip(&bws).map(|(n, b)| n / b).collect();
    let clusterings: Vec<f64> = rows
        .iter()
        .map(|r| {
            let mut g = 1usize;
            for k in 1..r.len() {
                if r[k] - r[k - 1] > 1 {
                    g += 1;
                }
            }
            g as f64 / r.len() as f64
        })
        .collect();
    let misses: Vec<f64> = rows
        .iter()
        .map(|r| {
            let mut c = 0usize;
            for k in 1..r.len() {
                if (r[k] - r[k - 1]) as usize > line_elems {
                    c += 1;
                }
            }
            c as f64
        })
        .collect();
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let a = avg(v);
        (v.iter().map(|x| (x - a) * (x - a)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let minv = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let maxv = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FeatureVector {
        size_flag: u8::from(working_set_bytes(m) <= prof.llc_size),
        density: m.nnz() as f64 / (m.nrows() as f64 * m.ncols() as f64),
        nnz_min: minv(&nnzs),
        nnz_max: maxv(&nnzs),
        nnz_avg: avg(&nnzs),
        nnz_sd: sd(&nnzs),
        bw_min: minv(&bws),
        bw_max: maxv(&bws),
        bw_avg: avg(&bws),
        bw_sd: sd(&bws),
        scatter_avg: avg(&scatters),
        scatter_sd: sd(&scatters),
        clustering_avg: avg(&clusterings),
        misses_avg: avg(&misses),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{GeneratorKind, GeneratorSpec};

    fn prof() -> MachineProfile {
        MachineProfile {
            bmax_main: 1e11,
            bmax_llc: 2e11,
            llc_size: 32 * 1024 * 1024,
            cache_line: 64,
            nthreads: 4,
            fingerprint: "test".into(),
        }
    }

    #[test]
    fn nnz_stats_on_three_rows() {
        // Rows of lengths 1, 2, 3: avg 2, population sd sqrt(2/3).
        let m = CsrMatrix::new(
            3,
            3,
            vec![0, 1, 3, 6],
            vec![0, 0, 1, 0, 1, 2],
            vec![1.0; 6],
        )
        .unwrap();
        let f = extract(&m, &prof()).unwrap();
        assert_eq!(f.nnz_min, 1.0);
        assert_eq!(f.nnz_max, 3.0);
        assert_eq!(f.nnz_avg, 2.0);
        assert!((f.nnz_sd - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn worked_row_example() {
        // colind [4,5,6,20]: bw 17, ngroups 2, clustering 0.5, one gap (14)
        // exceeding the 8 elements of a 64-byte line.
        let m =
            CsrMatrix::new(1, 21, vec![0, 4], vec![4, 5, 6, 20], vec![1.0; 4]).unwrap();
        let f = extract(&m, &prof()).unwrap();
        assert_eq!(f.bw_avg, 17.0);
        assert!((f.scatter_avg - 4.0 / 17.0).abs() < 1e-15);
        assert_eq!(f.clustering_avg, 0.5);
        assert_eq!(f.misses_avg, 1.0);
    }

    #[test]
    fn diagonal_matrix_features() {
        let m = CsrMatrix::new(4, 4, vec![0, 1, 2, 3, 4], vec![0, 1, 2, 3], vec![1.0; 4])
            .unwrap();
        let f = extract(&m, &prof()).unwrap();
        assert_eq!(f.bw_avg, 1.0);
        assert_eq!(f.scatter_avg, 1.0);
        assert_eq!(f.clustering_avg, 1.0);
        assert_eq!(f.misses_avg, 0.0);
    }

    #[test]
    fn empty_matrix_rejected() {
        let m = CsrMatrix::new(2, 2, vec![0, 0, 0], vec![], vec![]).unwrap();
        assert_eq!(extract(&m, &prof()), Err(FeatError::EmptyMatrix));
    }

    #[test]
    fn empty_rows_excluded_from_averages() {
        let m = CsrMatrix::new(3, 3, vec![0, 2, 2, 4], vec![0, 1, 0, 2], vec![1.0; 4])
            .unwrap();
        let f = extract(&m, &prof()).unwrap();
        assert_eq!(f.nnz_avg, 2.0); // 2 nonempty rows, 4 nonzeros
    }

    #[test]
    fn streaming_matches_naive_oracle() {
        for seed in 0..20 {
            for kind in [
                GeneratorKind::Banded { bandwidth: 5 },
                GeneratorKind::UniformRandom,
                GeneratorKind::PowerLawRows { exponent: 1.8 },
                GeneratorKind::BlockDense { block_size: 6 },
            ] {
                let m = CsrMatrix::generate(&GeneratorSpec {
                    kind,
                    nrows: 80,
                    ncols: 90,
                    target_nnz: 350,
                    seed,
                })
                .unwrap();
                let a = extract(&m, &prof()).unwrap();
                let b = extract_naive(&m, &prof()).unwrap();
                for id in ALL_FEATURES {
                    let (u, v) = (a.get(id), b.get(id));
                    let scale = u.abs().max(v.abs()).max(1.0);
                    assert!((u - v).abs() <= 1e-12 * scale, "{}: {u} vs {v}", id.name());
                }
            }
        }
    }

    #[test]
    fn scatter_never_exceeds_one() {
        let m = CsrMatrix::generate(&GeneratorSpec {
            kind: GeneratorKind::UniformRandom,
            nrows: 60,
            ncols: 60,
            target_nnz: 500,
            seed: 5,
        })
        .unwrap();
        let f = extract(&m, &prof()).unwrap();
        assert!(f.scatter_avg <= 1.0 + 1e-15);
        assert!(f.scatter_avg > 0.0);
    }

    #[test]
    fn feature_names_round_trip() {
        for id in ALL_FEATURES {
            assert_eq!(FeatureId::from_name(id.name()), Some(id));
        }
        assert_eq!(FeatureId::from_name("dispersion_avg"), Some(FeatureId::ScatterAvg));
        assert_eq!(FeatureId::from_name("nope"), None);
    }
}
