//! Naive reference implementations used as independent test oracles. These
//! deliberately share no code with the optimized paths they are checked
//! against.

use crate::matcore::CsrMatrix;

/// Dense O(N^2) matvec: expands the matrix into a dense accumulation table
/// and multiplies row by row.
pub fn dense_matvec(m: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), m.ncols());
    let mut dense = vec![0.0f64; m.nrows() * m.ncols()];
    for i in 0..m.nrows() {
        for j in m.rowptr()[i]..m.rowptr()[i + 1] {
            dense[i * m.ncols() + m.colind()[j] as usize] += m.values()[j];
        }
    }
    (0..m.nrows())
        .map(|i| {
            let mut acc = 0.0;
            for c in 0..m.ncols() {
                acc += dense[i * m.ncols() + c] * x[c];
            }
            acc
        })
        .collect()
}

/// Per-row sum of |a_ij * x_j|: the natural scale for componentwise error
/// when a row sum cancels to near zero.
pub fn abs_row_sums(m: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| {
            let mut acc = 0.0;
            for j in m.rowptr()[i]..m.rowptr()[i + 1] {
                acc += (m.values()[j] * x[m.colind()[j] as usize]).abs();
            }
            acc
        })
        .collect()
}

/// Componentwise error relative to a per-component scale (usually the
/// absolute row sums, so ill-conditioned cancellation does not dominate).
pub fn max_scaled_error(got: &[f64], want: &[f64], scale: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    assert_eq!(got.len(), scale.len());
    got.iter()
        .zip(want)
        .zip(scale)
        .map(|((g, w), s)| {
            let s = s.max(w.abs());
            if s == 0.0 {
                (g - w).abs()
            } else {
                (g - w).abs() / s
            }
        })
        .fold(0.0, f64::max)
}

/// Componentwise relative comparison against an oracle result.
pub fn max_rel_error(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(g, w)| {
            let scale = g.abs().max(w.abs());
            if scale == 0.0 {
                0.0
            } else {
                (g - w).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}
