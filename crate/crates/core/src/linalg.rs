//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default relative singular-value cutoff used by pseudo-inversion.
pub const DEFAULT_RCOND: f64 = 1e-10;

/// Thin SVD with singular values sorted in descending order.
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Svd {
            u: DMatrix::zeros(r, 0),
            singular_values: Vec::new(),
            v_t: DMatrix::zeros(0, c),
        };
    }
    let svd = m.clone().svd(true, true);
    Svd {
        u: svd.u.expect("left singular vectors requested"),
        singular_values: svd.singular_values.iter().copied().collect(),
        v_t: svd.v_t.expect("right singular vectors requested"),
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    m.singular_values().iter().copied().collect()
}

/// Right inverse `G` of a full-row-rank `m x n` matrix, so that `M G = I_m`.
///
/// The rank test uses `s[m-1] > rcond * s[0]`; failure reports the spectrum.
pub fn right_pinv(m: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    let dec = svd(m);
    let s = &dec.singular_values;
    let full = rows <= cols
        && !s.is_empty()
        && s[0] > 0.0
        && s[rows - 1] > rcond * s[0]
        && s.iter().all(|v| v.is_finite());
    if !full {
        return Err(Error::RankDeficient {
            required: rows,
            singular_values: s.clone(),
        });
    }
    // G = V diag(1/s) U^T
    let mut g = DMatrix::zeros(cols, rows);
    for k in 0..rows {
        let inv = 1.0 / s[k];
        for i in 0..cols {
            let vik = dec.v_t[(k, i)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..rows {
                g[(i, j)] += vik * dec.u[(j, k)];
            }
        }
    }
    Ok(g)
}

/// Moore-Penrose pseudo-inverse with relative cutoff; never fails.
pub fn pinv(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let dec = svd(m);
    let s = &dec.singular_values;
    let mut g = DMatrix::zeros(cols, rows);
    let cutoff = s.first().copied().unwrap_or(0.0) * rcond;
    for (k, &sk) in s.iter().enumerate() {
        if sk <= cutoff || sk == 0.0 {
            continue;
        }
        let inv = 1.0 / sk;
        for i in 0..cols {
            let vik = dec.v_t[(k, i)] * inv;
            for j in 0..rows {
                g[(i, j)] += vik * dec.u[(j, k)];
            }
        }
    }
    g
}
