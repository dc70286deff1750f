//! Wave kernel signatures and per-vertex feature fields.

use nalgebra::DMatrix;

use crate::basis::EigenBasis;
use crate::error::{Error, Result};

/// Eigenvalues at or below this are treated as the constant mode.
pub const ZERO_EIGENVALUE: f64 = 1e-6;

/// Per-vertex features, one row per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    pub values: DMatrix<f64>,
    /// Rows have unit Euclidean norm.
    pub normalized: bool,
}

impl FeatureField {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature field has non-finite entries".into(),
            ));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Wave kernel signature with `d` log-spaced energies.
pub fn wks(basis: &EigenBasis, d: usize) -> Result<FeatureField> {
    let k = basis.k();
    if k < 3 {
        return Err(Error::Dimension(format!(
            "wave kernel signature needs k >= 3, got {k}"
        )));
    }
    if d < 2 {
        return Err(Error::Dimension(format!(
            "wave kernel signature needs d >= 2, got {d}"
        )));
    }
    let modes: Vec<usize> = (0..k)
        .filter(|&j| basis.lambda[j] > ZERO_EIGENVALUE)
        .collect();
    if modes.len() < 2 {
        return Err(Error::Dimension(
            "fewer than two non-zero eigenvalues".into(),
        ));
    }
    let log_l: Vec<f64> = modes.iter().map(|&j| basis.lambda[j].ln()).collect();
    let (lo, hi) = (log_l[0], log_l[log_l.len() - 1]);

    // energies e_t = lo + 2s + t * h with s = 7h, and e_{d-1} = hi - 2s
    let h = (hi - lo) / (d as f64 - 1.0 + 28.0);
    let sigma = 7.0 * h;
    if !(h > 0.0) {
        return Err(Error::Degenerate("eigenvalue range is empty".into()));
    }
    let energies: Vec<f64> = (0..d).map(|t| lo + 2.0 * sigma + t as f64 * h).collect();

    let n = basis.n();
    let mut out = DMatrix::zeros(n, d);
    for (t, e) in energies.iter().enumerate() {
        let weights: Vec<f64> = log_l
            .iter()
            .map(|l| (-(e - l) * (e - l) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        for (&j, w) in modes.iter().zip(&weights) {
            let w = w / total;
            let phi = basis.phi.column(j);
            for v in 0..n {
                out[(v, t)] += w * phi[v] * phi[v];
            }
        }
    }
    FeatureField::new(out)
}

/// Shifts and scales every column to zero mean and unit variance over the
/// vertices. Constant columns become zero.
pub fn standardize(f: &FeatureField) -> FeatureField {
    let mut values = f.values.clone();
    let n = values.nrows() as f64;
    for mut col in values.column_iter_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * mean.abs().max(f64::MIN_POSITIVE) {
            1.0 / sd
        } else {
            0.0
        };
        col.apply(|v| *v = (*v - mean) * scale);
    }
    FeatureField {
        values,
        normalized: false,
    }
}

/// Scales every row to unit norm.
pub fn row_normalize(f: &FeatureField) -> Result<FeatureField> {
    let mut values = f.values.clone();
    for (i, mut row) in values.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm > 0.0) {
            return Err(Error::Degenerate(format!("feature row {i} is zero")));
        }
        row /= norm;
    }
    Ok(FeatureField {
        values,
        normalized: true,
    })
}
