//! Truncated Laplace-Beltrami eigenbasis and spectral projections.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::eigen::{smallest_eigenpairs, LanczosOptions};
use crate::error::{check_dim, Error, Result};
use crate::io::{binary, read_bytes, write_bytes};
use crate::operators::Operators;

const CACHE_MAGIC: &[u8] = b"SPEC1";

/// First `k` eigenfunctions of `L phi = lambda M phi`, ascending.
///
/// Columns of `phi` are mass-orthonormal and signed so that the entry of
/// largest magnitude is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub phi: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub mass: DVector<f64>,
}

impl EigenBasis {
    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn k(&self) -> usize {
        self.phi.ncols()
    }

    /// Keeps the first `k` eigenpairs.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::Dimension(format!(
                "cannot truncate a {}-basis to {k}",
                self.k()
            )));
        }
        Ok(Self {
            phi: self.phi.columns(0, k).into_owned(),
            lambda: self.lambda.rows(0, k).into_owned(),
            mass: self.mass.clone(),
        })
    }

    /// `Phi^T M`, the mass-weighted pseudo-inverse (`k x n`).
    pub fn pinv(&self) -> DMatrix<f64> {
        let mut p = self.phi.transpose();
        for (j, m) in self.mass.iter().enumerate() {
            p.column_mut(j).scale_mut(*m);
        }
        p
    }

    /// Spectral coefficients `Phi^T M f` of an `n x d` vertex function.
    pub fn project(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("function rows", self.n(), f.nrows())?;
        let mut mf = f.clone();
        for (i, m) in self.mass.iter().enumerate() {
            mf.row_mut(i).scale_mut(*m);
        }
        Ok(self.phi.tr_mul(&mf))
    }

    /// Vertex function `Phi a` from `k x d` coefficients.
    pub fn unproject(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("coefficient rows", self.k(), a.nrows())?;
        Ok(&self.phi * a)
    }

    /// Largest deviation of `Phi^T M Phi` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.project(&self.phi).expect("square by construction");
        let k = self.k();
        (g - DMatrix::identity(k, k)).amax()
    }

    /// Writes `SPEC1 | n | k | phi (row-major) | lambda`, little-endian.
    pub fn write_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let (n, k) = (self.n(), self.k());
        let mut out = binary::header(CACHE_MAGIC, &[n as u64, k as u64]);
        binary::push_f64s(
            &mut out,
            (0..n)
                .flat_map(|i| (0..k).map(move |j| (i, j)))
                .map(|(i, j)| self.phi[(i, j)]),
        );
        binary::push_f64s(&mut out, self.lambda.iter().copied());
        write_bytes(path.as_ref(), &out)
    }

    /// Reads a cache file; the mass vector comes from the mesh operators.
    pub fn read_cache(path: impl AsRef<Path>, ops: &Operators) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_bytes(path)?;
        let mut r = binary::Reader::new(path, &bytes, CACHE_MAGIC)?;
        let n = r.u64()? as usize;
        let k = r.u64()? as usize;
        check_dim("cached basis rows", ops.n(), n)?;
        let phi = r.f64s(n * k)?;
        let lambda = r.f64s(k)?;
        r.finish()?;
        Ok(Self {
            phi: DMatrix::from_row_slice(n, k, &phi),
            lambda: DVector::from_vec(lambda),
            mass: DVector::from_column_slice(&ops.mass),
        })
    }
}

/// Largest relative residual `|L phi - lambda M phi| / |M phi|` over all pairs.
pub fn max_residual(ops: &Operators, basis: &EigenBasis) -> f64 {
    let lphi = ops.laplacian.mul_dense(&basis.phi);
    (0..basis.k())
        .map(|j| {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..basis.n() {
                let mphi = ops.mass[i] * basis.phi[(i, j)];
                num += (lphi[(i, j)] - basis.lambda[j] * mphi).powi(2);
                den += mphi * mphi;
            }
            (num / den).sqrt()
        })
        .fold(0.0, f64::max)
}

pub fn compute_eigenbasis(ops: &Operators, k: usize) -> Result<EigenBasis> {
    compute_eigenbasis_with(ops, k, &LanczosOptions::default())
}

pub fn compute_eigenbasis_with(
    ops: &Operators,
    k: usize,
    opts: &LanczosOptions,
) -> Result<EigenBasis> {
    let pairs = smallest_eigenpairs(&ops.laplacian, &ops.mass, k, opts)?;
    let mut phi = pairs.vectors;
    for mut col in phi.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    let basis = EigenBasis {
        phi,
        // the pencil is semi-definite; negative values are round-off
        lambda: DVector::from_iterator(pairs.values.len(), pairs.values.iter().map(|l| l.max(0.0))),
        mass: DVector::from_column_slice(&ops.mass),
    };
    let residual = max_residual(ops, &basis);
    if !(residual <= 1e-6) {
        return Err(Error::Convergence(format!(
            "eigenpair residual {residual:e} exceeds 1e-6"
        )));
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::build_operators;
    use crate::shapes;

    fn blob_basis(k: usize) -> (Operators, EigenBasis) {
        let m = shapes::blob(2).normalize().unwrap();
        let ops = build_operators(&m).unwrap();
        let b = compute_eigenbasis(&ops, k).unwrap();
        (ops, b)
    }

    #[test]
    fn basis_invariants() {
        let (ops, b) = blob_basis(30);
        assert!(b.orthonormality_error() < 1e-8);
        assert!(b.lambda[0].abs() <= 1e-6);
        assert!(b.lambda.as_slice().windows(2).all(|w| w[0] <= w[1]));
        assert!(max_residual(&ops, &b) <= 1e-6);
        let area = ops.total_area();
        for i in 0..b.n() {
            assert!((b.phi[(i, 0)] - 1.0 / area.sqrt()).abs() < 1e-6);
        }
        for col in b.phi.column_iter() {
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
    }

    #[test]
    fn project_unproject() {
        let (ops, b) = blob_basis(20);
        let e = b.project(&b.phi.columns(5, 1).into_owned()).unwrap();
        for j in 0..20 {
            assert!((e[(j, 0)] - if j == 5 { 1.0 } else { 0.0 }).abs() < 1e-8);
        }
        let c = DMatrix::from_element(b.n(), 1, 2.5);
        let pc = b.project(&c).unwrap();
        assert!((pc[(0, 0)] - 2.5 * ops.total_area().sqrt()).abs() < 1e-6);
        assert!(pc.rows(1, 19).amax() < 1e-6);

        let a = DMatrix::from_fn(20, 3, |i, j| ((i * 3 + j) as f64).sin());
        let back = b.project(&b.unproject(&a).unwrap()).unwrap();
        assert!((back - &a).amax() < 1e-8);
        assert_eq!(
            b.unproject(&DMatrix::zeros(20, 2)).unwrap(),
            DMatrix::zeros(b.n(), 2)
        );

        // low-pass residual is M-orthogonal to the basis
        let f = DMatrix::from_fn(b.n(), 2, |i, j| ((i as f64) * 0.1 + j as f64).cos());
        let low = b.unproject(&b.project(&f).unwrap()).unwrap();
        let resid = &f - low;
        assert!(b.project(&resid).unwrap().amax() < 1e-6);

        assert!(matches!(
            b.project(&DMatrix::zeros(b.n() + 1, 1)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            b.project(&DMatrix::zeros(b.n() - 1, 1)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            b.unproject(&DMatrix::zeros(19, 1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn k_equal_n_is_rejected() {
        let ops = build_operators(&shapes::icosphere(1)).unwrap();
        assert!(matches!(
            compute_eigenbasis(&ops, 42),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn cache_roundtrip() {
        let (ops, b) = blob_basis(10);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("blob.spec");
        b.write_cache(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..5], b"SPEC1");
        assert_eq!(
            u64::from_le_bytes(bytes[5..13].try_into().unwrap()),
            b.n() as u64
        );
        assert_eq!(bytes.len(), 5 + 16 + 8 * (b.n() * 10 + 10));
        assert_eq!(EigenBasis::read_cache(&p, &ops).unwrap(), b);
    }
}
