//! Functional maps: regularized estimation from spectral descriptors, conversion
//! to and from point maps, and the structural plus coupling loss.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::EigenBasis;
use crate::correspondence::PointMap;
use crate::descriptors::ZERO_EIGENVALUE;
use crate::error::{check_dim, Error, Result};
use crate::io::{binary, read_bytes, write_bytes};
use crate::spatial::KdTree;

const FMAP_MAGIC: &[u8] = b"FMAP1";

/// `k_y x k_x` matrix taking spectral coefficients on X to coefficients on Y.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap {
    pub c: DMatrix<f64>,
}

impl FunctionalMap {
    pub fn new(c: DMatrix<f64>) -> Self {
        Self { c }
    }

    pub fn identity(k: usize) -> Self {
        Self::new(DMatrix::identity(k, k))
    }

    pub fn k_x(&self) -> usize {
        self.c.ncols()
    }

    pub fn k_y(&self) -> usize {
        self.c.nrows()
    }

    /// Writes `FMAP1 | k_y | k_x | c (row-major)`, little-endian.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let (ky, kx) = self.c.shape();
        let mut out = binary::header(FMAP_MAGIC, &[ky as u64, kx as u64]);
        binary::push_f64s(
            &mut out,
            (0..ky)
                .flat_map(|i| (0..kx).map(move |j| (i, j)))
                .map(|(i, j)| self.c[(i, j)]),
        );
        write_bytes(path.as_ref(), &out)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_bytes(path)?;
        let mut r = binary::Reader::new(path, &bytes, FMAP_MAGIC)?;
        let ky = r.u64()? as usize;
        let kx = r.u64()? as usize;
        let c = r.f64s(ky * kx)?;
        r.finish()?;
        Ok(Self::new(DMatrix::from_row_slice(ky, kx, &c)))
    }
}

/// Resolvent penalty `M[i][j]` between eigenvalue `i` of Y and `j` of X.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventMask {
    pub m: DMatrix<f64>,
    pub gamma: f64,
}

impl ResolventMask {
    /// The mask for the opposite direction.
    pub fn transposed(&self) -> Self {
        Self {
            m: self.m.transpose(),
            gamma: self.gamma,
        }
    }
}

pub fn resolvent_mask(lambda_x: &[f64], lambda_y: &[f64], gamma: f64) -> Result<ResolventMask> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if let Some(l) = lambda_x
        .iter()
        .chain(lambda_y)
        .find(|l| !(**l >= -ZERO_EIGENVALUE))
    {
        return Err(Error::InvalidArgument(format!("negative eigenvalue {l}")));
    }
    let parts = |l: f64| {
        let l = l.max(0.0);
        let a = l.powf(gamma);
        let b = l.powf(2.0 * gamma) + 1.0;
        (a / b, 1.0 / b)
    };
    let px: Vec<_> = lambda_x.iter().map(|&l| parts(l)).collect();
    let py: Vec<_> = lambda_y.iter().map(|&l| parts(l)).collect();
    let m = DMatrix::from_fn(lambda_y.len(), lambda_x.len(), |i, j| {
        (py[i].0 - px[j].0).powi(2) + (py[i].1 - px[j].1).powi(2)
    });
    Ok(ResolventMask { m, gamma })
}

/// Per-row normal equations `(A A^T + lambda diag(M_i)) c_i = A b_i`, factored.
struct RowSystems {
    factors: Vec<Cholesky<f64, nalgebra::Dyn>>,
}

fn factor_rows(a: &DMatrix<f64>, mask: &DMatrix<f64>, lambda_reg: f64) -> Result<RowSystems> {
    let aat = a * a.transpose();
    let scale = aat.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut factors = Vec::with_capacity(mask.nrows());
    for i in 0..mask.nrows() {
        let mut h = aat.clone();
        for j in 0..h.nrows() {
            h[(j, j)] += lambda_reg * mask[(i, j)];
        }
        let chol = Cholesky::new(h).ok_or_else(|| {
            Error::Singular(format!(
                "functional map row {i}: normal equations are not positive definite"
            ))
        })?;
        // a numerically singular system factors but with a vanishing pivot
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v * v));
        if min_pivot <= 1e-13 * scale {
            return Err(Error::Singular(format!(
                "functional map row {i}: pivot {min_pivot:e} below tolerance"
            )));
        }
        factors.push(chol);
    }
    Ok(RowSystems { factors })
}

/// Minimizes `|C A - B|^2 + lambda_reg * sum_ij C_ij^2 M_ij` row by row.
///
/// `a` is `k_x x d`, `b` is `k_y x d`; the result is `k_y x k_x`.
pub fn solve_fmap(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    mask: &ResolventMask,
    lambda_reg: f64,
) -> Result<FunctionalMap> {
    Ok(solve_fmap_factored(a, b, mask, lambda_reg)?.0)
}

fn solve_fmap_factored(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    mask: &ResolventMask,
    lambda_reg: f64,
) -> Result<(FunctionalMap, RowSystems)> {
    check_dim("descriptor dimension", a.ncols(), b.ncols())?;
    check_dim("mask rows", b.nrows(), mask.m.nrows())?;
    check_dim("mask columns", a.nrows(), mask.m.ncols())?;
    if !(lambda_reg >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda_reg must be >= 0, got {lambda_reg}"
        )));
    }
    let sys = factor_rows(a, &mask.m, lambda_reg)?;
    let rhs = a * b.transpose(); // column i is A b_i
    let mut c = DMatrix::zeros(b.nrows(), a.nrows());
    for (i, chol) in sys.factors.iter().enumerate() {
        let ci = chol.solve(&rhs.column(i).into_owned());
        c.row_mut(i).copy_from(&ci.transpose());
    }
    Ok((FunctionalMap::new(c), sys))
}

/// A solved map together with what its adjoint needs.
pub struct FmapSolve {
    pub map: FunctionalMap,
    sys: RowSystems,
}

impl FmapSolve {
    pub fn new(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        mask: &ResolventMask,
        lambda_reg: f64,
    ) -> Result<Self> {
        let (map, sys) = solve_fmap_factored(a, b, mask, lambda_reg)?;
        Ok(Self { map, sys })
    }

    /// Pulls `dL/dC` back to `(dL/dA, dL/dB)` by implicit differentiation of the
    /// row systems.
    pub fn backward(
        &self,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        dc: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let c = &self.map.c;
        let mut u = DMatrix::zeros(c.nrows(), c.ncols());
        for (i, chol) in self.sys.factors.iter().enumerate() {
            let ui = chol.solve(&dc.row(i).transpose());
            u.row_mut(i).copy_from(&ui.transpose());
        }
        let db = &u * a;
        let sym = u.tr_mul(c) + c.tr_mul(&u);
        let da = u.tr_mul(b) - sym * a;
        (da, db)
    }
}

/// Hard map `Y -> X` by nearest neighbours of the rows of `Phi_Y C` among the rows of `Phi_X`.
pub fn fmap_to_pointmap(
    c: &FunctionalMap,
    basis_x: &EigenBasis,
    basis_y: &EigenBasis,
) -> Result<PointMap> {
    check_dim("functional map rows", basis_y.k(), c.k_y())?;
    check_dim("functional map columns", basis_x.k(), c.k_x())?;
    let tree = KdTree::from_rows(&basis_x.phi);
    let query = &basis_y.phi * &c.c;
    Ok(PointMap::Hard {
        indices: tree
            .nearest_rows(&query)
            .into_iter()
            .map(|(i, _)| i)
            .collect(),
        n_dst: basis_x.n(),
    })
}

/// `Phi_Y^+ Pi_YX Phi_X`.
pub fn pointmap_to_fmap(
    pi_yx: &PointMap,
    basis_x: &EigenBasis,
    basis_y: &EigenBasis,
) -> Result<FunctionalMap> {
    check_dim("point map rows", basis_y.n(), pi_yx.n_src())?;
    check_dim("point map columns", basis_x.n(), pi_yx.n_dst())?;
    let pulled = pi_yx.pull(&basis_x.phi)?;
    Ok(FunctionalMap::new(basis_y.project(&pulled)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralWeights {
    pub bij: f64,
    pub orth: f64,
    pub structural: f64,
    pub couple: f64,
}

impl Default for SpectralWeights {
    fn default() -> Self {
        Self {
            bij: 1.0,
            orth: 1.0,
            structural: 1.0,
            couple: 1.0,
        }
    }
}

impl SpectralWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("bij", self.bij),
            ("orth", self.orth),
            ("structural", self.structural),
            ("couple", self.couple),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "spectral weight {name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Value, terms and gradients of the spectral loss.
///
/// The point maps enter only through their spectral images
/// `P_XY = Phi_Y^+ Pi_YX Phi_X` and `P_YX = Phi_X^+ Pi_XY Phi_Y`; the gradients
/// with respect to those are returned. The gradient with respect to a dense
/// `Pi_YX` is `M_Y Phi_Y d_p_xy Phi_X^T`.
#[derive(Debug, Clone)]
pub struct SpectralLoss {
    pub total: f64,
    pub bij: f64,
    pub orth: f64,
    pub couple: f64,
    pub d_cxy: DMatrix<f64>,
    pub d_cyx: DMatrix<f64>,
    pub d_p_xy: DMatrix<f64>,
    pub d_p_yx: DMatrix<f64>,
}

/// `|P - I|^2` and its gradient `2 (P - I)` for square `P`.
fn dev_from_identity(p: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let mut r = p.clone();
    for i in 0..r.nrows().min(r.ncols()) {
        r[(i, i)] -= 1.0;
    }
    (r.norm_squared(), r * 2.0)
}

/// Structural (bijectivity, per-map orthogonality) and coupling loss.
///
/// The coupling compares each map with the spectral image of the opposite
/// point map: `C_XY` against `Phi_Y^+ Pi_YX Phi_X` and `C_YX` against
/// `Phi_X^+ Pi_XY Phi_Y`.
pub fn spectral_loss(
    c_xy: &FunctionalMap,
    c_yx: &FunctionalMap,
    pi_xy: &PointMap,
    pi_yx: &PointMap,
    basis_x: &EigenBasis,
    basis_y: &EigenBasis,
    w: &SpectralWeights,
) -> Result<SpectralLoss> {
    check_dim("Pi_XY rows", basis_x.n(), pi_xy.n_src())?;
    check_dim("Pi_XY columns", basis_y.n(), pi_xy.n_dst())?;
    let p_xy = pointmap_to_fmap(pi_yx, basis_x, basis_y)?;
    let p_yx = pointmap_to_fmap(pi_xy, basis_y, basis_x)?;
    spectral_terms(c_xy, c_yx, &p_xy.c, &p_yx.c, w)
}

pub(crate) fn spectral_terms(
    c_xy: &FunctionalMap,
    c_yx: &FunctionalMap,
    p_xy: &DMatrix<f64>,
    p_yx: &DMatrix<f64>,
    w: &SpectralWeights,
) -> Result<SpectralLoss> {
    let (ky, kx) = p_xy.shape();
    check_dim("C_XY rows", ky, c_xy.k_y())?;
    check_dim("C_XY columns", kx, c_xy.k_x())?;
    check_dim("C_YX rows", kx, c_yx.k_y())?;
    check_dim("C_YX columns", ky, c_yx.k_x())?;
    let (a, b) = (&c_xy.c, &c_yx.c);

    let (bij1, g1) = dev_from_identity(&(a * b));
    let (bij2, g2) = dev_from_identity(&(b * a));
    let bij = bij1 + bij2;
    let sb = w.structural * w.bij;
    let mut d_a = (&g1 * b.transpose() + b.transpose() * &g2) * sb;
    let mut d_b = (a.transpose() * &g1 + &g2 * a.transpose()) * sb;

    // d|A^T A - I|^2 / dA = 2 A G with G = 2 (A^T A - I)
    let (o1, h1) = dev_from_identity(&a.tr_mul(a));
    let (o2, h2) = dev_from_identity(&b.tr_mul(b));
    let orth = o1 + o2;
    let so = w.structural * w.orth;
    d_a += (a * &h1) * (2.0 * so);
    d_b += (b * &h2) * (2.0 * so);

    let r_xy = a - p_xy;
    let r_yx = b - p_yx;
    let couple = r_xy.norm_squared() + r_yx.norm_squared();
    d_a += &r_xy * (2.0 * w.couple);
    d_b += &r_yx * (2.0 * w.couple);

    Ok(SpectralLoss {
        total: w.structural * (w.bij * bij + w.orth * orth) + w.couple * couple,
        bij,
        orth,
        couple,
        d_cxy: d_a,
        d_cyx: d_b,
        d_p_xy: r_xy * (-2.0 * w.couple),
        d_p_yx: r_yx * (-2.0 * w.couple),
    })
}

/// `diag(mass) * phi`.
pub(crate) fn weighted(phi: &DMatrix<f64>, mass: &DVector<f64>) -> DMatrix<f64> {
    let mut out = phi.clone();
    for (i, m) in mass.iter().enumerate() {
        out.row_mut(i).scale_mut(*m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::compute_eigenbasis;
    use crate::operators::build_operators;
    use crate::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn zero_mask(kx: usize, ky: usize) -> ResolventMask {
        ResolventMask {
            m: DMatrix::zeros(ky, kx),
            gamma: 0.5,
        }
    }

    #[test]
    fn mask_examples() {
        let m = resolvent_mask(&[0.0, 1.0], &[0.0, 1.0], 0.5).unwrap();
        assert_eq!(m.m[(0, 0)], 0.0);
        assert_eq!(m.m[(1, 1)], 0.0);
        // lambda = 0: (0, 1); lambda = 1: (1/2, 1/2)
        assert!((m.m[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((m.m[(1, 0)] - 0.5).abs() < 1e-15);
        let t = resolvent_mask(&[0.0, 1.0, 4.0], &[2.0, 3.0], 0.5).unwrap();
        let u = resolvent_mask(&[2.0, 3.0], &[0.0, 1.0, 4.0], 0.5).unwrap();
        assert_eq!(t.transposed(), u);
        assert!(t.m.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn identity_when_descriptors_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 6, 10);
        let c = solve_fmap(&a, &a, &zero_mask(6, 6), 0.0).unwrap();
        assert!((c.c - DMatrix::<f64>::identity(6, 6)).norm() < 1e-8);
    }

    #[test]
    fn planted_map_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 5, 8);
        let q = random(&mut rng, 5, 5);
        let b = &q * &a;
        let c = solve_fmap(&a, &b, &zero_mask(5, 5), 0.0).unwrap();
        assert!((c.c - q).norm() <= 1e-8);
    }

    #[test]
    fn heavy_regularization_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 4, 9);
        let b = random(&mut rng, 4, 9);
        let mask = ResolventMask {
            m: DMatrix::from_element(4, 4, 0.5),
            gamma: 0.5,
        };
        let c = solve_fmap(&a, &b, &mask, 1e12).unwrap();
        assert!(c.c.amax() < 1e-9);
    }

    #[test]
    fn rank_deficient_rows_are_singular() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let r = solve_fmap(&a, &a, &zero_mask(2, 2), 0.0);
        assert!(matches!(r, Err(Error::Singular(_))));
    }

    #[test]
    fn solution_is_the_global_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 5, 7);
        let b = random(&mut rng, 4, 7);
        let mask = resolvent_mask(&[0.0, 1.0, 2.0, 3.0, 5.0], &[0.0, 1.5, 2.5, 4.0], 0.5).unwrap();
        let obj = |c: &DMatrix<f64>| {
            (c * &a - &b).norm_squared() + 3.0 * c.component_mul(c).component_mul(&mask.m).sum()
        };
        let c = solve_fmap(&a, &b, &mask, 3.0).unwrap().c;
        let best = obj(&c);
        for _ in 0..100 {
            let p = random(&mut rng, 4, 5) * 1e-3;
            assert!(obj(&(&c + p)) - best >= 0.0);
        }
    }

    #[test]
    fn solve_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(&mut rng, 4, 6);
        let b = random(&mut rng, 3, 6);
        let mask = resolvent_mask(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.5, 2.5], 0.5).unwrap();
        let g = random(&mut rng, 3, 4);
        let f =
            |a: &DMatrix<f64>, b: &DMatrix<f64>| solve_fmap(a, b, &mask, 2.0).unwrap().c.dot(&g);
        let s = FmapSolve::new(&a, &b, &mask, 2.0).unwrap();
        let (da, db) = s.backward(&a, &b, &g);
        let h = 1e-6;
        for (m, grad, is_a) in [(&a, &da, true), (&b, &db, false)] {
            for idx in 0..m.len() {
                let mut p = m.clone();
                let mut q = m.clone();
                p[idx] += h;
                q[idx] -= h;
                let fd = if is_a {
                    (f(&p, &b) - f(&q, &b)) / (2.0 * h)
                } else {
                    (f(&a, &p) - f(&a, &q)) / (2.0 * h)
                };
                assert!(
                    (fd - grad[idx]).abs() <= 1e-6 * fd.abs().max(1.0),
                    "{fd} vs {}",
                    grad[idx]
                );
            }
        }
    }

    fn sphere_basis(k: usize) -> EigenBasis {
        let m = shapes::blob(2).normalize().unwrap();
        compute_eigenbasis(&build_operators(&m).unwrap(), k).unwrap()
    }

    #[test]
    fn conversions_on_identical_meshes() {
        let b = sphere_basis(12);
        let n = b.n();
        let map = fmap_to_pointmap(&FunctionalMap::identity(12), &b, &b).unwrap();
        assert_eq!(
            map.as_hard().unwrap(),
            (0..n).collect::<Vec<_>>().as_slice()
        );

        let c = pointmap_to_fmap(&PointMap::identity(n), &b, &b).unwrap();
        assert!((c.c - DMatrix::<f64>::identity(12, 12)).norm() < 1e-8);

        // every row maps to the same blend of X, so Y only sees constants
        let uniform = PointMap::Soft(DMatrix::from_element(n, n, 1.0 / n as f64));
        let c = pointmap_to_fmap(&uniform, &b, &b).unwrap();
        assert!(c.c.rows(1, 11).amax() < 1e-8);
        assert!(c.c[(0, 0)].abs() > 0.5);
        // area-weighted rows average every eigenfunction to zero except the constant
        let area = b.mass.sum();
        let weighted = PointMap::Soft(DMatrix::from_fn(n, n, |_, j| b.mass[j] / area));
        let c = pointmap_to_fmap(&weighted, &b, &b).unwrap();
        assert!((c.c[(0, 0)] - 1.0).abs() < 1e-8);
        c.c.iter().skip(1).for_each(|v| assert!(v.abs() < 1e-8));

        let one = b.truncate(1).unwrap();
        let map = fmap_to_pointmap(&FunctionalMap::identity(1), &one, &one).unwrap();
        assert!(map.as_hard().unwrap().iter().all(|&i| i == 0));
    }

    #[test]
    fn permuted_copy_recovers_the_permutation() {
        let m = shapes::blob(2).normalize().unwrap();
        let n = m.n_vertices();
        let perm: Vec<usize> = (0..n).map(|i| (i * 61 + 5) % n).collect();
        let p = m.permute_vertices(&perm).unwrap();
        let bx = compute_eigenbasis(&build_operators(&m).unwrap(), 10).unwrap();
        let by = compute_eigenbasis(&build_operators(&p).unwrap(), 10).unwrap();
        let map = fmap_to_pointmap(&FunctionalMap::identity(10), &bx, &by).unwrap();
        assert_eq!(map.as_hard().unwrap(), perm.as_slice());
    }

    #[test]
    fn loss_vanishes_on_consistent_identity() {
        let b = sphere_basis(8);
        let id = PointMap::identity(b.n());
        let l = spectral_loss(
            &FunctionalMap::identity(8),
            &FunctionalMap::identity(8),
            &id,
            &id,
            &b,
            &b,
            &SpectralWeights::default(),
        )
        .unwrap();
        assert!(l.total < 1e-16, "{}", l.total);
    }

    #[test]
    fn loss_of_scaled_inverse_pair() {
        let b = sphere_basis(2);
        let id = PointMap::identity(b.n());
        let cxy = FunctionalMap::new(DMatrix::identity(2, 2) * 2.0);
        let cyx = FunctionalMap::new(DMatrix::identity(2, 2) * 0.5);
        let l = spectral_loss(&cxy, &cyx, &id, &id, &b, &b, &SpectralWeights::default()).unwrap();
        assert!(l.bij.abs() < 1e-24);
        // per diagonal entry: (4 - 1)^2 and (1/4 - 1)^2
        let orth = 2.0 * (9.0 + 9.0 / 16.0);
        assert!((l.orth - orth).abs() < 1e-12);
        // identity point maps couple to the identity: (2 - 1)^2 and (1/2 - 1)^2 per entry
        let couple = 2.0 * (1.0 + 0.25);
        assert!((l.couple - couple).abs() < 1e-8);
        assert!((l.total - orth - couple).abs() < 1e-8);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (kx, ky) = (4, 3);
        let a = random(&mut rng, ky, kx);
        let b = random(&mut rng, kx, ky);
        let p = random(&mut rng, ky, kx);
        let q = random(&mut rng, kx, ky);
        let w = SpectralWeights {
            bij: 0.7,
            orth: 1.3,
            structural: 0.9,
            couple: 1.1,
        };
        let f = |a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>| {
            spectral_terms(
                &FunctionalMap::new(a.clone()),
                &FunctionalMap::new(b.clone()),
                p,
                q,
                &w,
            )
            .unwrap()
            .total
        };
        let l = spectral_terms(
            &FunctionalMap::new(a.clone()),
            &FunctionalMap::new(b.clone()),
            &p,
            &q,
            &w,
        )
        .unwrap();
        let h = 1e-5;
        let check = |fd: f64, g: f64| {
            assert!(
                (fd - g).abs() <= 1e-4 * fd.abs().max(g.abs()).max(1e-3),
                "{fd} vs {g}"
            )
        };
        for i in 0..a.len() {
            let (mut u, mut v) = (a.clone(), a.clone());
            u[i] += h;
            v[i] -= h;
            check(
                (f(&u, &b, &p, &q) - f(&v, &b, &p, &q)) / (2.0 * h),
                l.d_cxy[i],
            );
            let (mut u, mut v) = (p.clone(), p.clone());
            u[i] += h;
            v[i] -= h;
            check(
                (f(&a, &b, &u, &q) - f(&a, &b, &v, &q)) / (2.0 * h),
                l.d_p_xy[i],
            );
        }
        for i in 0..b.len() {
            let (mut u, mut v) = (b.clone(), b.clone());
            u[i] += h;
            v[i] -= h;
            check(
                (f(&a, &u, &p, &q) - f(&a, &v, &p, &q)) / (2.0 * h),
                l.d_cyx[i],
            );
            let (mut u, mut v) = (q.clone(), q.clone());
            u[i] += h;
            v[i] -= h;
            check(
                (f(&a, &b, &p, &u) - f(&a, &b, &p, &v)) / (2.0 * h),
                l.d_p_yx[i],
            );
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let b = sphere_basis(4);
        let id = PointMap::identity(b.n());
        let r = spectral_loss(
            &FunctionalMap::identity(3),
            &FunctionalMap::identity(4),
            &id,
            &id,
            &b,
            &b,
            &SpectralWeights::default(),
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn fmap_file_roundtrip() {
        let c = FunctionalMap::new(DMatrix::from_fn(3, 5, |i, j| i as f64 - 0.25 * j as f64));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.fmap");
        c.write(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..5], b"FMAP1");
        assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[21..29].try_into().unwrap()), 0.0);
        assert_eq!(f64::from_le_bytes(bytes[29..37].try_into().unwrap()), -0.25);
        assert_eq!(FunctionalMap::read(&p).unwrap(), c);
    }
}
