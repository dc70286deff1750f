//! Smallest eigenpairs of the generalized problem `L x = lambda M x` with `L`
//! sparse symmetric positive semi-definite and `M` diagonal positive.
//!
//! Shift-invert block Lanczos: the operator `(L + shift M)^-1 M` is
//! self-adjoint in the `M` inner product and maps the low end of the spectrum to
//! its dominant end. The Krylov basis is kept fully `M`-orthonormal (classical
//! Gram-Schmidt, applied twice) together with the operator and `L` applied to
//! each basis vector, so Rayleigh-Ritz and thick restarts need no extra solves.
//!
//! With a tiny shift the operator blows any null-space component up by
//! `1 / shift`. When `L` annihilates the indicator of each connected component
//! (true for Laplacians), those indicators seed the basis and are projected out
//! of every operator image.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, EnvelopeCholesky};

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// The factored matrix is `L + shift * M`.
    pub shift: f64,
    /// Ritz pair accepted when `|L x - lambda M x| / |M x| <= tol * max(1, |lambda|)`.
    pub tol: f64,
    /// Looser bound accepted once the restarts are used up; round-off can keep
    /// some meshes just above `tol`.
    pub fallback_tol: f64,
    pub block_size: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            shift: 1e-8,
            tol: 1e-9,
            fallback_tol: 1e-8,
            block_size: 8,
            max_restarts: 60,
            seed: 0x5eed_1a9c_2b0f_0001,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// Ascending.
    pub values: Vec<f64>,
    /// `n x k`, columns `M`-orthonormal.
    pub vectors: DMatrix<f64>,
    pub restarts: usize,
}

struct ShiftInvert<'a> {
    chol: EnvelopeCholesky,
    mass: &'a [f64],
    null: Vec<Vec<f64>>,
}

impl ShiftInvert<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mx: Vec<f64> = x.iter().zip(self.mass).map(|(a, m)| a * m).collect();
        let mut y = self.chol.solve(&mx);
        for z in &self.null {
            let c = self.inner(z, &y);
            y.iter_mut().zip(z).for_each(|(a, b)| *a -= c * b);
        }
        y
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(self.mass)
            .map(|((x, y), m)| x * y * m)
            .sum()
    }
}

pub fn smallest_eigenpairs(
    laplacian: &CsrMatrix,
    mass: &[f64],
    k: usize,
    opts: &LanczosOptions,
) -> Result<Eigenpairs> {
    let n = laplacian.n();
    if mass.len() != n {
        return Err(Error::Dimension(format!(
            "mass has {} entries, matrix is {n}x{n}",
            mass.len()
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::Dimension(format!(
            "requested {k} eigenpairs of a {n}-vertex problem"
        )));
    }
    let shifted: Vec<f64> = mass.iter().map(|m| opts.shift * m).collect();
    let chol = EnvelopeCholesky::factor(&laplacian.add_diagonal(&shifted))?;
    let op = ShiftInvert {
        chol,
        mass,
        null: null_space(laplacian, mass),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let b = opts.block_size.max(1).min(k);
    let max_dim = n.min(2 * k + 4 * b).max(op.null.len() + b).min(n);
    let keep = (k + b).min(max_dim.saturating_sub(b)).max(k);

    // basis, operator images (drive the expansion) and L times basis (Ritz extraction)
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_dim);
    let mut images: Vec<Vec<f64>> = Vec::with_capacity(max_dim);
    let mut lbasis: Vec<Vec<f64>> = Vec::with_capacity(max_dim);
    for z in &op.null {
        basis.push(z.clone());
        images.push(vec![0.0; n]);
        lbasis.push(laplacian.mul_vec(z));
    }
    let mut pending: Vec<Vec<f64>> = (0..b).map(|_| random_vec(&mut rng, n)).collect();

    for restart in 0..=opts.max_restarts {
        while basis.len() < max_dim {
            let room = max_dim - basis.len();
            let mut block = Vec::new();
            for v in pending.drain(..) {
                if block.len() == room {
                    break;
                }
                if let Some(q) = orthonormalize(&op, &basis, &block, v, &mut rng) {
                    block.push(q);
                }
            }
            if block.is_empty() {
                break; // the basis spans the whole space
            }
            for q in &block {
                images.push(op.apply(q));
                lbasis.push(laplacian.mul_vec(q));
            }
            let start = basis.len();
            basis.extend(block);
            pending = images[start..].to_vec();
        }

        // Rayleigh-Ritz on the pencil (L, M) restricted to the M-orthonormal basis.
        // Extracting from L rather than the shift-inverted operator keeps the
        // near-null mode (theta ~ 1/shift) from swamping the small eigenvalues.
        let m = basis.len();
        let mut h = DMatrix::zeros(m, m);
        for j in 0..m {
            for i in 0..=j {
                let v = 0.5 * (dot(&basis[i], &lbasis[j]) + dot(&basis[j], &lbasis[i]));
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));

        let take = keep.min(m);
        let mut ritz = Vec::with_capacity(take);
        let mut ritz_img = Vec::with_capacity(take);
        let mut ritz_l = Vec::with_capacity(take);
        let mut values = Vec::with_capacity(take);
        for &c in order.iter().take(take) {
            let s = eig.eigenvectors.column(c);
            ritz.push(combine(&basis, s.as_slice()));
            ritz_img.push(combine(&images, s.as_slice()));
            ritz_l.push(combine(&lbasis, s.as_slice()));
            values.push(eig.eigenvalues[c]);
        }

        let tol = if restart == opts.max_restarts {
            opts.fallback_tol
        } else {
            opts.tol
        };
        let mut unconverged = Vec::new();
        for i in 0..k.min(take) {
            let (mut num, mut den) = (0.0, 0.0);
            for ((lx, x), mi) in ritz_l[i].iter().zip(&ritz[i]).zip(mass) {
                let mx = mi * x;
                num += (lx - values[i] * mx).powi(2);
                den += mx * mx;
            }
            if (num / den).sqrt() > tol * values[i].abs().max(1.0) && m < n {
                unconverged.push(i);
            }
        }

        if unconverged.is_empty() {
            let mut vectors = DMatrix::zeros(n, k);
            for (i, x) in ritz.iter().take(k).enumerate() {
                vectors.set_column(i, &DVector::from_column_slice(x));
            }
            values.truncate(k);
            return Ok(Eigenpairs {
                values,
                vectors,
                restarts: restart,
            });
        }

        // thick restart: keep the leading Ritz vectors, expand from the
        // operator images of the unconverged ones
        pending = unconverged
            .iter()
            .take(b)
            .map(|&i| ritz_img[i].clone())
            .collect();
        while pending.len() < b {
            pending.push(random_vec(&mut rng, n));
        }
        basis = ritz;
        images = ritz_img;
        lbasis = ritz_l;
    }
    Err(Error::Convergence(format!(
        "shift-invert Lanczos did not converge {k} eigenpairs after {} restarts",
        opts.max_restarts
    )))
}

/// Mass-normalized indicators of the connected components of the sparsity
/// graph, if `L` maps every one of them to (numerically) zero.
fn null_space(l: &CsrMatrix, mass: &[f64]) -> Vec<Vec<f64>> {
    let n = l.n();
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = count;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for (u, _) in l.row(v) {
                if comp[u] == usize::MAX {
                    comp[u] = count;
                    stack.push(u);
                }
            }
        }
        count += 1;
    }
    let scale = l.diagonal().iter().fold(0.0f64, |a, d| a.max(d.abs()));
    let mut out = Vec::with_capacity(count);
    for c in 0..count {
        let ind: Vec<f64> = comp
            .iter()
            .map(|&x| if x == c { 1.0 } else { 0.0 })
            .collect();
        if l.mul_vec(&ind).iter().any(|v| v.abs() > 1e-12 * scale) {
            return Vec::new();
        }
        let norm: f64 = ind.iter().zip(mass).map(|(a, m)| a * m).sum::<f64>().sqrt();
        out.push(ind.into_iter().map(|a| a / norm).collect());
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn combine(vs: &[Vec<f64>], coeffs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for (v, &c) in vs.iter().zip(coeffs) {
        if c != 0.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
    }
    out
}

/// `M`-orthogonalizes `v` against `basis` and `extra` (twice) and normalizes it.
/// Falls back to random vectors when `v` lies in their span; returns `None`
/// once the space is exhausted.
fn orthonormalize(
    op: &ShiftInvert<'_>,
    basis: &[Vec<f64>],
    extra: &[Vec<f64>],
    mut v: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<f64>> {
    let n = v.len();
    if basis.len() + extra.len() >= n {
        return None;
    }
    for attempt in 0..4 {
        let before = op.inner(&v, &v).sqrt();
        for _ in 0..2 {
            for q in basis.iter().chain(extra) {
                let c = op.inner(q, &v);
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let after = op.inner(&v, &v).sqrt();
        if after > 1e-10 * before && after > 0.0 {
            v.iter_mut().for_each(|x| *x /= after);
            return Some(v);
        }
        if attempt == 3 {
            break;
        }
        v = random_vec(rng, n);
    }
    None
}
