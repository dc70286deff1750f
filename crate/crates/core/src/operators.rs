//! Cotangent Laplacian, lumped mass and one-ring adjacency.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::CsrMatrix;

/// Cotangents are clamped to this magnitude so slivers stay usable.
pub const COT_CLAMP: f64 = 1e6;

/// Discrete operators of one mesh.
///
/// `laplacian` is the positive semi-definite cotangent Laplacian: off-diagonal
/// entries are `-(cot a + cot b) / 2`, the diagonal is the negated row sum of the
/// off-diagonals. It is symmetric bit for bit.
#[derive(Debug, Clone)]
pub struct Operators {
    pub mass: Vec<f64>,
    pub laplacian: CsrMatrix,
    pub neighbors: Vec<Vec<usize>>,
}

impl Operators {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    pub fn total_area(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// `trace(F^T L F)` for an `n x d` vertex function.
    pub fn dirichlet(&self, f: &DMatrix<f64>) -> f64 {
        let lf = self.laplacian.mul_dense(f);
        f.dot(&lf)
    }
}

fn cot(u: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    let dot = u.dot(v);
    let cross = u.cross(v).norm();
    let c = if cross > 0.0 {
        dot / cross
    } else if dot == 0.0 {
        0.0
    } else {
        dot.signum() * f64::INFINITY
    };
    c.clamp(-COT_CLAMP, COT_CLAMP)
}

pub fn build_operators(mesh: &Mesh) -> Result<Operators> {
    let n = mesh.n_vertices();
    let v = mesh.vertices();
    let mut mass = vec![0.0; n];
    // half-weights per undirected edge, keyed (min, max)
    let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (f, &[a, b, c]) in mesh.faces().iter().enumerate() {
        let third = mesh.face_area(f) / 3.0;
        for (corner, i, j) in [(a, b, c), (b, c, a), (c, a, b)] {
            mass[corner] += third;
            let w = 0.5 * cot(&(v[i] - v[corner]), &(v[j] - v[corner]));
            *weights.entry((i.min(j), i.max(j))).or_insert(0.0) += w;
        }
    }
    if let Some(i) = mass.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::Degenerate(format!(
            "vertex {i} has zero lumped area"
        )));
    }

    let mut diag = vec![0.0; n];
    let mut triplets = Vec::with_capacity(weights.len() * 2 + n);
    for (&(i, j), &w) in &weights {
        triplets.push((i, j, -w));
        triplets.push((j, i, -w));
        diag[i] += w;
        diag[j] += w;
    }
    triplets.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
    Ok(Operators {
        mass,
        laplacian: CsrMatrix::from_triplets(n, triplets),
        neighbors: mesh.one_rings(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn right_isosceles_pair_weights() {
        // two unit right isosceles triangles sharing a leg: both angles opposite
        // the shared edge are 45 degrees
        let verts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
        ];
        let m = Mesh::new(verts, vec![[0, 2, 1], [0, 1, 3]], "pair").unwrap();
        let ops = build_operators(&m).unwrap();
        assert!((ops.laplacian.get(0, 1) + 1.0).abs() < 1e-15);

        // a unit square split along its diagonal: the diagonal sees two right angles
        let verts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let m = Mesh::new(verts, vec![[0, 1, 2], [0, 2, 3]], "square").unwrap();
        let ops = build_operators(&m).unwrap();
        assert!(ops.laplacian.get(0, 2).abs() < 1e-15);
        assert!((ops.laplacian.get(0, 1) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn equilateral_ring_weights_equal() {
        let mut verts = vec![Vector3::zeros()];
        for k in 0..6 {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            verts.push(Vector3::new(a.cos(), a.sin(), 0.0));
        }
        let faces = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        let ops = build_operators(&Mesh::new(verts, faces, "hex").unwrap()).unwrap();
        let w0 = ops.laplacian.get(0, 1);
        for k in 2..=6 {
            assert!((ops.laplacian.get(0, k) - w0).abs() < 1e-14);
        }
    }

    #[test]
    fn icosphere_mass_partitions_area() {
        let m = shapes::icosphere(3);
        let ops = build_operators(&m).unwrap();
        assert!((ops.total_area() - m.total_area()).abs() < 1e-10);
    }

    #[test]
    fn laplacian_invariants() {
        let m = shapes::blob(2);
        let ops = build_operators(&m).unwrap();
        let l = &ops.laplacian;
        assert!(l.is_symmetric());
        for i in 0..l.n() {
            let max = l.row(i).map(|(_, v)| v.abs()).fold(0.0, f64::max);
            let sum: f64 = l.row(i).map(|(_, v)| v).sum();
            assert!(sum.abs() <= 1e-10 * max, "row {i} sums to {sum}");
        }
        let ones = vec![1.0; l.n()];
        assert!(l.mul_vec(&ones).iter().all(|v| v.abs() < 1e-10));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..l.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: f64 = l.mul_vec(&x).iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!(q >= -1e-10);
        }
    }

    #[test]
    fn sliver_cotangents_are_clamped() {
        let verts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.5, 1e-12, 0.0),
            Vector3::new(0.5, 1.0, 0.0),
        ];
        let m = Mesh::new(verts, vec![[0, 1, 2], [1, 0, 3]], "sliver").unwrap();
        let ops = build_operators(&m).unwrap();
        assert!(ops.laplacian.get(0, 2).abs() <= COT_CLAMP);
        assert!(ops.laplacian.get(0, 1).is_finite());
    }

    #[test]
    fn unreferenced_vertex_has_no_area() {
        let mut verts = shapes::cube().vertices().to_vec();
        verts.push(Vector3::new(5.0, 5.0, 5.0));
        let m = Mesh::new(verts, shapes::cube().faces().to_vec(), "loose").unwrap();
        assert!(matches!(build_operators(&m), Err(Error::Degenerate(_))));
    }
}
