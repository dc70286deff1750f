//! Fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use shapeharmony::{
    build_operators, compute_eigenbasis, shapes, standardize, wks, EigenBasis, FeatureField, Mesh,
};

/// A normalized blob and its basis and standardized descriptors.
pub struct Fixture {
    pub mesh: Mesh,
    pub basis: EigenBasis,
    pub features: FeatureField,
}

pub fn fixture(subdivisions: usize, k: usize, d: usize) -> Fixture {
    let mesh = shapes::blob(subdivisions)
        .normalize()
        .expect("blob normalizes");
    let basis = compute_eigenbasis(&build_operators(&mesh).expect("operators"), k).expect("basis");
    let features = standardize(&wks(&basis, d).expect("descriptors"));
    Fixture {
        mesh,
        basis,
        features,
    }
}

/// `mesh` positions shifted by a fixed, non-rigid wave.
pub fn wobbled(mesh: &Mesh, amplitude: f64) -> DMatrix<f64> {
    let mut p = mesh.positions();
    for mut row in p.row_iter_mut() {
        let (x, y) = (row[0], row[1]);
        row[2] += amplitude * (3.0 * x).sin() * (2.0 * y).cos();
    }
    p
}
