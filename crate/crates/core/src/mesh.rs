//! Triangle meshes and the normalization applied before matching.

use std::collections::HashMap;

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};

/// An indexed triangle mesh.
///
/// Faces hold 0-based vertex indices. Vertices that no face references are kept.
/// Boundary edges are allowed, but no edge may be shared by more than two faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    name: String,
}

/// Translation and scale that took a mesh into unit-area, centered coordinates.
///
/// `normalized = (original - centroid) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub centroid: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - Vector3::from(self.centroid)) * self.scale
    }

    pub fn invert(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p / self.scale + Vector3::from(self.centroid)
    }
}

impl Mesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        name: impl Into<String>,
    ) -> Result<Self> {
        let n = vertices.len();
        if let Some(i) = vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "vertex {i} has a non-finite coordinate"
            )));
        }
        for (f, face) in faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&i| i >= n) {
                return Err(Error::Topology(format!(
                    "face {f} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::Topology(format!(
                    "face {f} repeats a vertex: {face:?}"
                )));
            }
        }
        check_edge_manifold(&faces)?;
        Ok(Self {
            vertices,
            faces,
            name: name.into(),
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Vertex positions as an `n x 3` matrix, one row per vertex.
    pub fn positions(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.vertices.len(), 3, |i, j| self.vertices[i][j])
    }

    /// Same connectivity with new vertex positions (`n x 3`).
    pub fn with_positions(&self, positions: &DMatrix<f64>) -> Result<Self> {
        crate::error::check_dim("position rows", self.vertices.len(), positions.nrows())?;
        crate::error::check_dim("position columns", 3, positions.ncols())?;
        let vertices = (0..positions.nrows())
            .map(|i| Vector3::new(positions[(i, 0)], positions[(i, 1)], positions[(i, 2)]))
            .collect();
        Self::new(vertices, self.faces.clone(), self.name.clone())
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn map_vertices(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            name: self.name.clone(),
        }
    }

    /// Applies a vertex permutation: new vertex `i` is old vertex `perm[i]`.
    pub fn permute_vertices(&self, perm: &[usize]) -> Result<Self> {
        crate::error::check_dim("permutation length", self.vertices.len(), perm.len())?;
        let mut inverse = vec![usize::MAX; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            if old >= perm.len() || inverse[old] != usize::MAX {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            inverse[old] = new;
        }
        let vertices = perm.iter().map(|&old| self.vertices[old]).collect();
        let faces = self
            .faces
            .iter()
            .map(|f| [inverse[f[0]], inverse[f[1]], inverse[f[2]]])
            .collect();
        Self::new(vertices, faces, self.name.clone())
    }

    /// Area-weighted centroid and the scale that brings total area to 1.
    pub fn normalization(&self) -> Result<Normalization> {
        let mut area = 0.0;
        let mut centroid = Vector3::zeros();
        for (f, face) in self.faces.iter().enumerate() {
            let a = self.face_area(f);
            let c =
                (self.vertices[face[0]] + self.vertices[face[1]] + self.vertices[face[2]]) / 3.0;
            centroid += c * a;
            area += a;
        }
        if !(area > 0.0) {
            return Err(Error::Degenerate(format!(
                "mesh '{}' has zero surface area",
                self.name
            )));
        }
        centroid /= area;
        Ok(Normalization {
            centroid: centroid.into(),
            scale: 1.0 / area.sqrt(),
        })
    }

    /// Centered at the area-weighted centroid and scaled to unit surface area.
    pub fn normalize(&self) -> Result<Self> {
        let norm = self.normalization()?;
        Ok(self.map_vertices(|p| norm.apply(p)))
    }

    /// Sorted one-ring neighbor lists.
    pub fn one_rings(&self) -> Vec<Vec<usize>> {
        let mut rings = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                rings[a].push(b);
                rings[b].push(a);
            }
        }
        for r in &mut rings {
            r.sort_unstable();
            r.dedup();
        }
        rings
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<_> = self
            .faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| sorted_pair(f[k], f[(k + 1) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }
}

pub fn normalize_mesh(mesh: &Mesh) -> Result<Mesh> {
    mesh.normalize()
}

fn sorted_pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn check_edge_manifold(faces: &[[usize; 3]]) -> Result<()> {
    let mut count: HashMap<(usize, usize), u8> = HashMap::with_capacity(faces.len() * 2);
    for f in faces {
        for k in 0..3 {
            let e = sorted_pair(f[k], f[(k + 1) % 3]);
            let c = count.entry(e).or_insert(0);
            *c += 1;
            if *c > 2 {
                return Err(Error::Topology(format!(
                    "edge ({}, {}) is shared by more than two faces",
                    e.0, e.1
                )));
            }
        }
    }
    Ok(())
}
