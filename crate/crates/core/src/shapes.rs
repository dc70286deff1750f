//! Procedural meshes for tests, benchmarks and demos.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::mesh::Mesh;

/// Unit-radius icosphere; `subdivisions = 3` gives 642 vertices, `4` gives 2562.
pub fn icosphere(subdivisions: usize) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vector3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = if a < b { (a, b) } else { (b, a) };
            *midpoint.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(verts, faces, format!("icosphere{subdivisions}")).expect("icosphere is valid")
}

/// Axis-aligned unit cube surface, 12 outward-facing triangles.
pub fn cube() -> Mesh {
    let verts = (0..8)
        .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    Mesh::new(verts, faces, "cube").expect("cube is valid")
}

/// Flat `width x height` grid in the z = 0 plane with `nx x ny` quads, split along a diagonal.
pub fn grid(nx: usize, ny: usize, width: f64, height: f64) -> Mesh {
    let mut verts = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            verts.push(Vector3::new(
                width * i as f64 / nx as f64,
                height * j as f64 / ny as f64,
                0.0,
            ));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Mesh::new(verts, faces, "grid").expect("grid is valid")
}

/// Icosphere with a smooth, asymmetric radial bump field. Its Laplacian
/// spectrum has no repeated eigenvalues in practice, which makes it a good
/// self-matching target.
pub fn blob(subdivisions: usize) -> Mesh {
    let sphere = icosphere(subdivisions);
    sphere
        .map_vertices(|p| {
            let (x, y, z) = (p.x, p.y, p.z);
            let r = 1.0 + 0.18 * x * y + 0.12 * z * z + 0.10 * x - 0.07 * y * z + 0.05 * x * x * x
                - 0.06 * y;
            p * r
        })
        .with_name("blob")
}

/// Parameters of the procedural bar used for near-isometric matching tests.
#[derive(Debug, Clone, Copy)]
pub struct BarSpec {
    pub rings: usize,
    pub ring_size: usize,
    pub length: f64,
}

impl Default for BarSpec {
    fn default() -> Self {
        Self {
            rings: 40,
            ring_size: 24,
            length: 4.0,
        }
    }
}

/// A tapered bar along +x with an asymmetric cross-section, capped at both ends.
pub fn bar(spec: BarSpec) -> Mesh {
    let BarSpec {
        rings,
        ring_size,
        length,
    } = spec;
    let mut verts = Vec::with_capacity(rings * ring_size + 2);
    for r in 0..rings {
        let x = length * r as f64 / (rings - 1) as f64;
        let (a, b) = (0.42 - 0.05 * x, 0.26 - 0.02 * x);
        for s in 0..ring_size {
            let th = 2.0 * std::f64::consts::PI * s as f64 / ring_size as f64;
            let bump = 1.0 + 0.25 * (-((th - 1.0) / 0.45).powi(2)).exp();
            verts.push(Vector3::new(x, a * bump * th.cos(), b * bump * th.sin()));
        }
    }
    let start = verts.len();
    verts.push(Vector3::new(-0.08, 0.0, 0.0));
    verts.push(Vector3::new(length + 0.08, 0.0, 0.0));
    let id = |r: usize, s: usize| r * ring_size + (s % ring_size);
    let mut faces = Vec::new();
    for r in 0..rings - 1 {
        for s in 0..ring_size {
            faces.push([id(r, s), id(r, s + 1), id(r + 1, s + 1)]);
            faces.push([id(r, s), id(r + 1, s + 1), id(r + 1, s)]);
        }
    }
    for s in 0..ring_size {
        faces.push([start, id(0, s + 1), id(0, s)]);
        faces.push([start + 1, id(rings - 1, s), id(rings - 1, s + 1)]);
    }
    Mesh::new(verts, faces, "bar").expect("bar is valid")
}

/// Bends a mesh lying along +x by `angle` radians about the z axis.
///
/// Points with `x <= start` stay fixed, the zone `[start, start + radius * angle]`
/// wraps onto a circular arc of the given centerline radius, and everything past
/// it moves rigidly with the end of the arc.
pub fn bend(mesh: &Mesh, start: f64, radius: f64, angle: f64) -> Mesh {
    let zone = radius * angle;
    let name = format!("{}_bent", mesh.name());
    mesh.map_vertices(|p| {
        if p.x <= start {
            return *p;
        }
        let (phi, s) = if p.x < start + zone {
            ((p.x - start) / radius, 0.0)
        } else {
            (angle, p.x - start - zone)
        };
        let arm = radius - p.y;
        Vector3::new(
            start + arm * phi.sin() + s * phi.cos(),
            radius - arm * phi.cos() + s * phi.sin(),
            p.z,
        )
    })
    .with_name(name)
}

/// The default near-isometric pair: a straight bar and the same bar bent by 90 degrees.
pub fn bent_bar_pair() -> (Mesh, Mesh) {
    let straight = bar(BarSpec::default());
    let bent = bend(&straight, 1.6, 0.6, std::f64::consts::FRAC_PI_2);
    (straight, bent)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        for (s, n) in [(0, 12), (1, 42), (2, 162), (3, 642), (4, 2562)] {
            let m = icosphere(s);
            assert_eq!(m.n_vertices(), n);
            assert_eq!(m.n_faces(), 20 * 4usize.pow(s as u32));
        }
    }

    #[test]
    fn bent_bar_keeps_connectivity_and_edge_lengths_roughly() {
        let (a, b) = bent_bar_pair();
        assert_eq!(a.faces(), b.faces());
        let ratio = b.total_area() / a.total_area();
        assert!((ratio - 1.0).abs() < 0.05, "area ratio {ratio}");
        // the far end points along +y after the bend
        let tip = b.vertices()[a.n_vertices() - 1];
        assert!(tip.y > 2.0 && tip.x < 2.5, "{tip:?}");
    }
}
