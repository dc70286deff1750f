//! Evaluation metrics: graph geodesic error, PCK curves and conformal distortion.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::PointMap;
use crate::error::{check_dim, Error, Result};
use crate::io::write_bytes;
use crate::mesh::Mesh;

/// Distances from a set of source vertices to every vertex, divided by the
/// square root of the surface area.
///
/// Distances follow mesh edges, so they overestimate true surface geodesics
/// slightly; the bias is the same for every method compared on one mesh.
#[derive(Debug, Clone)]
pub struct GeodesicTable {
    pub sources: Vec<usize>,
    /// `sources.len() x n`.
    pub dist: DMatrix<f64>,
    row_of: Vec<Option<usize>>,
}

impl GeodesicTable {
    pub fn n(&self) -> usize {
        self.row_of.len()
    }

    /// Distance between two vertices, either of which must be a source.
    pub fn get(&self, a: usize, b: usize) -> Result<f64> {
        let n = self.n();
        if a >= n || b >= n {
            return Err(Error::Dimension(format!(
                "vertex pair ({a}, {b}) out of range for {n} vertices"
            )));
        }
        match (self.row_of[a], self.row_of[b]) {
            (Some(r), _) => Ok(self.dist[(r, b)]),
            (None, Some(r)) => Ok(self.dist[(r, a)]),
            (None, None) => Err(Error::Dimension(format!(
                "neither {a} nor {b} is a geodesic source"
            ))),
        }
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    // reversed so the max-heap pops the closest vertex
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::from([Entry(0.0, source)]);
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(w, len) in &adj[v] {
            let nd = d + len;
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(Entry(nd, w));
            }
        }
    }
    dist
}

/// Edge-graph distances from `sources`, normalized by `sqrt(total area)`.
/// Unreachable vertices get `+inf`; a source that reaches no other vertex is an error.
pub fn geodesics(mesh: &Mesh, sources: &[usize]) -> Result<GeodesicTable> {
    let n = mesh.n_vertices();
    if sources.is_empty() {
        return Err(Error::EmptyInput("no geodesic sources".into()));
    }
    if let Some(&s) = sources.iter().find(|&&s| s >= n) {
        return Err(Error::Dimension(format!(
            "geodesic source {s} out of range for {n} vertices"
        )));
    }
    let v = mesh.vertices();
    let mut adj = vec![Vec::new(); n];
    for (i, j) in mesh.edges() {
        let len = (v[i] - v[j]).norm();
        adj[i].push((j, len));
        adj[j].push((i, len));
    }
    let scale = mesh.total_area().sqrt();
    if !(scale > 0.0) {
        return Err(Error::Degenerate("mesh has zero area".into()));
    }
    let rows: Vec<Vec<f64>> = sources.par_iter().map(|&s| dijkstra(&adj, s)).collect();
    let mut dist = DMatrix::zeros(sources.len(), n);
    let mut row_of = vec![None; n];
    for (r, (row, &s)) in rows.iter().zip(sources).enumerate() {
        if n > 1
            && row
                .iter()
                .enumerate()
                .all(|(j, d)| j == s || d.is_infinite())
        {
            return Err(Error::Disconnected(format!(
                "vertex {s} reaches no other vertex"
            )));
        }
        for (j, d) in row.iter().enumerate() {
            dist[(r, j)] = d / scale;
        }
        row_of[s].get_or_insert(r);
    }
    Ok(GeodesicTable {
        sources: sources.to_vec(),
        dist,
        row_of,
    })
}

/// Sorted distinct targets of a hard map, the sources needed to score against it.
pub fn map_targets(gt: &PointMap) -> Result<Vec<usize>> {
    let mut t = gt
        .as_hard()
        .ok_or_else(|| Error::InvalidArgument("ground truth must be a hard map".into()))?
        .to_vec();
    t.sort_unstable();
    t.dedup();
    Ok(t)
}

/// Mean and per-vertex normalized geodesic error of `pred` against `gt`.
pub fn geodesic_error(
    pred: &PointMap,
    gt: &PointMap,
    geo: &GeodesicTable,
) -> Result<(f64, Vec<f64>)> {
    let (p, g) = match (pred.as_hard(), gt.as_hard()) {
        (Some(p), Some(g)) => (p, g),
        _ => {
            return Err(Error::InvalidArgument(
                "geodesic error needs hard maps".into(),
            ))
        }
    };
    check_dim("predicted map sources", g.len(), p.len())?;
    check_dim("predicted map targets", geo.n(), pred.n_dst())?;
    check_dim("ground truth targets", geo.n(), gt.n_dst())?;
    if p.is_empty() {
        return Err(Error::EmptyInput("maps have no source vertices".into()));
    }
    let errors: Vec<f64> = p
        .iter()
        .zip(g)
        .map(|(&a, &b)| geo.get(a, b))
        .collect::<Result<_>>()?;
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok((mean, errors))
}

/// Cumulative fraction of `values` at or below `steps + 1` uniform thresholds
/// on `[0, max_threshold]`, and the normalized trapezoidal area under it.
pub fn pck_auc(values: &[f64], max_threshold: f64, steps: usize) -> Result<(Vec<(f64, f64)>, f64)> {
    if !(max_threshold > 0.0) || !max_threshold.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "max_threshold must be positive, got {max_threshold}"
        )));
    }
    if steps < 1 {
        return Err(Error::InvalidArgument("PCK needs at least one step".into()));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("no values for PCK".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let curve: Vec<(f64, f64)> = (0..=steps)
        .map(|j| {
            let thr = max_threshold * j as f64 / steps as f64;
            let count = sorted.partition_point(|&e| e <= thr);
            (thr, count as f64 / n)
        })
        .collect();
    let area: f64 = curve.windows(2).map(|w| (w[0].1 + w[1].1) / 2.0).sum();
    Ok((curve, area / steps as f64))
}

/// Per-triangle distortion `s1/s2 + s2/s1 - 2` of the linear map from each
/// source triangle to its image, with `s1, s2` its singular values.
pub fn conformal_distortion(mesh: &Mesh, mapped: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_dim("mapped positions", mesh.n_vertices(), mapped.nrows())?;
    check_dim("mapped position columns", 3, mapped.ncols())?;
    if mapped.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "mapped positions contain non-finite values".into(),
        ));
    }
    let v = mesh.vertices();
    let img = |i: usize| Vector3::new(mapped[(i, 0)], mapped[(i, 1)], mapped[(i, 2)]);
    mesh.faces()
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let (e1, e2) = (v[f[1]] - v[f[0]], v[f[2]] - v[f[0]]);
            let (f1, f2) = (img(f[1]) - img(f[0]), img(f[2]) - img(f[0]));
            // Gram matrices of the source and image edges; the squared singular
            // values of the map are the eigenvalues of S^-1 F
            let (s11, s12, s22) = (e1.norm_squared(), e1.dot(&e2), e2.norm_squared());
            let (f11, f12, f22) = (f1.norm_squared(), f1.dot(&f2), f2.norm_squared());
            let det_s = s11 * s22 - s12 * s12;
            if !(det_s > 1e-20 * s11 * s22) {
                return Err(Error::Degenerate(format!("face {fi} has zero area")));
            }
            let det_f = f11 * f22 - f12 * f12;
            if !(det_f > 0.0) {
                return Ok(f64::INFINITY);
            }
            // s1/s2 + s2/s1 = tr(S^-1 F) / sqrt(det(S^-1 F))
            let tr = s22 * f11 - 2.0 * s12 * f12 + s11 * f22;
            Ok((tr / (det_s * det_f).sqrt() - 2.0).max(0.0))
        })
        .collect()
}

/// Positions of the source vertices under a map into `target`.
pub fn mapped_positions(pi: &PointMap, target: &Mesh) -> Result<DMatrix<f64>> {
    pi.pull(&target.positions())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Upper end of the PCK threshold axis; 0.1 for near-isometric pairs, 0.2 otherwise.
    pub pck_max: f64,
    pub pck_steps: usize,
    pub conformal_max: f64,
    pub conformal_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pck_max: 0.1,
            pck_steps: 100,
            conformal_max: 1.0,
            conformal_steps: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("pck_max", self.pck_max),
            ("conformal_max", self.conformal_max),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{what} must be positive, got {v}"
                )));
            }
        }
        if self.pck_steps < 1 || self.conformal_steps < 1 {
            return Err(Error::InvalidArgument("curve steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_geo_err: f64,
    pub pck: Vec<(f64, f64)>,
    pub auc: f64,
    pub mean_conformal: f64,
    pub conformal_curve: Vec<(f64, f64)>,
}

/// Scores a hard `X -> Y` map against ground truth on the target's geodesics.
pub fn evaluate(
    mesh_x: &Mesh,
    mesh_y: &Mesh,
    pred: &PointMap,
    gt: &PointMap,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_dim("map sources", mesh_x.n_vertices(), pred.n_src())?;
    let geo = geodesics(mesh_y, &map_targets(gt)?)?;
    evaluate_with(mesh_x, mesh_y, pred, gt, &geo, cfg)
}

/// [`evaluate`] with precomputed target geodesics.
pub fn evaluate_with(
    mesh_x: &Mesh,
    mesh_y: &Mesh,
    pred: &PointMap,
    gt: &PointMap,
    geo: &GeodesicTable,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let (mean_geo_err, errors) = geodesic_error(pred, gt, geo)?;
    let (pck, auc) = pck_auc(&errors, cfg.pck_max, cfg.pck_steps)?;
    let dist = conformal_distortion(mesh_x, &mapped_positions(pred, mesh_y)?)?;
    let (conformal_curve, _) = pck_auc(&dist, cfg.conformal_max, cfg.conformal_steps)?;
    let finite: Vec<f64> = dist.iter().copied().filter(|d| d.is_finite()).collect();
    let mean_conformal = if finite.len() == dist.len() {
        finite.iter().sum::<f64>() / finite.len() as f64
    } else {
        f64::INFINITY
    };
    Ok(EvalReport {
        mean_geo_err,
        pck,
        auc,
        mean_conformal,
        conformal_curve,
    })
}

/// Writes a curve as CSV with a `threshold,fraction` header.
pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[(f64, f64)]) -> Result<()> {
    let mut s = String::from("threshold,fraction\n");
    for (t, f) in curve {
        writeln!(s, "{t},{f}").expect("writing to a string");
    }
    write_bytes(path.as_ref(), s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use nalgebra::Rotation3;

    #[test]
    fn strip_distances_are_edge_sums() {
        let m = shapes::grid(4, 1, 4.0, 1.0);
        let scale = m.total_area().sqrt();
        let geo = geodesics(&m, &[0]).unwrap();
        assert_eq!(geo.get(0, 0).unwrap(), 0.0);
        // bottom row vertices are 0..5 at unit spacing
        for j in 1..5 {
            assert!((geo.get(0, j).unwrap() * scale - j as f64).abs() < 1e-12);
            assert_eq!(geo.get(j, 0).unwrap(), geo.get(0, j).unwrap());
        }
        assert!(geo.get(1, 2).is_err());
    }

    #[test]
    fn geodesics_are_a_metric() {
        let m = shapes::blob(1);
        let all: Vec<usize> = (0..m.n_vertices()).collect();
        let geo = geodesics(&m, &all).unwrap();
        let n = m.n_vertices();
        for i in 0..n {
            assert_eq!(geo.dist[(i, i)], 0.0);
            for j in 0..n {
                assert!((geo.dist[(i, j)] - geo.dist[(j, i)]).abs() <= 1e-12);
                for k in (0..n).step_by(7) {
                    assert!(geo.dist[(i, k)] <= geo.dist[(i, j)] + geo.dist[(j, k)] + 1e-10);
                }
            }
        }
    }

    #[test]
    fn sphere_antipodes_bound_the_great_circle() {
        let m = shapes::icosphere(3);
        // vertex 0 and its antipode, the farthest vertex
        let p = m.vertices();
        let far = (0..m.n_vertices())
            .max_by(|&a, &b| (p[a] - p[0]).norm().total_cmp(&(p[b] - p[0]).norm()))
            .unwrap();
        let d = geodesics(&m, &[0]).unwrap().get(0, far).unwrap();
        let great_circle = std::f64::consts::PI / (4.0 * std::f64::consts::PI).sqrt();
        // the inscribed polyhedron is slightly smaller than the unit sphere
        assert!(d >= great_circle * 0.99, "{d} vs {great_circle}");
        assert!(d <= great_circle * 1.15, "{d} vs {great_circle}");
    }

    #[test]
    fn disconnected_sources_are_reported() {
        let v = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(5.0, 0.0, 0.0),
            Vector3::new(6.0, 0.0, 0.0),
            Vector3::new(5.0, 1.0, 0.0),
        ];
        let m = Mesh::new(v, vec![[0, 1, 2], [3, 4, 5]], "two").unwrap();
        let geo = geodesics(&m, &[0]).unwrap();
        assert!(geo.get(0, 4).unwrap().is_infinite());
        assert!(matches!(geodesics(&m, &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn geodesic_error_examples() {
        let m = shapes::blob(1);
        let n = m.n_vertices();
        let id = PointMap::identity(n);
        let geo = geodesics(&m, &map_targets(&id).unwrap()).unwrap();
        assert_eq!(geodesic_error(&id, &id, &geo).unwrap().0, 0.0);
        let mut wrong: Vec<usize> = (0..n).collect();
        wrong[3] = 17;
        let pred = PointMap::hard(wrong, n).unwrap();
        let (mean, errs) = geodesic_error(&pred, &id, &geo).unwrap();
        assert_eq!(mean, geo.get(17, 3).unwrap() / n as f64);
        assert_eq!(errs.iter().filter(|e| **e > 0.0).count(), 1);
    }

    #[test]
    fn pck_examples() {
        let (curve, auc) = pck_auc(&[0.0; 10], 0.1, 50).unwrap();
        assert!(curve.iter().all(|c| c.1 == 1.0));
        assert_eq!(auc, 1.0);

        let (curve, auc) = pck_auc(&[0.0, 0.5, 0.7, 0.9], 0.1, 50).unwrap();
        assert!(curve.iter().all(|c| c.1 == 0.25));
        assert!((auc - 0.25).abs() < 1e-12);

        let steps = 40;
        let errs: Vec<f64> = (0..1000).map(|i| 0.2 * (i as f64 + 0.5) / 1000.0).collect();
        let (curve, auc) = pck_auc(&errs, 0.2, steps).unwrap();
        assert!((auc - 0.5).abs() <= 1.0 / steps as f64);
        assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(pck_auc(&errs, 0.0, 10).is_err());
    }

    #[test]
    fn conformal_examples() {
        let m = shapes::grid(4, 3, 4.0, 3.0);
        let p = m.positions();
        assert!(conformal_distortion(&m, &p)
            .unwrap()
            .iter()
            .all(|d| d.abs() <= 1e-8));

        let r = Rotation3::from_euler_angles(0.3, 1.2, -0.4);
        let sim = DMatrix::from_fn(p.nrows(), 3, |i, c| {
            let v = r * Vector3::new(p[(i, 0)], p[(i, 1)], p[(i, 2)]) * 2.5;
            v[c] + 1.0
        });
        assert!(conformal_distortion(&m, &sim)
            .unwrap()
            .iter()
            .all(|d| d.abs() <= 1e-8));

        let stretch = DMatrix::from_fn(p.nrows(), 3, |i, c| {
            if c == 0 {
                2.0 * p[(i, 0)]
            } else {
                p[(i, c)]
            }
        });
        assert!(conformal_distortion(&m, &stretch)
            .unwrap()
            .iter()
            .all(|d| *d == 0.5));
    }

    #[test]
    fn perfect_map_scores_perfectly() {
        let m = shapes::blob(1);
        let id = PointMap::identity(m.n_vertices());
        let r = evaluate(&m, &m, &id, &id, &EvalConfig::default()).unwrap();
        assert_eq!(r.mean_geo_err, 0.0);
        assert_eq!(r.auc, 1.0);
        assert!(r.mean_conformal.abs() <= 1e-8);
    }

    #[test]
    fn curve_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pck.csv");
        write_curve_csv(&path, &[(0.0, 0.5), (0.1, 1.0)]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "threshold,fraction\n0,0.5\n0.1,1\n"
        );
    }
}
