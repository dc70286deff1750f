//! Test-time adaptation: per-frame shape-dominant displacement fields under a
//! Chamfer + Dirichlet objective, the blended interpolation surface and the
//! final point map.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::PointMap;
use crate::error::{check_dim, Error, Result};
use crate::interpolation::Trajectory;
use crate::io::{binary, read_bytes, write_bytes};
use crate::mesh::Mesh;
use crate::operators::{build_operators, Operators};
use crate::optim::{AdamParams, VectorAdam};
use crate::spatial::KdTree;

const SFLD_MAGIC: &[u8] = b"SFLD1";

fn check_points(what: &str, s: &DMatrix<f64>) -> Result<()> {
    if s.nrows() == 0 {
        return Err(Error::EmptyInput(format!("{what} point set is empty")));
    }
    check_dim(&format!("{what} point dimension"), 3, s.ncols())
}

/// Symmetric Chamfer distance: mean squared distance from each point to its
/// nearest neighbor in the other set, summed over both directions.
pub fn chamfer(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    check_points("first", s1)?;
    check_points("second", s2)?;
    let a = KdTree::from_rows(s2).nearest_rows(s1);
    let b = KdTree::from_rows(s1).nearest_rows(s2);
    Ok(mean_dist(&a) + mean_dist(&b))
}

fn mean_dist(nn: &[(usize, f64)]) -> f64 {
    nn.iter().map(|(_, d)| d).sum::<f64>() / nn.len() as f64
}

/// Chamfer distance and its gradient in `s1`, with nearest neighbors held fixed.
pub fn chamfer_grad(
    s1: &DMatrix<f64>,
    tree2: &KdTree,
    s2: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    check_points("first", s1)?;
    check_points("second", s2)?;
    let (n1, n2) = (s1.nrows() as f64, s2.nrows() as f64);
    let a = tree2.nearest_rows(s1);
    let b = KdTree::from_rows(s1).nearest_rows(s2);
    let mut g = DMatrix::zeros(s1.nrows(), 3);
    for (i, &(j, _)) in a.iter().enumerate() {
        for c in 0..3 {
            g[(i, c)] += 2.0 * (s1[(i, c)] - s2[(j, c)]) / n1;
        }
    }
    for (j, &(i, _)) in b.iter().enumerate() {
        for c in 0..3 {
            g[(i, c)] += 2.0 * (s1[(i, c)] - s2[(j, c)]) / n2;
        }
    }
    Ok((mean_dist(&a) + mean_dist(&b), g))
}

/// `trace(F^T L F)` with the cotangent Laplacian of `mesh`.
pub fn dirichlet(mesh: &Mesh, field: &DMatrix<f64>) -> Result<f64> {
    check_dim("field rows", mesh.n_vertices(), field.nrows())?;
    Ok(build_operators(mesh)?.dirichlet(field))
}

/// Per-frame displacement fields `Delta_s(k / T)`, each `n_x x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeField {
    pub deltas: Vec<DMatrix<f64>>,
}

impl ShapeField {
    pub fn zeros(frames: usize, n: usize) -> Self {
        Self {
            deltas: vec![DMatrix::zeros(n, 3); frames],
        }
    }

    pub fn steps(&self) -> usize {
        self.deltas.len() - 1
    }

    /// Writes `SFLD1 | T+1 | n | frames (row-major)`, little-endian.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.deltas.first().map_or(0, |d| d.nrows());
        let mut out = binary::header(SFLD_MAGIC, &[self.deltas.len() as u64, n as u64]);
        for d in &self.deltas {
            binary::push_f64s(
                &mut out,
                (0..n).flat_map(|i| (0..3).map(move |c| d[(i, c)])),
            );
        }
        write_bytes(path.as_ref(), &out)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_bytes(path)?;
        let mut r = binary::Reader::new(path, &bytes, SFLD_MAGIC)?;
        let frames = r.u64()? as usize;
        let n = r.u64()? as usize;
        let mut deltas = Vec::with_capacity(frames);
        for _ in 0..frames {
            deltas.push(DMatrix::from_row_slice(n, 3, &r.f64s(n * 3)?));
        }
        r.finish()?;
        if frames == 0 {
            return Err(Error::parse(path, 0, "shape field has no frames"));
        }
        Ok(Self { deltas })
    }
}

/// Which positions the final nearest-neighbor map is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalMapSource {
    /// `X(1) + Delta_s(1)`, the adapted last frame.
    #[default]
    Adapted,
    /// The blend at `t = 1, t_s = 1`, i.e. the pulled-back target frame.
    Blended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtaConfig {
    pub lambda_d: f64,
    pub iters: usize,
    pub step_size: f64,
    pub final_map: FinalMapSource,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            lambda_d: 0.1,
            iters: 2000,
            step_size: 1e-3,
            final_map: FinalMapSource::Adapted,
        }
    }
}

impl TtaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d >= 0.0) || !self.lambda_d.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda_d must be >= 0, got {}",
                self.lambda_d
            )));
        }
        if self.iters < 1 {
            return Err(Error::InvalidArgument("tta iters must be >= 1".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Objective history of one adapted frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub initial_chamfer: f64,
    pub final_chamfer: f64,
    pub best_objective: f64,
    pub iterations: usize,
    /// Running minimum of the objective after every evaluation.
    pub best_trace: Vec<f64>,
}

/// Adapted fields for every frame and their reports.
#[derive(Debug, Clone)]
pub struct Adaptation {
    pub field: ShapeField,
    pub frames: Vec<FrameReport>,
}

fn adapt_frame(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    ops: &Operators,
    cfg: &TtaConfig,
) -> Result<(DMatrix<f64>, FrameReport)> {
    let tree_y = KdTree::from_rows(y);
    let params = AdamParams {
        lr: cfg.step_size,
        ..Default::default()
    };
    let mut opt = VectorAdam::new(x.nrows(), 3, params);
    let mut delta = DMatrix::zeros(x.nrows(), 3);
    let mut best = (f64::INFINITY, delta.clone(), 0.0);
    let mut best_trace = Vec::with_capacity(cfg.iters);
    let mut initial = None;
    let mut iterations = 0;
    for it in 0..cfg.iters {
        iterations = it + 1;
        let moved = x + &delta;
        let (cd, mut g) = chamfer_grad(&moved, &tree_y, y)?;
        let ld = ops.laplacian.mul_dense(&delta);
        let objective = cd + cfg.lambda_d * delta.dot(&ld);
        if !objective.is_finite() {
            return Err(Error::Convergence(format!(
                "adaptation objective is not finite at iteration {it}"
            )));
        }
        initial.get_or_insert(cd);
        if objective < best.0 {
            best = (objective, delta.clone(), cd);
        }
        best_trace.push(best.0);
        g += ld * (2.0 * cfg.lambda_d);
        if g.iter().all(|v| *v == 0.0) || it + 1 == cfg.iters {
            break;
        }
        opt.step(&mut delta, &g);
    }
    let (best_objective, delta, final_chamfer) = best;
    Ok((
        delta,
        FrameReport {
            initial_chamfer: initial.expect("at least one iteration"),
            final_chamfer,
            best_objective,
            iterations,
            best_trace,
        },
    ))
}

/// Adapts every frame `k` of `traj_x` towards frame `T - k` of `traj_y`
/// independently, starting from zero fields.
pub fn adapt(
    traj_x: &Trajectory,
    traj_y: &Trajectory,
    mesh_x: &Mesh,
    cfg: &TtaConfig,
) -> Result<Adaptation> {
    cfg.validate()?;
    let t = traj_x.steps();
    check_dim("trajectory steps", t, traj_y.steps())?;
    check_dim("X trajectory vertices", mesh_x.n_vertices(), traj_x.n())?;
    let ops = build_operators(mesh_x)?;
    let results: Vec<_> = (0..=t)
        .into_par_iter()
        .map(|k| adapt_frame(&traj_x.frames[k], &traj_y.frames[t - k], &ops, cfg))
        .collect::<Result<_>>()?;
    let (deltas, frames) = results.into_iter().unzip();
    Ok(Adaptation {
        field: ShapeField { deltas },
        frames,
    })
}

/// `(1 - t_s)(X_k + Delta_s(k)) + t_s (Pi_XY Y_{T-k})` on X's vertices.
pub fn blend(
    traj_x: &Trajectory,
    traj_y: &Trajectory,
    field: &ShapeField,
    pi_xy: &PointMap,
    k: usize,
    t_s: f64,
) -> Result<DMatrix<f64>> {
    let t = traj_x.steps();
    check_dim("trajectory steps", t, traj_y.steps())?;
    check_dim("shape field steps", t, field.steps())?;
    if k > t {
        return Err(Error::Dimension(format!(
            "frame {k} out of range for T = {t}"
        )));
    }
    if !(0.0..=1.0).contains(&t_s) {
        return Err(Error::InvalidArgument(format!(
            "t_s must lie in [0, 1], got {t_s}"
        )));
    }
    let adapted = &traj_x.frames[k] + &field.deltas[k];
    let pulled = pi_xy.pull(&traj_y.frames[t - k])?;
    check_dim("pulled frame rows", adapted.nrows(), pulled.nrows())?;
    Ok(adapted * (1.0 - t_s) + pulled * t_s)
}

/// Nearest vertex of `target` for every row of `positions`, ties to the smallest index.
pub fn final_pointmap(target: &DMatrix<f64>, positions: &DMatrix<f64>) -> Result<PointMap> {
    check_points("target", target)?;
    check_dim("position columns", 3, positions.ncols())?;
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "positions contain non-finite values".into(),
        ));
    }
    let nn = KdTree::from_rows(target).nearest_rows(positions);
    PointMap::hard(nn.into_iter().map(|(j, _)| j).collect(), target.nrows())
}

/// Final `X -> Y` map from an adaptation, per the configured source positions.
pub fn final_map_from(
    traj_x: &Trajectory,
    traj_y: &Trajectory,
    field: &ShapeField,
    pi_xy: &PointMap,
    source: FinalMapSource,
) -> Result<PointMap> {
    let t_s = match source {
        FinalMapSource::Adapted => 0.0,
        FinalMapSource::Blended => 1.0,
    };
    let positions = blend(traj_x, traj_y, field, pi_xy, traj_x.steps(), t_s)?;
    final_pointmap(traj_y.source(), &positions)
}
