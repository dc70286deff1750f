//! Time-discretized trajectories between matched shapes, the spatial loss and
//! direct trajectory optimization.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::PointMap;
use crate::error::{check_dim, Error, Result};
use crate::io::{load_mesh, write_obj, MeshFormat};
use crate::mesh::Mesh;
use crate::operators::build_operators;
use crate::optim::{Adam, AdamParams};

/// Frames `X_0 .. X_T`, each `n x 3`, with `X_0` the source positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<DMatrix<f64>>,
}

impl Trajectory {
    /// The straight path from `source` to `target` in `steps` steps.
    pub fn linear(source: &DMatrix<f64>, target: &DMatrix<f64>, steps: usize) -> Result<Self> {
        check_dim("trajectory target rows", source.nrows(), target.nrows())?;
        check_dim("trajectory target columns", 3, target.ncols())?;
        check_dim("trajectory source columns", 3, source.ncols())?;
        if steps < 1 {
            return Err(Error::InvalidArgument(
                "trajectory needs at least one step".into(),
            ));
        }
        let delta = target - source;
        let mut frames = vec![source.clone()];
        for k in 1..=steps {
            frames.push(source + &delta * (k as f64 / steps as f64));
        }
        Ok(Self { frames })
    }

    pub fn constant(source: &DMatrix<f64>, steps: usize) -> Result<Self> {
        Self::linear(source, source, steps)
    }

    /// Number of steps `T`; there are `T + 1` frames.
    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn n(&self) -> usize {
        self.frames[0].nrows()
    }

    pub fn source(&self) -> &DMatrix<f64> {
        &self.frames[0]
    }

    pub fn last(&self) -> &DMatrix<f64> {
        &self.frames[self.steps()]
    }

    /// Writes `frame_0000.obj`, `frame_0001.obj`, ... with the connectivity of `mesh`.
    pub fn write_frames(&self, dir: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, f) in self.frames.iter().enumerate() {
            write_obj(
                dir.join(format!("frame_{k:04}.obj")),
                &mesh.with_positions(f)?,
            )?;
        }
        Ok(())
    }

    /// Reads `frame_0000.obj ..= frame_{steps}.obj` back; all frames must share a vertex count.
    pub fn read_frames(dir: impl AsRef<Path>, steps: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let mut frames = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let m = load_mesh(dir.join(format!("frame_{k:04}.obj")), Some(MeshFormat::Obj))?;
            if let Some(f0) = frames.first() {
                check_dim("frame vertices", DMatrix::nrows(f0), m.n_vertices())?;
            }
            frames.push(m.positions());
        }
        Ok(Self { frames })
    }
}

/// Loss weights of the spatial objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialWeights {
    pub align: f64,
    pub arap: f64,
    pub sym: f64,
    pub var: f64,
}

impl Default for SpatialWeights {
    fn default() -> Self {
        Self {
            align: 5.0,
            arap: 100.0,
            sym: 1.0,
            var: 1.0,
        }
    }
}

impl SpatialWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("align", self.align),
            ("arap", self.arap),
            ("sym", self.sym),
            ("var", self.var),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "spatial weight {name} must be >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Weighted one-ring graph used by the ARAP energy.
#[derive(Debug, Clone)]
pub struct ArapGraph {
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl ArapGraph {
    /// Unit weight on every one-ring edge.
    pub fn uniform(mesh: &Mesh) -> Self {
        Self {
            neighbors: mesh
                .one_rings()
                .into_iter()
                .map(|r| r.into_iter().map(|j| (j, 1.0)).collect())
                .collect(),
        }
    }

    /// Cotangent weights `-L_ij`, with negative weights (obtuse pairs) clamped to zero.
    pub fn cotangent(mesh: &Mesh) -> Result<Self> {
        let ops = build_operators(mesh)?;
        let neighbors = (0..mesh.n_vertices())
            .map(|i| {
                ops.laplacian
                    .row(i)
                    .filter(|&(j, _)| j != i)
                    .map(|(j, w)| (j, (-w).max(0.0)))
                    .collect()
            })
            .collect();
        Ok(Self { neighbors })
    }

    pub fn build(mesh: &Mesh, cotangent: bool) -> Result<Self> {
        if cotangent {
            Self::cotangent(mesh)
        } else {
            Ok(Self::uniform(mesh))
        }
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }
}

fn row3(m: &DMatrix<f64>, i: usize) -> Vector3<f64> {
    Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)])
}

fn add_row3(m: &mut DMatrix<f64>, i: usize, v: &Vector3<f64>) {
    for c in 0..3 {
        m[(i, c)] += v[c];
    }
}

/// Closest proper rotation `R` maximizing `tr(R S)`.
pub(crate) fn best_rotation(s: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = s.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut v = v_t.transpose();
    if (v * u.transpose()).determinant() < 0.0 {
        let weakest = svd.singular_values.imin();
        v.column_mut(weakest).neg_mut();
    }
    v * u.transpose()
}

/// Per-vertex optimal rotations taking the edges of `p` to those of `q`.
pub fn arap_rotations(graph: &ArapGraph, p: &DMatrix<f64>, q: &DMatrix<f64>) -> Vec<Matrix3<f64>> {
    (0..graph.n())
        .into_par_iter()
        .map(|i| {
            let (pi, qi) = (row3(p, i), row3(q, i));
            let mut s = Matrix3::zeros();
            for &(j, w) in &graph.neighbors[i] {
                s += w * (pi - row3(p, j)) * (qi - row3(q, j)).transpose();
            }
            best_rotation(&s)
        })
        .collect()
}

/// ARAP energy of deforming `p` into `q` and the optimal per-vertex rotations.
pub fn arap_energy(
    graph: &ArapGraph,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<(f64, Vec<Matrix3<f64>>)> {
    check_dim("ARAP rest positions", graph.n(), p.nrows())?;
    check_dim("ARAP deformed positions", graph.n(), q.nrows())?;
    if p == q {
        // exact zero instead of SVD round-off
        return Ok((0.0, vec![Matrix3::identity(); graph.n()]));
    }
    let rot = arap_rotations(graph, p, q);
    let mut energy = 0.0;
    for (i, r) in rot.iter().enumerate() {
        let (pi, qi) = (row3(p, i), row3(q, i));
        for &(j, w) in &graph.neighbors[i] {
            energy += w * (r * (pi - row3(p, j)) - (qi - row3(q, j))).norm_squared();
        }
    }
    Ok((energy, rot))
}

/// ARAP energy with gradients in `p` and `q`, rotations held at their optimum.
pub fn arap_energy_grad(
    graph: &ArapGraph,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let (_, rot) = arap_energy(graph, p, q)?;
    let n = graph.n();
    if p == q {
        return Ok((0.0, DMatrix::zeros(n, 3), DMatrix::zeros(n, 3)));
    }
    let (mut dp, mut dq) = (DMatrix::zeros(n, 3), DMatrix::zeros(n, 3));
    let mut energy = 0.0;
    for (i, r) in rot.iter().enumerate() {
        let (pi, qi) = (row3(p, i), row3(q, i));
        for &(j, w) in &graph.neighbors[i] {
            let res = r * (pi - row3(p, j)) - (qi - row3(q, j));
            energy += w * res.norm_squared();
            let gq = 2.0 * w * res;
            let gp = r.transpose() * gq;
            add_row3(&mut dp, i, &gp);
            add_row3(&mut dp, j, &-gp);
            add_row3(&mut dq, i, &-gq);
            add_row3(&mut dq, j, &gq);
        }
    }
    Ok((energy, dp, dq))
}

/// Value, per-term breakdown and gradients of the spatial loss.
#[derive(Debug, Clone)]
pub struct SpatialLoss {
    pub total: f64,
    pub align: f64,
    pub arap: f64,
    pub sym: f64,
    pub var: f64,
    /// Gradients for frames `0..=T`; entry 0 is reported but frame 0 is pinned.
    pub d_x: Vec<DMatrix<f64>>,
    pub d_y: Vec<DMatrix<f64>>,
}

/// The two shapes of a spatial problem with their maps: `pi_xy` sends X vertices
/// to Y positions (`n_x x n_y`), `pi_yx` the reverse.
pub struct SpatialProblem<'a> {
    pub graph_x: &'a ArapGraph,
    pub graph_y: &'a ArapGraph,
    pub pi_xy: &'a PointMap,
    pub pi_yx: &'a PointMap,
    pub weights: SpatialWeights,
}

struct Terms {
    align: f64,
    arap: f64,
    sym: f64,
    var: f64,
}

/// Adds one direction's terms: `a` is the trajectory being scored, `b` the other
/// one, `pi` maps `a`'s vertices onto `b`'s positions.
fn one_direction(
    graph: &ArapGraph,
    a: &Trajectory,
    b: &Trajectory,
    pi: &PointMap,
    w: &SpatialWeights,
    da: &mut [DMatrix<f64>],
    db: &mut [DMatrix<f64>],
) -> Result<Terms> {
    let t = a.steps();
    let n = a.n();
    // residual of X_k against the pulled-back Y_{T-k}, for k = 0..=T
    let res: Vec<DMatrix<f64>> = (0..=t)
        .map(|k| Ok(&a.frames[k] - pi.pull(&b.frames[t - k])?))
        .collect::<Result<_>>()?;
    let mut dres: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, 3); t + 1];

    let align = res[t].norm_squared();
    dres[t] += &res[t] * (2.0 * w.align);

    let mut arap = 0.0;
    if w.arap > 0.0 {
        for k in 0..t {
            let (e, dp, dq) = arap_energy_grad(graph, &a.frames[k], &a.frames[k + 1])?;
            arap += e;
            da[k] += dp * w.arap;
            da[k + 1] += dq * w.arap;
        }
    } else {
        for k in 0..t {
            arap += arap_energy(graph, &a.frames[k], &a.frames[k + 1])?.0;
        }
    }

    let mut sym = 0.0;
    for k in 1..t {
        sym += res[k].norm_squared();
        dres[k] += &res[k] * (2.0 * w.sym);
    }

    // per-vertex variance of |r_k| over k = 1..T, divisor T - 1
    let mut var = 0.0;
    let denom = (t - 1) as f64;
    for i in 0..n {
        let mags: Vec<f64> = (1..=t).map(|k| res[k].row(i).norm()).collect();
        let mean = mags.iter().sum::<f64>() / t as f64;
        var += mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / denom;
        for (k, m) in (1..=t).zip(&mags) {
            if *m > 0.0 {
                let s = w.var * 2.0 * (m - mean) / denom / m;
                for c in 0..3 {
                    dres[k][(i, c)] += s * res[k][(i, c)];
                }
            }
        }
    }

    for k in 0..=t {
        da[k] += &dres[k];
        db[t - k] -= pi.push(&dres[k])?;
    }
    Ok(Terms {
        align,
        arap,
        sym,
        var,
    })
}

/// Spatial loss over both trajectories and its gradients.
pub fn spatial_loss(
    problem: &SpatialProblem,
    traj_x: &Trajectory,
    traj_y: &Trajectory,
) -> Result<SpatialLoss> {
    let t = traj_x.steps();
    check_dim("trajectory steps", t, traj_y.steps())?;
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "spatial loss needs T >= 2, got {t}"
        )));
    }
    let (nx, ny) = (traj_x.n(), traj_y.n());
    check_dim("X trajectory vertices", problem.graph_x.n(), nx)?;
    check_dim("Y trajectory vertices", problem.graph_y.n(), ny)?;
    for (what, pi, src, dst) in [
        ("Pi_XY", problem.pi_xy, nx, ny),
        ("Pi_YX", problem.pi_yx, ny, nx),
    ] {
        check_dim(&format!("{what} source size"), src, pi.n_src())?;
        check_dim(&format!("{what} destination size"), dst, pi.n_dst())?;
    }
    let w = &problem.weights;
    let mut d_x = vec![DMatrix::zeros(nx, 3); t + 1];
    let mut d_y = vec![DMatrix::zeros(ny, 3); t + 1];
    let tx = one_direction(
        problem.graph_x,
        traj_x,
        traj_y,
        problem.pi_xy,
        w,
        &mut d_x,
        &mut d_y,
    )?;
    let ty = one_direction(
        problem.graph_y,
        traj_y,
        traj_x,
        problem.pi_yx,
        w,
        &mut d_y,
        &mut d_x,
    )?;
    let (align, arap, sym, var) = (
        tx.align + ty.align,
        tx.arap + ty.arap,
        tx.sym + ty.sym,
        tx.var + ty.var,
    );
    Ok(SpatialLoss {
        total: w.align * align + w.arap * arap + w.sym * sym + w.var * var,
        align,
        arap,
        sym,
        var,
        d_x,
        d_y,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolationConfig {
    /// Steps `T`; frames are `X(k / T)` for `k = 0..=T`.
    pub steps: usize,
    pub iters: usize,
    pub step_size: f64,
    pub weights: SpatialWeights,
    /// Cotangent instead of uniform ARAP edge weights.
    pub cotangent_arap: bool,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        Self {
            steps: 6,
            iters: 500,
            step_size: 1e-3,
            weights: SpatialWeights::default(),
            cotangent_arap: false,
        }
    }
}

impl InterpolationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "interpolation steps must be >= 2, got {}",
                self.steps
            )));
        }
        if self.iters < 1 {
            return Err(Error::InvalidArgument(
                "interpolation iters must be >= 1".into(),
            ));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        self.weights.validate()
    }
}

/// Optimized trajectory pair at the best iterate.
#[derive(Debug, Clone)]
pub struct Interpolation {
    pub x: Trajectory,
    pub y: Trajectory,
    pub trace: Vec<f64>,
    pub best_iter: usize,
    /// Loss breakdown at the best iterate.
    pub best: SpatialLossSummary,
    /// Loss breakdown on the linear initialization.
    pub initial: SpatialLossSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialLossSummary {
    pub total: f64,
    pub align: f64,
    pub arap: f64,
    pub sym: f64,
    pub var: f64,
}

impl From<&SpatialLoss> for SpatialLossSummary {
    fn from(l: &SpatialLoss) -> Self {
        Self {
            total: l.total,
            align: l.align,
            arap: l.arap,
            sym: l.sym,
            var: l.var,
        }
    }
}

/// Optimizes frames `1..=T` of both trajectories from the linear path
/// `X_k = X + (k/T)(Pi_XY Y - X)`, keeping frame 0 fixed.
pub fn optimize_trajectory(
    mesh_x: &Mesh,
    mesh_y: &Mesh,
    pi_xy: &PointMap,
    pi_yx: &PointMap,
    cfg: &InterpolationConfig,
) -> Result<Interpolation> {
    cfg.validate()?;
    let graph_x = ArapGraph::build(mesh_x, cfg.cotangent_arap)?;
    let graph_y = ArapGraph::build(mesh_y, cfg.cotangent_arap)?;
    let problem = SpatialProblem {
        graph_x: &graph_x,
        graph_y: &graph_y,
        pi_xy,
        pi_yx,
        weights: cfg.weights,
    };
    let (px, py) = (mesh_x.positions(), mesh_y.positions());
    let t = cfg.steps;
    let mut x = Trajectory::linear(&px, &pi_xy.pull(&py)?, t)?;
    let mut y = Trajectory::linear(&py, &pi_yx.pull(&px)?, t)?;

    let params = AdamParams {
        lr: cfg.step_size,
        ..Default::default()
    };
    let (nx, ny) = (x.n(), y.n());
    let mut opt = Adam::new(3 * t * (nx + ny), params);
    let mut flat = vec![0.0; 3 * t * (nx + ny)];
    let mut grad = vec![0.0; flat.len()];

    let mut trace = Vec::with_capacity(cfg.iters);
    let mut initial = None;
    let mut best: Option<(usize, Trajectory, Trajectory, SpatialLossSummary)> = None;
    for it in 0..cfg.iters {
        let loss = spatial_loss(&problem, &x, &y)?;
        if !loss.total.is_finite() {
            return Err(Error::Convergence(format!(
                "spatial loss is not finite at iteration {it}"
            )));
        }
        trace.push(loss.total);
        let summary = SpatialLossSummary::from(&loss);
        initial.get_or_insert(summary);
        if best.as_ref().is_none_or(|b| loss.total < b.3.total) {
            best = Some((it, x.clone(), y.clone(), summary));
        }
        if it + 1 == cfg.iters {
            break;
        }
        pack(&x, &y, &mut flat);
        pack_grads(&loss, &mut grad);
        opt.step(&mut flat, &grad);
        unpack(&flat, &mut x, &mut y);
    }
    let (best_iter, x, y, best) = best.expect("at least one iteration");
    Ok(Interpolation {
        x,
        y,
        trace,
        best_iter,
        best,
        initial: initial.expect("at least one iteration"),
    })
}

fn free_frames<'a>(
    x: &'a [DMatrix<f64>],
    y: &'a [DMatrix<f64>],
) -> impl Iterator<Item = &'a DMatrix<f64>> {
    x[1..].iter().chain(y[1..].iter())
}

fn pack(x: &Trajectory, y: &Trajectory, out: &mut [f64]) {
    let mut at = 0;
    for f in free_frames(&x.frames, &y.frames) {
        out[at..at + f.len()].copy_from_slice(f.as_slice());
        at += f.len();
    }
}

fn pack_grads(loss: &SpatialLoss, out: &mut [f64]) {
    let mut at = 0;
    for f in free_frames(&loss.d_x, &loss.d_y) {
        out[at..at + f.len()].copy_from_slice(f.as_slice());
        at += f.len();
    }
}

fn unpack(flat: &[f64], x: &mut Trajectory, y: &mut Trajectory) {
    let mut at = 0;
    for f in x.frames[1..].iter_mut().chain(y.frames[1..].iter_mut()) {
        let len = f.len();
        f.as_mut_slice().copy_from_slice(&flat[at..at + len]);
        at += len;
    }
}

/// JSON manifest written next to exported frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub steps: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub weights: SpatialWeights,
    pub best_iter: usize,
    pub initial: SpatialLossSummary,
    pub best: SpatialLossSummary,
    pub trace: Vec<f64>,
}

impl Interpolation {
    pub fn manifest(&self, weights: SpatialWeights) -> TrajectoryManifest {
        TrajectoryManifest {
            steps: self.x.steps(),
            n_x: self.x.n(),
            n_y: self.y.n(),
            weights,
            best_iter: self.best_iter,
            initial: self.initial,
            best: self.best,
            trace: self.trace.clone(),
        }
    }
}
