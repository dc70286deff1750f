//! Point-wise maps from feature similarity and per-pair feature optimization
//! under the spectral loss.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixViewMut};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::EigenBasis;
use crate::descriptors::FeatureField;
use crate::error::{check_dim, Error, Result};
use crate::fmap::{
    fmap_to_pointmap, resolvent_mask, spectral_terms, weighted, FmapSolve, FunctionalMap,
    ResolventMask, SpectralWeights,
};
use crate::io::{read_bytes, write_bytes};
use crate::optim::{Adam, AdamParams};

/// Correspondence from a source vertex set to a destination vertex set.
#[derive(Debug, Clone, PartialEq)]
pub enum PointMap {
    /// Row-stochastic `n_src x n_dst` matrix.
    Soft(DMatrix<f64>),
    /// Destination index per source vertex.
    Hard { indices: Vec<usize>, n_dst: usize },
}

impl PointMap {
    pub fn identity(n: usize) -> Self {
        PointMap::Hard {
            indices: (0..n).collect(),
            n_dst: n,
        }
    }

    pub fn hard(indices: Vec<usize>, n_dst: usize) -> Result<Self> {
        if let Some((i, &j)) = indices.iter().enumerate().find(|(_, &j)| j >= n_dst) {
            return Err(Error::InvalidArgument(format!(
                "point map entry {i} is {j}, destination has {n_dst} vertices"
            )));
        }
        Ok(PointMap::Hard { indices, n_dst })
    }

    pub fn n_src(&self) -> usize {
        match self {
            PointMap::Soft(p) => p.nrows(),
            PointMap::Hard { indices, .. } => indices.len(),
        }
    }

    pub fn n_dst(&self) -> usize {
        match self {
            PointMap::Soft(p) => p.ncols(),
            PointMap::Hard { n_dst, .. } => *n_dst,
        }
    }

    pub fn as_hard(&self) -> Option<&[usize]> {
        match self {
            PointMap::Hard { indices, .. } => Some(indices),
            PointMap::Soft(_) => None,
        }
    }

    /// `Pi f` for an `n_dst x d` function on the destination.
    pub fn pull(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("pulled function rows", self.n_dst(), f.nrows())?;
        Ok(match self {
            PointMap::Soft(p) => p * f,
            PointMap::Hard { indices, .. } => {
                DMatrix::from_fn(indices.len(), f.ncols(), |i, c| f[(indices[i], c)])
            }
        })
    }

    /// `Pi^T g` for an `n_src x d` function on the source.
    pub fn push(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("pushed function rows", self.n_src(), g.nrows())?;
        Ok(match self {
            PointMap::Soft(p) => (g.transpose() * p).transpose(),
            PointMap::Hard { indices, n_dst } => {
                let mut out = DMatrix::zeros(*n_dst, g.ncols());
                for c in 0..g.ncols() {
                    for (i, &j) in indices.iter().enumerate() {
                        out[(j, c)] += g[(i, c)];
                    }
                }
                out
            }
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            PointMap::Soft(p) => p.clone(),
            PointMap::Hard { indices, n_dst } => {
                let mut d = DMatrix::zeros(indices.len(), *n_dst);
                for (i, &j) in indices.iter().enumerate() {
                    d[(i, j)] = 1.0;
                }
                d
            }
        }
    }

    /// Writes a hard map as text, one 0-based destination index per line.
    pub fn write_hard(&self, path: impl AsRef<Path>) -> Result<()> {
        let indices = self
            .as_hard()
            .ok_or_else(|| Error::InvalidArgument("soft maps are not serialized".into()))?;
        let mut s = String::with_capacity(indices.len() * 6);
        for i in indices {
            writeln!(s, "{i}").expect("writing to a string");
        }
        write_bytes(path.as_ref(), s.as_bytes())
    }

    /// Reads a text hard map into a destination of `n_dst` vertices.
    pub fn read_hard(path: impl AsRef<Path>, n_dst: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::parse(path, 0, "not UTF-8 text"))?;
        let mut indices = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let j: usize = t.parse().map_err(|_| {
                Error::parse(
                    path,
                    no + 1,
                    format!("expected a vertex index, found {t:?}"),
                )
            })?;
            if j >= n_dst {
                return Err(Error::parse(
                    path,
                    no + 1,
                    format!("index {j} out of range for {n_dst} vertices"),
                ));
            }
            indices.push(j);
        }
        Ok(PointMap::Hard { indices, n_dst })
    }
}

/// `Pi_XY = softmax_rows(F_X F_Y^T / temperature)` for row-normalized features.
pub fn soft_correspondence(
    f_x: &FeatureField,
    f_y: &FeatureField,
    temperature: f64,
) -> Result<PointMap> {
    check_dim("feature dimension", f_x.dim(), f_y.dim())?;
    if !f_x.normalized || !f_y.normalized {
        return Err(Error::InvalidArgument(
            "soft correspondence needs row-normalized features".into(),
        ));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    // columns of the transposed similarity are the rows we normalize
    let mut t = &f_y.values * f_x.values.transpose() / temperature;
    softmax_columns(&mut t);
    Ok(PointMap::Soft(t.transpose()))
}

/// Softmax of every column, with max subtraction.
fn softmax_columns(m: &mut DMatrix<f64>) {
    let rows = m.nrows().max(1);
    m.as_mut_slice().par_chunks_mut(rows).for_each(|col| {
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in col.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in col.iter_mut() {
            *v /= total;
        }
    });
}

/// Per-row argmax of a soft map, ties to the smallest index; hard maps pass through.
pub fn harden(pi: &PointMap) -> PointMap {
    match pi {
        PointMap::Hard { .. } => pi.clone(),
        PointMap::Soft(p) => {
            let mut best = vec![(f64::NEG_INFINITY, 0usize); p.nrows()];
            for j in 0..p.ncols() {
                for (i, v) in p.column(j).iter().enumerate() {
                    if *v > best[i].0 {
                        best[i] = (*v, j);
                    }
                }
            }
            PointMap::Hard {
                indices: best.into_iter().map(|(_, j)| j).collect(),
                n_dst: p.ncols(),
            }
        }
    }
}

/// Hard map `X -> Y` maximizing feature similarity, the argmax of any soft map
/// built from the same features.
pub fn nearest_features(f_x: &FeatureField, f_y: &FeatureField) -> Result<PointMap> {
    check_dim("feature dimension", f_x.dim(), f_y.dim())?;
    let t = &f_y.values * f_x.values.transpose();
    let indices = t
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for (j, v) in col.iter().enumerate() {
                if *v > col[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Ok(PointMap::Hard {
        indices,
        n_dst: f_y.n(),
    })
}

/// How hard maps are read off an optimized pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapExport {
    /// Spectral nearest neighbour through the optimized functional maps.
    #[default]
    Spectral,
    /// Argmax of the soft maps.
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub temperature: f64,
    pub feature_dim: usize,
    pub iters: usize,
    pub step_size: f64,
    pub lambda_reg: f64,
    pub gamma: f64,
    pub weights: SpectralWeights,
    pub export: MapExport,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            feature_dim: 128,
            iters: 50,
            step_size: 1e-3,
            lambda_reg: 100.0,
            gamma: 0.5,
            weights: SpectralWeights::default(),
            export: MapExport::Spectral,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.iters < 1 {
            return bad("match iters must be >= 1".into());
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be >= 2".into());
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return bad(format!(
                "step_size must be positive, got {}",
                self.step_size
            ));
        }
        if !(self.lambda_reg >= 0.0) || !self.lambda_reg.is_finite() {
            return bad(format!("lambda_reg must be >= 0, got {}", self.lambda_reg));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        self.weights.validate()
    }
}

/// Spectral loss as a function of free per-vertex features on both shapes.
///
/// Features are row-normalized, projected into each basis to solve both
/// functional maps, and compared by a temperature softmax to build both soft
/// point maps; the loss couples the two.
pub struct SpectralObjective<'a> {
    basis_x: &'a EigenBasis,
    basis_y: &'a EigenBasis,
    mask_xy: ResolventMask,
    mask_yx: ResolventMask,
    pinv_x: DMatrix<f64>,
    pinv_y: DMatrix<f64>,
    mphi_x: DMatrix<f64>,
    mphi_y: DMatrix<f64>,
    temperature: f64,
    lambda_reg: f64,
    weights: SpectralWeights,
}

/// One evaluation of [`SpectralObjective`].
#[derive(Debug, Clone)]
pub struct FeatureLoss {
    pub value: f64,
    pub bij: f64,
    pub orth: f64,
    pub couple: f64,
    pub d_fx: DMatrix<f64>,
    pub d_fy: DMatrix<f64>,
    pub c_xy: FunctionalMap,
    pub c_yx: FunctionalMap,
}

fn normalize_rows(f: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut g = f.clone();
    let mut norms = Vec::with_capacity(f.nrows());
    for i in 0..f.nrows() {
        let n = f.row(i).norm();
        if !(n > 0.0) {
            return Err(Error::Degenerate(format!("feature row {i} is zero")));
        }
        g.row_mut(i).unscale_mut(n);
        norms.push(n);
    }
    Ok((g, norms))
}

/// Backward of row normalization: `(dg - g (g . dg)) / |f|`.
fn normalize_rows_backward(g: &DMatrix<f64>, norms: &[f64], dg: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = dg.clone();
    for i in 0..g.nrows() {
        let dot = g.row(i).dot(&dg.row(i));
        for c in 0..g.ncols() {
            out[(i, c)] = (dg[(i, c)] - g[(i, c)] * dot) / norms[i];
        }
    }
    out
}

/// In-place softmax backward over columns: `dq <- q * (dq - sum(q * dq))`.
fn softmax_columns_backward(q: &DMatrix<f64>, dq: &mut DMatrix<f64>) {
    let m = q.nrows().max(1);
    dq.as_mut_slice()
        .par_chunks_mut(m)
        .zip(q.as_slice().par_chunks(m))
        .for_each(|(dc, qc)| {
            let s: f64 = qc.iter().zip(dc.iter()).map(|(p, d)| p * d).sum();
            for (d, p) in dc.iter_mut().zip(qc) {
                *d = p * (*d - s);
            }
        });
}

// Fixed block sizes keep the result independent of the thread count.
const GEMM_BLOCK: usize = 128;

/// `a * b`, blocked over the output and computed in parallel.
fn par_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = (a.nrows(), b.ncols());
    if m == 0 || n == 0 || m.max(n) <= GEMM_BLOCK {
        return a * b;
    }
    let mut out = DMatrix::zeros(m, n);
    if n >= m {
        out.as_mut_slice()
            .par_chunks_mut(m * GEMM_BLOCK)
            .enumerate()
            .for_each(|(c, dst)| {
                let w = dst.len() / m;
                let mut view = DMatrixViewMut::from_slice(dst, m, w);
                view.gemm(1.0, a, &b.columns(c * GEMM_BLOCK, w), 0.0);
            });
    } else {
        let blocks: Vec<DMatrix<f64>> = (0..m.div_ceil(GEMM_BLOCK))
            .into_par_iter()
            .map(|r| {
                let h = GEMM_BLOCK.min(m - r * GEMM_BLOCK);
                a.rows(r * GEMM_BLOCK, h) * b
            })
            .collect();
        for (r, block) in blocks.iter().enumerate() {
            out.rows_mut(r * GEMM_BLOCK, block.nrows()).copy_from(block);
        }
    }
    out
}

impl<'a> SpectralObjective<'a> {
    pub fn new(
        basis_x: &'a EigenBasis,
        basis_y: &'a EigenBasis,
        cfg: &MatchConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mask_xy = resolvent_mask(
            basis_x.lambda.as_slice(),
            basis_y.lambda.as_slice(),
            cfg.gamma,
        )?;
        let mask_yx = mask_xy.transposed();
        Ok(Self {
            basis_x,
            basis_y,
            mask_xy,
            mask_yx,
            pinv_x: basis_x.pinv(),
            pinv_y: basis_y.pinv(),
            mphi_x: weighted(&basis_x.phi, &basis_x.mass),
            mphi_y: weighted(&basis_y.phi, &basis_y.mass),
            temperature: cfg.temperature,
            lambda_reg: cfg.lambda_reg,
            weights: cfg.weights,
        })
    }

    pub fn evaluate(&self, fx: &DMatrix<f64>, fy: &DMatrix<f64>) -> Result<FeatureLoss> {
        check_dim("X feature rows", self.basis_x.n(), fx.nrows())?;
        check_dim("Y feature rows", self.basis_y.n(), fy.nrows())?;
        check_dim("feature dimension", fx.ncols(), fy.ncols())?;
        let (phi_x, phi_y) = (&self.basis_x.phi, &self.basis_y.phi);
        let tau = self.temperature;

        let (gx, nx) = normalize_rows(fx)?;
        let (gy, ny) = normalize_rows(fy)?;
        let a = &self.pinv_x * &gx;
        let b = &self.pinv_y * &gy;
        let s_xy = FmapSolve::new(&a, &b, &self.mask_xy, self.lambda_reg)?;
        let s_yx = FmapSolve::new(&b, &a, &self.mask_yx, self.lambda_reg)?;

        // qy = Pi_YX^T (columns indexed by Y vertices), qx = Pi_XY^T
        let mut qy = par_mul(&gx, &gy.transpose()) / tau;
        let mut qx = qy.transpose();
        softmax_columns(&mut qy);
        softmax_columns(&mut qx);

        // transposed products keep the n x n factor on the fast gemm path
        let p_xy = &self.pinv_y * par_mul(&phi_x.transpose(), &qy).transpose();
        let p_yx = &self.pinv_x * par_mul(&phi_y.transpose(), &qx).transpose();
        let terms = spectral_terms(&s_xy.map, &s_yx.map, &p_xy, &p_yx, &self.weights)?;
        if !terms.total.is_finite() {
            return Err(Error::Convergence("spectral loss is not finite".into()));
        }

        // dPi_YX = M_Y Phi_Y dP_XY Phi_X^T, so dqy = Phi_X dP_XY^T (M_Y Phi_Y)^T
        let mut dqy = par_mul(
            &(phi_x * terms.d_p_xy.transpose()),
            &self.mphi_y.transpose(),
        );
        let mut dqx = par_mul(
            &(phi_y * terms.d_p_yx.transpose()),
            &self.mphi_x.transpose(),
        );
        softmax_columns_backward(&qy, &mut dqy);
        softmax_columns_backward(&qx, &mut dqx);
        drop(qy);
        drop(qx);
        // S = Gx Gy^T / tau enters qy directly and qx transposed
        let ds = dqy + dqx.transpose();
        let mut dgx = par_mul(&ds, &gy) / tau;
        let mut dgy = par_mul(&gx.transpose(), &ds).transpose() / tau;
        drop(ds);

        let (da1, db1) = s_xy.backward(&a, &b, &terms.d_cxy);
        let (db2, da2) = s_yx.backward(&b, &a, &terms.d_cyx);
        dgx += &self.mphi_x * (da1 + da2);
        dgy += &self.mphi_y * (db1 + db2);

        Ok(FeatureLoss {
            value: terms.total,
            bij: terms.bij,
            orth: terms.orth,
            couple: terms.couple,
            d_fx: normalize_rows_backward(&gx, &nx, &dgx),
            d_fy: normalize_rows_backward(&gy, &ny, &dgy),
            c_xy: s_xy.map,
            c_yx: s_yx.map,
        })
    }
}

/// Result of [`optimize_features`], taken at the best iterate.
#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Row-normalized features.
    pub features: (FeatureField, FeatureField),
    pub c_xy: FunctionalMap,
    pub c_yx: FunctionalMap,
    /// Loss at every evaluated iterate.
    pub trace: Vec<f64>,
    pub best_iter: usize,
    pub temperature: f64,
    /// Exported hard maps `(X -> Y, Y -> X)`.
    pub maps: (PointMap, PointMap),
}

impl MatchResult {
    pub fn best_loss(&self) -> f64 {
        self.trace[self.best_iter]
    }

    /// Soft maps `(Pi_XY, Pi_YX)` at the returned features.
    pub fn soft_maps(&self) -> Result<(PointMap, PointMap)> {
        let (fx, fy) = &self.features;
        Ok((
            soft_correspondence(fx, fy, self.temperature)?,
            soft_correspondence(fy, fx, self.temperature)?,
        ))
    }

    /// Argmax of the soft maps `(X -> Y, Y -> X)`.
    pub fn feature_maps(&self) -> Result<(PointMap, PointMap)> {
        let (fx, fy) = &self.features;
        Ok((nearest_features(fx, fy)?, nearest_features(fy, fx)?))
    }
}

/// Minimizes the spectral loss over free features initialized from `init`.
///
/// Each iteration evaluates the loss and its gradient and takes one Adam step;
/// the best evaluated iterate is returned.
pub fn optimize_features(
    basis_x: &EigenBasis,
    basis_y: &EigenBasis,
    init: (&FeatureField, &FeatureField),
    cfg: &MatchConfig,
) -> Result<MatchResult> {
    check_dim("basis size", basis_x.k(), basis_y.k())?;
    let objective = SpectralObjective::new(basis_x, basis_y, cfg)?;
    let mut fx = init.0.values.clone();
    let mut fy = init.1.values.clone();
    let params = AdamParams {
        lr: cfg.step_size,
        ..Default::default()
    };
    let mut opt_x = Adam::new(fx.len(), params);
    let mut opt_y = Adam::new(fy.len(), params);

    let mut trace = Vec::with_capacity(cfg.iters);
    let mut best: Option<(usize, DMatrix<f64>, DMatrix<f64>, FeatureLoss)> = None;
    for it in 0..cfg.iters {
        let loss = objective.evaluate(&fx, &fy)?;
        trace.push(loss.value);
        if best.as_ref().is_none_or(|b| loss.value < b.3.value) {
            best = Some((it, fx.clone(), fy.clone(), loss.clone()));
        }
        if it + 1 < cfg.iters {
            opt_x.step(fx.as_mut_slice(), loss.d_fx.as_slice());
            opt_y.step(fy.as_mut_slice(), loss.d_fy.as_slice());
        }
    }
    let (best_iter, bx, by, loss) = best.expect("at least one iteration");
    let gx = normalize_rows(&bx)?.0;
    let gy = normalize_rows(&by)?.0;
    let features = (
        FeatureField {
            values: gx,
            normalized: true,
        },
        FeatureField {
            values: gy,
            normalized: true,
        },
    );
    let maps = match cfg.export {
        MapExport::Spectral => (
            fmap_to_pointmap(&loss.c_yx, basis_y, basis_x)?,
            fmap_to_pointmap(&loss.c_xy, basis_x, basis_y)?,
        ),
        MapExport::Features => (
            nearest_features(&features.0, &features.1)?,
            nearest_features(&features.1, &features.0)?,
        ),
    };
    Ok(MatchResult {
        features,
        c_xy: loss.c_xy,
        c_yx: loss.c_yx,
        trace,
        best_iter,
        temperature: cfg.temperature,
        maps,
    })
}
