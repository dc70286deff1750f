//! Point distribution models over corresponded shapes: rigid generalized
//! Procrustes alignment, PCA, and generality/specificity scores.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::interpolation::best_rotation;
use crate::io::{binary, read_bytes, write_bytes};
use crate::spatial::KdTree;
use crate::tta::chamfer;

const SSM_MAGIC: &[u8] = b"SSM1\n";

/// Modes whose variance falls below this fraction of the largest are dropped.
const RELATIVE_VARIANCE_FLOOR: f64 = 1e-12;
/// Modes whose variance falls below this fraction of the mean squared vertex
/// norm are round-off and dropped too.
const ABSOLUTE_VARIANCE_FLOOR: f64 = 1e-20;

/// Mean shape plus principal modes of variation.
#[derive(Debug, Clone, PartialEq)]
pub struct SsModel {
    /// `n x 3`.
    pub mean: DMatrix<f64>,
    /// `q x 3n`, orthonormal rows; a shape flattens row-major (`x0 y0 z0 x1 ...`).
    pub components: DMatrix<f64>,
    /// Descending.
    pub variances: Vec<f64>,
    /// Training shapes after alignment, each `n x 3`.
    pub aligned: Vec<DMatrix<f64>>,
}

fn flatten(s: &DMatrix<f64>) -> Vec<f64> {
    (0..s.nrows())
        .flat_map(|i| (0..3).map(move |c| s[(i, c)]))
        .collect()
}

fn unflatten(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(v.len() / 3, 3, v)
}

fn centered(s: &DMatrix<f64>) -> DMatrix<f64> {
    let c = s.row_mean();
    let mut out = s.clone();
    for mut row in out.row_iter_mut() {
        row -= &c;
    }
    out
}

/// Rigidly aligns the centered shape `s` onto `target` (both centered).
fn rotate_onto(s: &DMatrix<f64>, target: &DMatrix<f64>) -> DMatrix<f64> {
    let mut cov = Matrix3::zeros();
    for i in 0..s.nrows() {
        let p = Vector3::new(s[(i, 0)], s[(i, 1)], s[(i, 2)]);
        let q = Vector3::new(target[(i, 0)], target[(i, 1)], target[(i, 2)]);
        cov += p * q.transpose();
    }
    let r = best_rotation(&cov);
    let rt = DMatrix::from_column_slice(3, 3, r.transpose().as_slice());
    s * rt
}

/// Generalized Procrustes: translation and rotation, no scaling, aligned to
/// the evolving mean. Returns the mean and aligned shapes.
pub fn procrustes(shapes: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::EmptyInput("no shapes".into()))?;
    let n = first.nrows();
    for s in shapes {
        check_dim("shape vertices", n, s.nrows())?;
        check_dim("shape columns", 3, s.ncols())?;
    }
    if n == 0 {
        return Err(Error::EmptyInput("shapes have no vertices".into()));
    }
    let centered: Vec<DMatrix<f64>> = shapes.iter().map(centered).collect();
    let mut mean = centered[0].clone();
    let mut aligned = centered.clone();
    for _ in 0..200 {
        aligned = centered.iter().map(|s| rotate_onto(s, &mean)).collect();
        let next =
            aligned.iter().fold(DMatrix::zeros(n, 3), |acc, s| acc + s) / shapes.len() as f64;
        let change = (&next - &mean).norm();
        mean = next;
        if change <= 1e-14 * mean.norm().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok((mean, aligned))
}

/// Builds a model with at most `q` modes from corresponded `n x 3` shapes.
///
/// Variances are eigenvalues of the population covariance (divisor = shape
/// count) of the aligned shapes; modes with negligible variance are dropped.
pub fn build_ssm(shapes: &[DMatrix<f64>], q: usize) -> Result<SsModel> {
    let m = shapes.len();
    if m < 2 {
        return Err(Error::Dimension(format!(
            "a shape model needs at least 2 shapes, got {m}"
        )));
    }
    if q == 0 || q > m - 1 {
        return Err(Error::Dimension(format!(
            "mode count must be in 1..={}, got {q}",
            m - 1
        )));
    }
    let (mean, aligned) = procrustes(shapes)?;
    let mean_flat = flatten(&mean);
    let width = mean_flat.len();
    let mut data = DMatrix::zeros(m, width);
    for (r, s) in aligned.iter().enumerate() {
        for (c, (v, mu)) in flatten(s).iter().zip(&mean_flat).enumerate() {
            data[(r, c)] = v - mu;
        }
    }
    let svd = data.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let variances: Vec<f64> = order
        .iter()
        .map(|&i| svd.singular_values[i].powi(2) / m as f64)
        .collect();
    let top = variances.first().copied().unwrap_or(0.0);
    let floor = (RELATIVE_VARIANCE_FLOOR * top).max(ABSOLUTE_VARIANCE_FLOOR * mean.norm_squared());
    let keep = variances.iter().take(q).take_while(|&&v| v > floor).count();
    let mut components = DMatrix::zeros(keep, width);
    for (r, &i) in order.iter().take(keep).enumerate() {
        let row = v_t.row(i);
        // fix the sign so the largest-magnitude entry is positive
        let lead = row
            .iter()
            .copied()
            .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for c in 0..width {
            components[(r, c)] = sign * row[c];
        }
    }
    Ok(SsModel {
        mean,
        components,
        variances: variances[..keep].to_vec(),
        aligned,
    })
}

impl SsModel {
    pub fn n(&self) -> usize {
        self.mean.nrows()
    }

    pub fn modes(&self) -> usize {
        self.variances.len()
    }

    /// `mean + sum_j c_j sqrt(var_j) u_j`; missing coefficients count as zero.
    pub fn sample(&self, coefficients: &[f64]) -> Result<DMatrix<f64>> {
        if coefficients.len() > self.modes() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a model with {} modes",
                coefficients.len(),
                self.modes()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        let mut flat = flatten(&self.mean);
        for (j, c) in coefficients.iter().enumerate() {
            let s = c * self.variances[j].sqrt();
            for (f, u) in flat.iter_mut().zip(self.components.row(j).iter()) {
                *f += s * u;
            }
        }
        Ok(unflatten(&flat))
    }

    /// Aligns `shape` to the mean and projects it onto the first `q` modes.
    /// Returns `(reconstruction, aligned shape)`.
    pub fn reconstruct(
        &self,
        shape: &DMatrix<f64>,
        q: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dim("shape vertices", self.n(), shape.nrows())?;
        check_dim("shape columns", 3, shape.ncols())?;
        let aligned = rotate_onto(&centered(shape), &self.mean);
        let mean = flatten(&self.mean);
        let resid: Vec<f64> = flatten(&aligned)
            .iter()
            .zip(&mean)
            .map(|(a, m)| a - m)
            .collect();
        let mut out = mean;
        for j in 0..q.min(self.modes()) {
            let u = self.components.row(j);
            let coeff: f64 = u.iter().zip(&resid).map(|(a, b)| a * b).sum();
            for (o, v) in out.iter_mut().zip(u.iter()) {
                *o += coeff * v;
            }
        }
        Ok((unflatten(&out), aligned))
    }

    /// Writes `SSM1\n`, a one-line JSON header, then the mean, the components
    /// and the aligned shapes as little-endian f64.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = SsmHeader {
            n: self.n(),
            modes: self.modes(),
            shapes: self.aligned.len(),
            variances: self.variances.clone(),
        };
        let mut out = SSM_MAGIC.to_vec();
        out.extend(serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        binary::push_f64s(&mut out, flatten(&self.mean));
        for j in 0..self.modes() {
            binary::push_f64s(&mut out, self.components.row(j).iter().copied());
        }
        for s in &self.aligned {
            binary::push_f64s(&mut out, flatten(s));
        }
        write_bytes(path.as_ref(), &out)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_bytes(path)?;
        let rest = bytes
            .strip_prefix(SSM_MAGIC)
            .ok_or_else(|| Error::parse(path, 1, "bad magic, expected SSM1"))?;
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(path, 2, "missing header line"))?;
        let header: SsmHeader = serde_json::from_slice(&rest[..end])
            .map_err(|e| Error::parse(path, 2, format!("bad header: {e}")))?;
        if header.variances.len() != header.modes {
            return Err(Error::parse(
                path,
                2,
                "variance count does not match mode count",
            ));
        }
        let payload = &rest[end + 1..];
        let mut r = binary::Reader::new(path, payload, b"")?;
        let w = header.n * 3;
        let mean = unflatten(&r.f64s(w)?);
        let components = DMatrix::from_row_slice(header.modes, w, &r.f64s(header.modes * w)?);
        let aligned = (0..header.shapes)
            .map(|_| r.f64s(w).map(|v| unflatten(&v)))
            .collect::<Result<_>>()?;
        r.finish()?;
        Ok(Self {
            mean,
            components,
            variances: header.variances,
            aligned,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SsmHeader {
    n: usize,
    modes: usize,
    shapes: usize,
    variances: Vec<f64>,
}

/// Square root of the Chamfer distance, in length units.
pub fn chamfer_length(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    Ok(chamfer(a, b)?.sqrt())
}

/// Leave-one-out generality: mean over folds of the Chamfer length between a
/// held-out shape and its reconstruction by a `q`-mode model of the others.
pub fn generality(shapes: &[DMatrix<f64>], q: usize) -> Result<f64> {
    let m = shapes.len();
    if m < 3 {
        return Err(Error::Dimension(format!(
            "generality needs at least 3 shapes, got {m}"
        )));
    }
    let folds: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let rest: Vec<DMatrix<f64>> = shapes
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| s.clone())
                .collect();
            let model = build_ssm(&rest, q)?;
            let (recon, aligned) = model.reconstruct(&shapes[i], q)?;
            chamfer_length(&recon, &aligned)
        })
        .collect::<Result<_>>()?;
    Ok(folds.iter().sum::<f64>() / m as f64)
}

/// Standard normal draw truncated to `[-3, 3]` by rejection.
fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 3.0 {
            return z;
        }
    }
}

/// Specificity: mean Chamfer length from random model samples (first `q`
/// modes, coefficients standard normal truncated at 3 SD) to the nearest
/// aligned training shape.
pub fn specificity(model: &SsModel, q: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument(
            "specificity needs at least one trial".into(),
        ));
    }
    if model.aligned.is_empty() {
        return Err(Error::EmptyInput("model has no training shapes".into()));
    }
    let q = q.min(model.modes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<Vec<f64>> = (0..trials)
        .map(|_| (0..q).map(|_| truncated_normal(&mut rng)).collect())
        .collect();
    let trees: Vec<KdTree> = model.aligned.iter().map(KdTree::from_rows).collect();
    let dists: Vec<f64> = coeffs
        .par_iter()
        .map(|c| {
            let s = model.sample(c)?;
            let own = KdTree::from_rows(&s);
            let best = model
                .aligned
                .iter()
                .zip(&trees)
                .map(|(t, tree)| {
                    let a: f64 =
                        tree.nearest_rows(&s).iter().map(|x| x.1).sum::<f64>() / s.nrows() as f64;
                    let b: f64 =
                        own.nearest_rows(t).iter().map(|x| x.1).sum::<f64>() / t.nrows() as f64;
                    (a + b).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(dists.iter().sum::<f64>() / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use nalgebra::Rotation3;

    /// Icosphere stretched along x by `1 + c`; its isotropic second moment keeps
    /// every Procrustes rotation at the identity.
    fn stretched(c: f64) -> DMatrix<f64> {
        let mut p = shapes::icosphere(1).positions();
        p.column_mut(0).scale_mut(1.0 + c);
        p
    }

    fn moved(p: &DMatrix<f64>, seed: f64) -> DMatrix<f64> {
        let r = Rotation3::from_euler_angles(0.3 * seed, -0.7, 1.1 * seed);
        let rt = DMatrix::from_column_slice(3, 3, r.matrix().transpose().as_slice());
        let mut q = p * rt;
        for mut row in q.row_iter_mut() {
            row[0] += seed;
            row[2] -= 2.0 * seed;
        }
        q
    }

    #[test]
    fn rank_one_family() {
        let cs = [-0.3, -0.1, 0.05, 0.2, 0.4];
        let shapes: Vec<_> = cs
            .iter()
            .enumerate()
            .map(|(i, &c)| moved(&stretched(c), i as f64 * 0.4))
            .collect();
        let model = build_ssm(&shapes, 4).unwrap();
        assert_eq!(model.modes(), 1);
        let g = generality(&shapes, 1).unwrap();
        assert!(g <= 1e-8, "{g}");
        for s in &shapes {
            let (recon, aligned) = model.reconstruct(s, 1).unwrap();
            assert!(chamfer(&recon, &aligned).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn two_shape_model() {
        let c = 0.25;
        let base = stretched(0.0);
        let mut u = DMatrix::zeros(base.nrows(), 3);
        u.column_mut(0).copy_from(&base.column(0));
        let scale = u.norm();
        let (a, b) = (stretched(c), stretched(-c));
        let model = build_ssm(&[a, b], 1).unwrap();
        assert_eq!(model.modes(), 1);
        assert!((&model.mean - &base).amax() <= 1e-12);
        // shapes are mean +- c * |u| * (u / |u|)
        assert!((model.variances[0] - (c * scale).powi(2)).abs() <= 1e-10);
        let dir = unflatten(&model.components.row(0).iter().copied().collect::<Vec<_>>());
        assert!((&dir * scale - &u).amax() <= 1e-10 || (&dir * scale + &u).amax() <= 1e-10);
        assert!(matches!(
            build_ssm(&[stretched(0.1), stretched(0.2)], 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn sampling_is_affine() {
        let shapes: Vec<_> = (0..5)
            .map(|i| {
                let mut p = shapes::blob(1).positions();
                p.column_mut(i % 3).scale_mut(1.0 + 0.1 * i as f64);
                p[(i, 1)] += 0.05;
                p
            })
            .collect();
        let model = build_ssm(&shapes, 3).unwrap();
        let gram = &model.components * model.components.transpose();
        assert!((gram - DMatrix::identity(model.modes(), model.modes())).amax() <= 1e-8);
        assert!(model.variances.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(model.sample(&[]).unwrap(), model.mean);
        let (a, b) = ([0.5, -1.0, 2.0], [1.5, 0.3, -0.4]);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = model.sample(&a).unwrap() + model.sample(&b).unwrap() - &model.mean;
        assert!((lhs - model.sample(&sum).unwrap()).amax() <= 1e-12);

        let gs: Vec<f64> = (1..=3).map(|q| generality(&shapes, q).unwrap()).collect();
        assert!(gs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{gs:?}");
    }

    #[test]
    fn zero_variance_specificity() {
        let s = shapes::blob(1).positions();
        let model = build_ssm(&[s.clone(), s.clone(), s.clone()], 2).unwrap();
        assert_eq!(model.modes(), 0);
        let spec = specificity(&model, 2, 10, 7).unwrap();
        let expected = chamfer_length(&model.mean, &model.aligned[0]).unwrap();
        assert!((spec - expected).abs() <= 1e-12);
    }

    #[test]
    fn specificity_is_seeded() {
        let shapes: Vec<_> = [-0.2, 0.0, 0.3].iter().map(|&c| stretched(c)).collect();
        let model = build_ssm(&shapes, 2).unwrap();
        let a = specificity(&model, 2, 50, 11).unwrap();
        assert_eq!(a, specificity(&model, 2, 50, 11).unwrap());
        assert!(a > 0.0);
    }

    #[test]
    fn model_roundtrip() {
        let shapes: Vec<_> = [-0.2, 0.1, 0.3].iter().map(|&c| stretched(c)).collect();
        let model = build_ssm(&shapes, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ssm");
        model.write(&path).unwrap();
        assert_eq!(SsModel::read(&path).unwrap(), model);
    }
}
