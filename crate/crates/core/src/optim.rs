//! First-order optimizers over flat parameter slices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    p: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, p: AdamParams) -> Self {
        Self {
            p,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        assert!(x.len() == self.m.len() && g.len() == self.m.len());
        self.t += 1;
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.p;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

/// Adam over the rows of an `n x w` matrix (one vertex per row) whose second
/// moment is shared by each row, accumulated from the squared row norm. The
/// update therefore commutes with rotations of the row vectors.
#[derive(Debug, Clone)]
pub struct VectorAdam {
    p: AdamParams,
    m: DMatrix<f64>,
    v: Vec<f64>,
    t: i32,
}

impl VectorAdam {
    pub fn new(rows: usize, width: usize, p: AdamParams) -> Self {
        Self {
            p,
            m: DMatrix::zeros(rows, width),
            v: vec![0.0; rows],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut DMatrix<f64>, g: &DMatrix<f64>) {
        assert!(x.shape() == self.m.shape() && g.shape() == self.m.shape());
        self.t += 1;
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.p;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let width = g.ncols();
        for (i, v) in self.v.iter_mut().enumerate() {
            let sq: f64 = (0..width).map(|c| g[(i, c)] * g[(i, c)]).sum();
            *v = beta2 * *v + (1.0 - beta2) * sq;
            let denom = (*v / c2).sqrt() + eps;
            for c in 0..width {
                let m = &mut self.m[(i, c)];
                *m = beta1 * *m + (1.0 - beta1) * g[(i, c)];
                x[(i, c)] -= lr * (*m / c1) / denom;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn adam_first_step_has_learning_rate_size() {
        let mut opt = Adam::new(3, AdamParams::default());
        let mut x = [1.0, -2.0, 0.5];
        opt.step(&mut x, &[10.0, -0.01, 3.0]);
        assert!((x[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((x[1] - (-2.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let p = AdamParams {
            lr: 0.05,
            ..Default::default()
        };
        let mut opt = Adam::new(2, p);
        let mut x = [3.0, -4.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0), 8.0 * (x[1] + 0.5)];
            opt.step(&mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn vector_adam_is_rotation_equivariant() {
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 0.7);
        let r = DMatrix::from_column_slice(3, 3, rot.matrix().as_slice());
        let rotate = |m: &DMatrix<f64>| m * r.transpose();
        let mut x1 = DMatrix::from_row_slice(2, 3, &[1.0, 0.2, -0.3, -0.5, 0.9, 0.1]);
        let mut x2 = rotate(&x1);
        let g1 = DMatrix::from_row_slice(2, 3, &[0.3, -0.1, 0.2, 1.0, 0.0, -2.0]);
        let g2 = rotate(&g1);
        let mut o1 = VectorAdam::new(2, 3, AdamParams::default());
        let mut o2 = VectorAdam::new(2, 3, AdamParams::default());
        for _ in 0..3 {
            o1.step(&mut x1, &g1);
            o2.step(&mut x2, &g2);
        }
        assert!((rotate(&x1) - x2).amax() < 1e-12);
    }
}
