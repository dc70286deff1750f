//! Exact nearest-neighbour queries over fixed point sets of any dimension.
//!
//! Ties are resolved towards the smallest point index so results never depend
//! on tree layout.

use nalgebra::DMatrix;

const LEAF: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    /// Row-major coordinates, one point per row.
    points: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Builds a tree over the rows of `points`.
    pub fn from_rows(points: &DMatrix<f64>) -> Self {
        let (n, dim) = points.shape();
        let mut flat = Vec::with_capacity(n * dim);
        for i in 0..n {
            flat.extend(points.row(i).iter());
        }
        Self::from_flat(dim, flat)
    }

    /// Builds a tree over `points.len() / dim` row-major points.
    pub fn from_flat(dim: usize, points: Vec<f64>) -> Self {
        assert!(dim > 0 && points.len().is_multiple_of(dim));
        let n = points.len() / dim;
        let mut tree = Self {
            dim,
            points,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut axis = 0;
        let mut spread = -1.0;
        for a in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.points[i * self.dim + a];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > spread {
                spread = hi - lo;
                axis = a;
            }
        }
        if spread <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let (dim, pts) = (self.dim, &self.points);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a * dim + axis]
                .total_cmp(&pts[b * dim + axis])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] * self.dim + axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Index and squared distance of the nearest point to `q`.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        assert_eq!(q.len(), self.dim);
        if self.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &[f64], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d: f64 = self
                        .point(i)
                        .iter()
                        .zip(q)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                // equality keeps equidistant points with smaller indices reachable
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }

    /// Nearest point for every row of `queries`.
    pub fn nearest_rows(&self, queries: &DMatrix<f64>) -> Vec<(usize, f64)> {
        let mut q = vec![0.0; self.dim];
        (0..queries.nrows())
            .map(|i| {
                for (a, v) in q.iter_mut().zip(queries.row(i).iter()) {
                    *a = *v;
                }
                self.nearest(&q).expect("non-empty tree")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &DMatrix<f64>, q: &[f64]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for i in 0..points.nrows() {
            let d: f64 = points
                .row(i)
                .iter()
                .zip(q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in [1, 3, 7] {
            let pts = DMatrix::from_fn(500, dim, |_, _| rng.random_range(-1.0..1.0));
            let tree = KdTree::from_rows(&pts);
            for _ in 0..200 {
                let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.2..1.2)).collect();
                assert_eq!(tree.nearest(&q).unwrap(), brute(&pts, &q));
            }
        }
    }

    #[test]
    fn ties_go_to_smallest_index() {
        // a lattice with many duplicates and equidistant candidates
        let pts = DMatrix::from_fn(300, 2, |i, j| ((i / (j + 1)) % 4) as f64);
        let tree = KdTree::from_rows(&pts);
        for i in 0..300 {
            let q: Vec<f64> = pts.row(i).iter().copied().collect();
            assert_eq!(tree.nearest(&q).unwrap(), brute(&pts, &q));
        }
        assert_eq!(tree.nearest(&[0.5, 0.5]).unwrap(), brute(&pts, &[0.5, 0.5]));
    }
}
