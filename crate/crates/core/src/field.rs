//! Piecewise spectral solution fields.

use std::collections::BTreeMap;

use crate::error::{HpsError, Result};
use crate::meshtree::{MeshTree, Rect};
use crate::scalar::Scalar;
use crate::spectral1d;

/// Values of one leaf on its full `n_c x n_c` tensor grid (x-major). Corner
/// values are extrapolated from the adjacent edges.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafValues<T> {
    pub rect: Rect,
    pub n_c: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> LeafValues<T> {
    /// Build from values at every non-corner tensor point (corner entries of
    /// `values` are ignored and recomputed).
    pub fn from_tensor(rect: Rect, n_c: usize, mut values: Vec<T>) -> Self {
        fill_corners(n_c, &mut values);
        LeafValues { rect, n_c, values }
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[i * self.n_c + j]
    }

    /// Tensor indices of the points that carry unknowns (no corners).
    pub fn discretization_indices(n_c: usize) -> impl Iterator<Item = usize> {
        let last = n_c - 1;
        (0..n_c * n_c).filter(move |&k| {
            let (i, j) = (k / n_c, k % n_c);
            !((i == 0 || i == last) && (j == 0 || j == last))
        })
    }

    /// Values at the points that carry unknowns, in tensor order.
    pub fn discretization_values(&self) -> Vec<T> {
        Self::discretization_indices(self.n_c).map(|k| self.values[k]).collect()
    }

    /// Evaluate the tensor interpolant at a point (extrapolates outside).
    pub fn eval(&self, x: f64, y: f64) -> T {
        let n = self.n_c;
        let r = spectral1d::reference(n);
        let tx = 2.0 * (x - self.rect.x0) / self.rect.width() - 1.0;
        let ty = 2.0 * (y - self.rect.y0) / self.rect.height() - 1.0;
        let mut wx = vec![0.0; n];
        let mut wy = vec![0.0; n];
        spectral1d::interp_row(&r.points, &r.weights, tx, &mut wx);
        spectral1d::interp_row(&r.points, &r.weights, ty, &mut wy);
        let mut acc = T::zero_value();
        for i in 0..n {
            if wx[i] == 0.0 {
                continue;
            }
            let mut row = T::zero_value();
            for j in 0..n {
                row += self.values[i * n + j].scale(wy[j]);
            }
            acc += row.scale(wx[i]);
        }
        acc
    }

    /// Sample the interpolant on the tensor grid of `rect` (same order).
    pub fn resample(&self, rect: &Rect) -> Result<Vec<T>> {
        let n = self.n_c;
        let xs = spectral1d::cheb_nodes(n, rect.x0, rect.x1)?.points;
        let ys = spectral1d::cheb_nodes(n, rect.y0, rect.y1)?.points;
        let mut out = Vec::with_capacity(n * n);
        for &x in &xs {
            for &y in &ys {
                out.push(self.eval(x, y));
            }
        }
        Ok(out)
    }
}

/// Extrapolate each corner from the two edges meeting there and average.
fn fill_corners<T: Scalar>(n: usize, v: &mut [T]) {
    let r = spectral1d::reference(n);
    let inner = &r.points[1..n - 1];
    let w = spectral1d::bary_weights(inner).expect("distinct nodes");
    let mut lo = vec![0.0; n - 2];
    let mut hi = vec![0.0; n - 2];
    spectral1d::interp_row(inner, &w, -1.0, &mut lo);
    spectral1d::interp_row(inner, &w, 1.0, &mut hi);
    let t = |i: usize, j: usize| i * n + j;
    let edge_x = |v: &[T], j: usize, wts: &[f64]| -> T {
        (1..n - 1).map(|i| v[t(i, j)].scale(wts[i - 1])).sum()
    };
    let edge_y = |v: &[T], i: usize, wts: &[f64]| -> T {
        (1..n - 1).map(|j| v[t(i, j)].scale(wts[j - 1])).sum()
    };
    let last = n - 1;
    let half = 0.5;
    let c00 = (edge_x(v, 0, &lo) + edge_y(v, 0, &lo)).scale(half);
    let c10 = (edge_x(v, 0, &hi) + edge_y(v, last, &lo)).scale(half);
    let c11 = (edge_x(v, last, &hi) + edge_y(v, last, &hi)).scale(half);
    let c01 = (edge_x(v, last, &lo) + edge_y(v, 0, &hi)).scale(half);
    v[t(0, 0)] = c00;
    v[t(last, 0)] = c10;
    v[t(last, last)] = c11;
    v[t(0, last)] = c01;
}

/// Solution values per leaf, keyed by leaf id.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField<T> {
    pub n_c: usize,
    pub leaves: BTreeMap<usize, LeafValues<T>>,
}

impl<T: Scalar> SolutionField<T> {
    pub fn new(n_c: usize) -> Self {
        SolutionField {
            n_c,
            leaves: BTreeMap::new(),
        }
    }

    /// Sample a function on every leaf of a mesh.
    pub fn from_fn(mesh: &MeshTree, f: impl Fn(f64, f64) -> T) -> Result<Self> {
        let n = mesh.n_c();
        let mut out = Self::new(n);
        for id in mesh.leaves() {
            let rect = mesh.node(id).rect;
            let xs = spectral1d::cheb_nodes(n, rect.x0, rect.x1)?.points;
            let ys = spectral1d::cheb_nodes(n, rect.y0, rect.y1)?.points;
            let mut v = Vec::with_capacity(n * n);
            for &x in &xs {
                for &y in &ys {
                    v.push(f(x, y));
                }
            }
            out.leaves.insert(id, LeafValues { rect, n_c: n, values: v });
        }
        Ok(out)
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf(&self, id: usize) -> Option<&LeafValues<T>> {
        self.leaves.get(&id)
    }

    /// Leaf whose closed box contains the point (lowest id wins on ties).
    pub fn locate(&self, x: f64, y: f64) -> Option<&LeafValues<T>> {
        self.leaves.values().find(|l| l.rect.contains(x, y))
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<T> {
        self.locate(x, y)
            .map(|l| l.eval(x, y))
            .ok_or_else(|| HpsError::InvalidArgument(format!("point ({x}, {y}) is outside the field")))
    }

    /// Values of this field on the tensor grid of `rect`, where `rect` is
    /// covered by leaves of this field; each grid point is evaluated in the
    /// leaf that contains it.
    pub fn sample_on(&self, rect: &Rect) -> Result<Vec<T>> {
        let n = self.n_c;
        let xs = spectral1d::cheb_nodes(n, rect.x0, rect.x1)?.points;
        let ys = spectral1d::cheb_nodes(n, rect.y0, rect.y1)?.points;
        let inside: Vec<&LeafValues<T>> = self
            .leaves
            .values()
            .filter(|l| {
                l.rect.x1 > rect.x0 && l.rect.x0 < rect.x1 && l.rect.y1 > rect.y0 && l.rect.y0 < rect.y1
            })
            .collect();
        let mut out = Vec::with_capacity(n * n);
        for &x in &xs {
            for &y in &ys {
                let leaf = inside
                    .iter()
                    .find(|l| l.rect.contains(x, y))
                    .ok_or_else(|| HpsError::InvalidArgument(format!("point ({x}, {y}) not covered")))?;
                out.push(leaf.eval(x, y));
            }
        }
        Ok(out)
    }
}
