//! One-dimensional Chebyshev building blocks: second-kind nodes,
//! differentiation and barycentric interpolation matrices, and the
//! value-to-coefficient transform.
//!
//! Nodes are always stored in ascending order.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use faer::Mat;

use crate::error::{HpsError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet1D {
    pub points: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl NodeSet1D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The nodes with both endpoints removed.
    pub fn interior(&self) -> &[f64] {
        &self.points[1..self.points.len() - 1]
    }
}

/// Second-kind Chebyshev points on [-1, 1], ascending, computed with the
/// sine formula so the set is exactly antisymmetric.
fn reference_points(n: usize) -> Vec<f64> {
    let m = (n - 1) as f64;
    (0..n)
        .map(|k| {
            if k == 0 {
                -1.0
            } else if k == n - 1 {
                1.0
            } else {
                (PI * (2.0 * k as f64 - m) / (2.0 * m)).sin()
            }
        })
        .collect()
}

pub fn cheb_nodes(n: usize, a: f64, b: f64) -> Result<NodeSet1D> {
    if n < 2 {
        return Err(HpsError::InvalidArgument(format!(
            "need at least 2 Chebyshev nodes, got {n}"
        )));
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(HpsError::InvalidArgument(format!(
            "invalid interval [{a}, {b}]"
        )));
    }
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut points: Vec<f64> = reference_points(n)
        .into_iter()
        .map(|t| mid + half * t)
        .collect();
    points[0] = a;
    points[n - 1] = b;
    Ok(NodeSet1D { points, a, b })
}

/// Barycentric weights for an arbitrary set of distinct points, computed
/// on the affinely normalised copy of the set and scaled to max modulus 1.
pub fn bary_weights(points: &[f64]) -> Result<Vec<f64>> {
    let n = points.len();
    if n == 0 {
        return Err(HpsError::InvalidArgument("empty point set".into()));
    }
    let lo = points.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = points.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (c, h) = if hi > lo {
        (0.5 * (hi + lo), 0.5 * (hi - lo))
    } else {
        (lo, 1.0)
    };
    let t: Vec<f64> = points.iter().map(|&x| (x - c) / h).collect();
    let mut w = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                let d = t[j] - t[k];
                if d == 0.0 {
                    return Err(HpsError::InvalidArgument(format!(
                        "duplicate interpolation node {}",
                        points[j]
                    )));
                }
                w[j] /= d;
            }
        }
    }
    let wmax = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut w {
        *v /= wmax;
    }
    Ok(w)
}

/// Standard weights for the full second-kind set: (-1)^k with the two
/// endpoint weights halved (sign chosen for ascending order).
fn cheb_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let s = if (n - 1 - k) % 2 == 0 { 1.0 } else { -1.0 };
            if k == 0 || k == n - 1 {
                0.5 * s
            } else {
                s
            }
        })
        .collect()
}

fn diff_from_weights(x: &[f64], w: &[f64]) -> Mat<f64> {
    let n = x.len();
    let mut d = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (w[j] / w[i]) / (x[i] - x[j]);
                d[(i, j)] = v;
                diag -= v;
            }
        }
        d[(i, i)] = diag;
    }
    d
}

/// Spectral differentiation matrix on the given node set.
pub fn diff_matrix(nodes: &NodeSet1D) -> Mat<f64> {
    let n = nodes.len();
    let r = reference(n);
    let scale = 2.0 / (nodes.b - nodes.a);
    Mat::from_fn(n, n, |i, j| r.diff[(i, j)] * scale)
}

/// Barycentric Lagrange interpolation from `src` to `dst`.
pub fn interp_matrix(src: &[f64], dst: &[f64]) -> Result<Mat<f64>> {
    let w = bary_weights(src)?;
    Ok(interp_with_weights(src, &w, dst))
}

fn interp_with_weights(src: &[f64], w: &[f64], dst: &[f64]) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(dst.len(), src.len());
    for (r, &x) in dst.iter().enumerate() {
        if let Some(k) = src.iter().position(|&s| s == x) {
            m[(r, k)] = 1.0;
            continue;
        }
        let mut denom = 0.0;
        for (k, &s) in src.iter().enumerate() {
            let q = w[k] / (x - s);
            m[(r, k)] = q;
            denom += q;
        }
        for k in 0..src.len() {
            m[(r, k)] /= denom;
        }
    }
    m
}

/// Barycentric evaluation weights at a single point; same conventions as
/// [`interp_matrix`].
pub fn interp_row(src: &[f64], w: &[f64], x: f64, out: &mut [f64]) {
    if let Some(k) = src.iter().position(|&s| s == x) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[k] = 1.0;
        return;
    }
    let mut denom = 0.0;
    for (k, &s) in src.iter().enumerate() {
        let q = w[k] / (x - s);
        out[k] = q;
        denom += q;
    }
    out.iter_mut().for_each(|v| *v /= denom);
}

/// Chebyshev coefficients c_0..c_{n-1} of the interpolant through samples
/// at ascending second-kind nodes.
pub fn cheb_coeffs<T: Scalar>(values: &[T]) -> Result<Vec<T>> {
    let n = values.len();
    if n < 2 {
        return Err(HpsError::InvalidArgument(format!(
            "need at least 2 samples for a Chebyshev transform, got {n}"
        )));
    }
    let r = reference(n);
    Ok((0..n)
        .map(|j| {
            let mut acc = T::zero_value();
            for (k, &v) in values.iter().enumerate() {
                acc += v.scale(r.to_coeffs[(j, k)]);
            }
            acc
        })
        .collect())
}

/// Clenshaw evaluation of sum c_k T_k(t), t in [-1, 1].
pub fn cheb_eval<T: Scalar>(coeffs: &[T], t: f64) -> T {
    let mut b1 = T::zero_value();
    let mut b2 = T::zero_value();
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = c + b1.scale(2.0 * t) - b2;
        b2 = b1;
        b1 = b0;
    }
    coeffs[0] + b1.scale(t) - b2
}

/// Reference-interval operators for one order n.
#[derive(Debug)]
pub struct ChebReference {
    pub n: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Differentiation on [-1, 1].
    pub diff: Mat<f64>,
    /// Values at the nodes to Chebyshev coefficients.
    pub to_coeffs: Mat<f64>,
}

impl ChebReference {
    fn new(n: usize) -> Self {
        let points = reference_points(n);
        let weights = cheb_weights(n);
        let diff = diff_from_weights(&points, &weights);
        let m = n - 1;
        // ascending node k sits at angle (m - k) * pi / m
        let to_coeffs = Mat::from_fn(n, n, |j, k| {
            let phase = ((j * (m - k)) % (2 * m)) as f64 * PI / m as f64;
            let mut v = phase.cos() * 2.0 / m as f64;
            if k == 0 || k == m {
                v *= 0.5;
            }
            if j == 0 || j == m {
                v *= 0.5;
            }
            v
        });
        ChebReference {
            n,
            points,
            weights,
            diff,
            to_coeffs,
        }
    }
}

/// Cached reference operators for order `n` (n >= 2).
pub fn reference(n: usize) -> Arc<ChebReference> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ChebReference>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("chebyshev cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(ChebReference::new(n)))
        .clone()
}
