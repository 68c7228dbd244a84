//! Small dense linear algebra helpers over faer matrices.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;

use crate::scalar::Scalar;

/// Reason a factorization was rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Singular {
    pub detail: String,
}

/// LU factorization with partial pivoting and a pivot-growth check.
pub struct Lu<T: Scalar> {
    lu: PartialPivLu<T>,
    n: usize,
}

/// Pivots smaller than this multiple of the largest pivot are treated as
/// zero.
const PIVOT_TOL: f64 = 1e3 * f64::EPSILON;

impl<T: Scalar> Lu<T> {
    pub fn new(a: &Mat<T>) -> Result<Self, Singular> {
        assert_eq!(a.nrows(), a.ncols(), "LU of a non-square matrix");
        let n = a.nrows();
        for j in 0..n {
            for i in 0..n {
                if !a[(i, j)].is_finite_value() {
                    return Err(Singular {
                        detail: format!("non-finite entry at ({i}, {j})"),
                    });
                }
            }
        }
        let lu = a.partial_piv_lu();
        let u = lu.U();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for k in 0..n {
            let d = u[(k, k)].modulus();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if n > 0 && (!(hi > 0.0) || !(lo > PIVOT_TOL * hi) || !hi.is_finite()) {
            return Err(Singular {
                detail: format!("pivot ratio {:.3e} (size {n})", if hi > 0.0 { lo / hi } else { 0.0 }),
            });
        }
        Ok(Lu { lu, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &Mat<T>) -> Mat<T> {
        self.lu.solve(b)
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let m = col(b);
        let x = self.lu.solve(&m);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

pub fn col<T: Scalar>(v: &[T]) -> Mat<T> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn matvec<T: Scalar>(a: &Mat<T>, x: &[T]) -> Vec<T> {
    assert_eq!(a.ncols(), x.len(), "matvec dimension mismatch");
    let mut y = vec![T::zero_value(); a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == T::zero_value() {
            continue;
        }
        let c = a.col(j);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += c[i] * xj;
        }
    }
    y
}

pub fn matmul<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.ncols(), b.nrows(), "matmul dimension mismatch");
    a * b
}

/// Rows `rows` and columns `cols` of `a`.
pub fn select<T: Scalar>(a: &Mat<T>, rows: &[usize], cols: &[usize]) -> Mat<T> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

pub fn select_rows<T: Scalar>(a: &Mat<T>, rows: &[usize]) -> Mat<T> {
    Mat::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

pub fn select_cols<T: Scalar>(a: &Mat<T>, cols: &[usize]) -> Mat<T> {
    Mat::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

pub fn gather<T: Scalar>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

pub fn to_scalar<T: Scalar>(a: &Mat<f64>) -> Mat<T> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| T::from_f64(a[(i, j)]))
}

pub fn is_finite<T: Scalar>(a: &Mat<T>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].is_finite_value()))
}

pub fn max_abs<T: Scalar>(a: &Mat<T>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].modulus());
        }
    }
    m
}
