//! Leaf discretization: the corner-free Chebyshev tensor grid, the
//! collocated PDE operator and the leaf DtN / ItI operators.

use std::fmt;
use std::sync::Arc;

use faer::Mat;

use crate::dense::{self, Lu};
use crate::error::{HpsError, Result, Stage};
use crate::meshtree::{Rect, ScalarFn};
use crate::scalar::{c64, Scalar};
use crate::spectral1d;

/// A coefficient or source term of the PDE.
#[derive(Clone)]
pub enum Coef<T> {
    Zero,
    Const(T),
    Func(ScalarFn<T>),
}

impl<T: Scalar> Coef<T> {
    pub fn func(f: impl Fn(f64, f64) -> T + Send + Sync + 'static) -> Self {
        Coef::Func(Arc::new(f))
    }

    pub fn eval(&self, x: f64, y: f64) -> T {
        match self {
            Coef::Zero => T::zero_value(),
            Coef::Const(c) => *c,
            Coef::Func(f) => f(x, y),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coef::Zero => true,
            Coef::Const(c) => *c == T::zero_value(),
            Coef::Func(_) => false,
        }
    }

    /// The coefficient as a function, `None` when it is constant.
    pub fn as_fn(&self) -> Option<ScalarFn<T>> {
        match self {
            Coef::Func(f) => Some(f.clone()),
            _ => None,
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Coef<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coef::Zero => write!(f, "Zero"),
            Coef::Const(c) => write!(f, "Const({c:?})"),
            Coef::Func(_) => write!(f, "Func(..)"),
        }
    }
}

/// The operator
/// `-c11 u_xx - 2 c12 u_xy - c22 u_yy + c1 u_x + c2 u_y + c0 u = g`.
#[derive(Clone, Debug)]
pub struct PdeOperatorSpec<T> {
    pub c11: Coef<T>,
    pub c12: Coef<T>,
    pub c22: Coef<T>,
    pub c1: Coef<T>,
    pub c2: Coef<T>,
    pub c0: Coef<T>,
    pub body: Coef<T>,
}

impl<T: Scalar> PdeOperatorSpec<T> {
    pub fn laplace() -> Self {
        PdeOperatorSpec {
            c11: Coef::Const(T::one_value()),
            c12: Coef::Zero,
            c22: Coef::Const(T::one_value()),
            c1: Coef::Zero,
            c2: Coef::Zero,
            c0: Coef::Zero,
            body: Coef::Zero,
        }
    }

    /// `-Δu - ω² c(x) u = s`.
    pub fn helmholtz(omega: f64, c: Coef<T>) -> Self {
        let w2 = omega * omega;
        let c0 = match c {
            Coef::Zero => Coef::Zero,
            Coef::Const(v) => Coef::Const(-v.scale(w2)),
            Coef::Func(f) => Coef::func(move |x, y| -f(x, y).scale(w2)),
        };
        PdeOperatorSpec {
            c0,
            ..Self::laplace()
        }
    }

    pub fn with_body(mut self, g: Coef<T>) -> Self {
        self.body = g;
        self
    }

    pub fn coefficients(&self) -> [&Coef<T>; 6] {
        [&self.c11, &self.c12, &self.c22, &self.c1, &self.c2, &self.c0]
    }

    pub fn has_body(&self) -> bool {
        !self.body.is_zero()
    }

    /// Every non-constant coefficient and the body load, as functions.
    pub fn variable_terms(&self) -> Vec<ScalarFn<T>> {
        self.coefficients()
            .into_iter()
            .chain([&self.body])
            .filter_map(|c| c.as_fn())
            .collect()
    }
}

/// Corner-free `n_c x n_c` Chebyshev tensor grid on a leaf.
///
/// Tensor index `i * n_c + j` refers to the point `(x_i, y_j)`.
#[derive(Debug, Clone)]
pub struct LeafGrid {
    pub rect: Rect,
    pub n_c: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub all_points: Vec<(f64, f64)>,
    /// Boundary indices ordered south, east, north, west.
    pub idx_boundary: Vec<usize>,
    pub idx_interior: Vec<usize>,
    pub idx_corners: [usize; 4],
}

impl LeafGrid {
    pub fn tensor_index(&self, i: usize, j: usize) -> usize {
        i * self.n_c + j
    }

    pub fn edge_len(&self) -> usize {
        self.n_c - 2
    }

    /// Boundary then interior indices; the ordering of leaf unknowns.
    pub fn local_order(&self) -> Vec<usize> {
        self.idx_boundary.iter().chain(&self.idx_interior).cloned().collect()
    }

    pub fn n_local(&self) -> usize {
        self.idx_boundary.len() + self.idx_interior.len()
    }

    pub fn edge(&self, k: usize) -> &[usize] {
        let m = self.edge_len();
        &self.idx_boundary[k * m..(k + 1) * m]
    }
}

pub fn build_leaf_grid(rect: Rect, n_c: usize) -> Result<LeafGrid> {
    if n_c < 4 {
        return Err(HpsError::InvalidArgument(format!("n_c must be >= 4, got {n_c}")));
    }
    let xs = spectral1d::cheb_nodes(n_c, rect.x0, rect.x1)?.points;
    let ys = spectral1d::cheb_nodes(n_c, rect.y0, rect.y1)?.points;
    let n = n_c;
    let t = |i: usize, j: usize| i * n + j;
    let mut all_points = Vec::with_capacity(n * n);
    for &x in &xs {
        for &y in &ys {
            all_points.push((x, y));
        }
    }
    let mut idx_boundary = Vec::with_capacity(4 * n - 8);
    idx_boundary.extend((1..n - 1).map(|i| t(i, 0)));
    idx_boundary.extend((1..n - 1).map(|j| t(n - 1, j)));
    idx_boundary.extend((1..n - 1).map(|i| t(i, n - 1)));
    idx_boundary.extend((1..n - 1).map(|j| t(0, j)));
    let mut idx_interior = Vec::with_capacity((n - 2) * (n - 2));
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            idx_interior.push(t(i, j));
        }
    }
    Ok(LeafGrid {
        rect,
        n_c,
        xs,
        ys,
        all_points,
        idx_boundary,
        idx_interior,
        idx_corners: [t(0, 0), t(n - 1, 0), t(n - 1, n - 1), t(0, n - 1)],
    })
}

struct Diff {
    dx: Mat<f64>,
    dy: Mat<f64>,
    dxx: Mat<f64>,
    dyy: Mat<f64>,
}

fn diff_ops(grid: &LeafGrid) -> Diff {
    let r = spectral1d::reference(grid.n_c);
    let sx = 2.0 / grid.rect.width();
    let sy = 2.0 / grid.rect.height();
    let dx = Mat::from_fn(grid.n_c, grid.n_c, |i, j| r.diff[(i, j)] * sx);
    let dy = Mat::from_fn(grid.n_c, grid.n_c, |i, j| r.diff[(i, j)] * sy);
    let dxx = &dx * &dx;
    let dyy = &dy * &dy;
    Diff { dx, dy, dxx, dyy }
}

/// Rows `rows` (tensor indices) of the collocated operator, restricted to
/// the tensor columns `cols`. Entries in other columns are dropped.
fn assemble_block<T: Scalar>(
    grid: &LeafGrid,
    pde: &PdeOperatorSpec<T>,
    d: &Diff,
    rows: &[usize],
    cols: &[usize],
) -> Mat<T> {
    let n = grid.n_c;
    let mut pos = vec![usize::MAX; n * n];
    for (c, &k) in cols.iter().enumerate() {
        pos[k] = c;
    }
    let mut a = Mat::<T>::zeros(rows.len(), cols.len());
    let two = T::from_f64(2.0);
    for (r, &row) in rows.iter().enumerate() {
        let (i, j) = (row / n, row % n);
        let (x, y) = grid.all_points[row];
        let c11 = pde.c11.eval(x, y);
        let c12 = pde.c12.eval(x, y);
        let c22 = pde.c22.eval(x, y);
        let c1 = pde.c1.eval(x, y);
        let c2 = pde.c2.eval(x, y);
        let c0 = pde.c0.eval(x, y);
        // x-lines: (k, j)
        for k in 0..n {
            let p = pos[k * n + j];
            if p == usize::MAX {
                continue;
            }
            a[(r, p)] += c1.scale(d.dx[(i, k)]) - c11.scale(d.dxx[(i, k)]);
        }
        // y-lines: (i, l)
        for l in 0..n {
            let p = pos[i * n + l];
            if p == usize::MAX {
                continue;
            }
            a[(r, p)] += c2.scale(d.dy[(j, l)]) - c22.scale(d.dyy[(j, l)]);
        }
        if pos[row] != usize::MAX {
            a[(r, pos[row])] += c0;
        }
        if c12 != T::zero_value() {
            for k in 0..n {
                for l in 0..n {
                    let p = pos[k * n + l];
                    if p == usize::MAX {
                        continue;
                    }
                    a[(r, p)] -= (two * c12).scale(d.dx[(i, k)] * d.dy[(j, l)]);
                }
            }
        }
    }
    a
}

/// The full `n_c² x n_c²` collocation matrix of the operator.
pub fn assemble_operator<T: Scalar>(grid: &LeafGrid, pde: &PdeOperatorSpec<T>) -> Mat<T> {
    let all: Vec<usize> = (0..grid.n_c * grid.n_c).collect();
    assemble_block(grid, pde, &diff_ops(grid), &all, &all)
}

fn edge_derivatives(grid: &LeafGrid, signs: [f64; 4]) -> Mat<f64> {
    let n = grid.n_c;
    let d = diff_ops(grid);
    let m = n - 2;
    let mut l = Mat::<f64>::zeros(4 * m, n * n);
    for e in 0..4 {
        for (p, &idx) in grid.edge(e).iter().enumerate() {
            let (i, j) = (idx / n, idx % n);
            let r = e * m + p;
            if e % 2 == 0 {
                // south / north: d/dy along the line x = x_i
                for q in 0..n {
                    l[(r, i * n + q)] = signs[e] * d.dy[(j, q)];
                }
            } else {
                for k in 0..n {
                    l[(r, k * n + j)] = signs[e] * d.dx[(i, k)];
                }
            }
        }
    }
    l
}

/// Edge derivatives in fixed coordinate directions: `d/dy` on the south and
/// north edges, `d/dx` on the east and west edges.
pub fn flux_matrix(grid: &LeafGrid) -> Mat<f64> {
    edge_derivatives(grid, [1.0, 1.0, 1.0, 1.0])
}

/// Outward normal derivatives on the four edges.
pub fn outward_flux_matrix(grid: &LeafGrid) -> Mat<f64> {
    edge_derivatives(grid, [-1.0, 1.0, 1.0, -1.0])
}

fn sample<T: Scalar>(c: &Coef<T>, grid: &LeafGrid, idx: &[usize]) -> Result<Vec<T>> {
    idx.iter()
        .map(|&k| {
            let (x, y) = grid.all_points[k];
            let v = c.eval(x, y);
            if v.is_finite_value() {
                Ok(v)
            } else {
                Err(HpsError::Evaluation { x, y })
            }
        })
        .collect()
}

/// DtN operators of one leaf.
#[derive(Debug, Clone)]
pub struct LeafOperatorsDtN<T: Scalar> {
    /// Interior values from boundary values.
    pub psi: Mat<T>,
    /// Boundary values to fixed-direction edge derivatives.
    pub t: Mat<T>,
    /// Particular solution with zero boundary values, at interior points.
    pub z_part: Vec<T>,
    /// Edge derivatives of the particular solution.
    pub h_part: Vec<T>,
}

fn leaf_failure(id: usize, level: usize, detail: String) -> HpsError {
    HpsError::LeafFactorization {
        node: id,
        level,
        stage: Stage::Leaf,
        detail,
    }
}

pub fn build_leaf_dtn<T: Scalar>(grid: &LeafGrid, pde: &PdeOperatorSpec<T>) -> Result<LeafOperatorsDtN<T>> {
    build_leaf_dtn_for(grid, pde, 0)
}

pub(crate) fn build_leaf_dtn_for<T: Scalar>(
    grid: &LeafGrid,
    pde: &PdeOperatorSpec<T>,
    id: usize,
) -> Result<LeafOperatorsDtN<T>> {
    let d = diff_ops(grid);
    let a_ii = assemble_block(grid, pde, &d, &grid.idx_interior, &grid.idx_interior);
    let a_ib = assemble_block(grid, pde, &d, &grid.idx_interior, &grid.idx_boundary);
    if !dense::is_finite(&a_ii) || !dense::is_finite(&a_ib) {
        return Err(leaf_failure(id, grid.rect.level, "non-finite operator entries".into()));
    }
    let lu = Lu::new(&a_ii).map_err(|e| leaf_failure(id, grid.rect.level, e.detail))?;
    let mut psi = lu.solve(&a_ib);
    psi *= faer::Scale(-T::one_value());
    let l = flux_matrix(grid);
    let l_b: Mat<T> = dense::to_scalar(&dense::select_cols(&l, &grid.idx_boundary));
    let l_i: Mat<T> = dense::to_scalar(&dense::select_cols(&l, &grid.idx_interior));
    let t = &l_b + &l_i * &psi;
    let (z_part, h_part) = if pde.has_body() {
        let g = sample(&pde.body, grid, &grid.idx_interior)?;
        let z = lu.solve_vec(&g);
        let h = dense::matvec(&l_i, &z);
        (z, h)
    } else {
        (
            vec![T::zero_value(); grid.idx_interior.len()],
            vec![T::zero_value(); grid.idx_boundary.len()],
        )
    };
    Ok(LeafOperatorsDtN { psi, t, z_part, h_part })
}

/// ItI operators of one leaf. Vectors over all leaf unknowns use the
/// ordering of [`LeafGrid::local_order`].
#[derive(Debug, Clone)]
pub struct LeafOperatorsItI<T: Scalar> {
    /// Incoming impedance data to the solution at all leaf unknowns.
    pub psi: Mat<T>,
    /// Incoming to outgoing impedance data.
    pub r: Mat<T>,
    /// Particular solution (zero incoming data) at all leaf unknowns.
    pub z_part: Vec<T>,
    /// Outgoing impedance data of the particular solution.
    pub h_part: Vec<T>,
    pub eta: c64,
}

impl<T: Scalar> LeafOperatorsItI<T> {
    /// Rows of `psi` for the interior points.
    pub fn psi_interior(&self) -> Mat<T> {
        let nb = self.r.nrows();
        self.psi.submatrix(nb, 0, self.psi.nrows() - nb, nb).to_owned()
    }
}

pub fn build_leaf_iti<T: Scalar>(
    grid: &LeafGrid,
    pde: &PdeOperatorSpec<T>,
    eta: c64,
) -> Result<LeafOperatorsItI<T>> {
    build_leaf_iti_for(grid, pde, eta, 0)
}

pub(crate) fn build_leaf_iti_for<T: Scalar>(
    grid: &LeafGrid,
    pde: &PdeOperatorSpec<T>,
    eta: c64,
    id: usize,
) -> Result<LeafOperatorsItI<T>> {
    let ieta = c64::new(0.0, 1.0) * eta;
    let ieta = T::from_c64(ieta).ok_or_else(|| {
        HpsError::FormulationMismatch("impedance formulation needs complex scalars".into())
    })?;
    if eta.re == 0.0 {
        return Err(HpsError::InvalidArgument("impedance parameter must have Re(eta) != 0".into()));
    }
    let d = diff_ops(grid);
    let local = grid.local_order();
    let nb = grid.idx_boundary.len();
    let nl = local.len();
    let nmat: Mat<T> = dense::to_scalar(&dense::select_cols(&outward_flux_matrix(grid), &local));
    let a_i = assemble_block(grid, pde, &d, &grid.idx_interior, &local);
    let mut b = Mat::<T>::zeros(nl, nl);
    let mut g = Mat::<T>::zeros(nb, nl);
    for j in 0..nl {
        for i in 0..nb {
            b[(i, j)] = nmat[(i, j)];
            g[(i, j)] = nmat[(i, j)];
        }
        for i in nb..nl {
            b[(i, j)] = a_i[(i - nb, j)];
        }
    }
    for i in 0..nb {
        b[(i, i)] += ieta;
        g[(i, i)] -= ieta;
    }
    let lu = Lu::new(&b).map_err(|e| leaf_failure(id, grid.rect.level, e.detail))?;
    let rhs = Mat::<T>::from_fn(nl, nb, |i, j| if i == j { T::one_value() } else { T::zero_value() });
    let psi = lu.solve(&rhs);
    let r = &g * &psi;
    let (z_part, h_part) = if pde.has_body() {
        let s = sample(&pde.body, grid, &grid.idx_interior)?;
        let mut rhs = vec![T::zero_value(); nl];
        rhs[nb..].copy_from_slice(&s);
        let z = lu.solve_vec(&rhs);
        let h = dense::matvec(&g, &z);
        (z, h)
    } else {
        (vec![T::zero_value(); nl], vec![T::zero_value(); nb])
    };
    Ok(LeafOperatorsItI {
        psi,
        r,
        z_part,
        h_part,
        eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit() -> Rect {
        Rect::new(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    fn samples<T: Scalar>(grid: &LeafGrid, idx: &[usize], f: impl Fn(f64, f64) -> T) -> Vec<T> {
        idx.iter()
            .map(|&k| {
                let (x, y) = grid.all_points[k];
                f(x, y)
            })
            .collect()
    }

    fn all<T: Scalar>(grid: &LeafGrid, f: impl Fn(f64, f64) -> T) -> Vec<T> {
        let idx: Vec<usize> = (0..grid.n_c * grid.n_c).collect();
        samples(grid, &idx, f)
    }

    #[test]
    fn grid_partitions_tensor_indices() {
        let g = build_leaf_grid(unit(), 4).unwrap();
        assert_eq!(g.idx_boundary.len(), 8);
        assert_eq!(g.idx_interior.len(), 4);
        let g = build_leaf_grid(unit(), 16).unwrap();
        assert_eq!(g.idx_boundary.len(), 56);
        assert_eq!(g.idx_interior.len(), 196);
        let mut seen: Vec<usize> = g
            .idx_boundary
            .iter()
            .chain(&g.idx_interior)
            .chain(&g.idx_corners)
            .cloned()
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..256).collect::<Vec<_>>());
        for &k in &g.idx_interior {
            let (x, y) = g.all_points[k];
            assert!(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0);
        }
        assert!(g.edge(0).windows(2).all(|w| g.all_points[w[0]].0 < g.all_points[w[1]].0));
        assert!(g.edge(3).windows(2).all(|w| g.all_points[w[0]].1 < g.all_points[w[1]].1));
        assert!(build_leaf_grid(unit(), 3).is_err());
    }

    #[test]
    fn laplace_operator_on_quadratics() {
        let g = build_leaf_grid(unit(), 10).unwrap();
        let a = assemble_operator(&g, &PdeOperatorSpec::<f64>::laplace());
        let u = all(&g, |x, y| x * x + y * y);
        let au = dense::matvec(&a, &u);
        for &k in &g.idx_interior {
            assert!((au[k] + 4.0).abs() < 1e-10);
        }
        let v = all(&g, |x, y| x * x - y * y);
        let av = dense::matvec(&a, &v);
        for &k in &g.idx_interior {
            assert!(av[k].abs() < 1e-10);
        }
    }

    #[test]
    fn zero_order_operator_is_identity() {
        let g = build_leaf_grid(unit(), 6).unwrap();
        let pde = PdeOperatorSpec::<f64> {
            c11: Coef::Zero,
            c22: Coef::Zero,
            c0: Coef::Const(1.0),
            ..PdeOperatorSpec::laplace()
        };
        let a = assemble_operator(&g, &pde);
        for i in 0..36 {
            for j in 0..36 {
                assert_eq!(a[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn mixed_derivative_term() {
        let g = build_leaf_grid(unit(), 8).unwrap();
        let pde = PdeOperatorSpec::<f64> {
            c11: Coef::Zero,
            c22: Coef::Zero,
            c12: Coef::Const(0.5),
            ..PdeOperatorSpec::laplace()
        };
        let a = assemble_operator(&g, &pde);
        let u = all(&g, |x, y| x * x * y);
        let au = dense::matvec(&a, &u);
        for &k in &g.idx_interior {
            let (x, _) = g.all_points[k];
            assert!((au[k] + 2.0 * x).abs() < 1e-10);
        }
    }

    #[test]
    fn flux_matrices_on_simple_fields() {
        let g = build_leaf_grid(unit(), 8).unwrap();
        let m = 6;
        let l = flux_matrix(&g);
        let ly = dense::matvec(&l, &all(&g, |_, y| y));
        let lx = dense::matvec(&l, &all(&g, |x, _| x));
        for e in 0..4 {
            for p in 0..m {
                let (vy, vx) = (ly[e * m + p], lx[e * m + p]);
                if e % 2 == 0 {
                    assert!((vy - 1.0).abs() < 1e-12 && vx.abs() < 1e-12);
                } else {
                    assert!(vy.abs() < 1e-12 && (vx - 1.0).abs() < 1e-12);
                }
            }
        }
        let lxy = dense::matvec(&l, &all(&g, |x, y| x * y));
        for (p, &k) in g.edge(0).iter().enumerate() {
            assert!((lxy[p] - g.all_points[k].0).abs() < 1e-12);
        }
        let n = outward_flux_matrix(&g);
        let ny = dense::matvec(&n, &all(&g, |_, y| y));
        let nc = dense::matvec(&n, &all(&g, |_, _| 3.0));
        let nxx = dense::matvec(&n, &all(&g, |x, _| x * x));
        for p in 0..m {
            assert!((ny[p] + 1.0).abs() < 1e-12);
            assert!((ny[2 * m + p] - 1.0).abs() < 1e-12);
            assert!((nxx[m + p] - 2.0).abs() < 1e-12);
            assert!(nxx[3 * m + p].abs() < 1e-12);
        }
        assert!(nc.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn dtn_leaf_reproduces_linear_solution() {
        let g = build_leaf_grid(unit(), 12).unwrap();
        let ops = build_leaf_dtn(&g, &PdeOperatorSpec::<f64>::laplace()).unwrap();
        let ub = samples(&g, &g.idx_boundary, |x, _| x);
        let ui = dense::matvec(&ops.psi, &ub);
        for (v, &k) in ui.iter().zip(&g.idx_interior) {
            assert!((v - g.all_points[k].0).abs() < 1e-12);
        }
        let flux = dense::matvec(&ops.t, &ub);
        let m = 10;
        for e in 0..4 {
            for p in 0..m {
                let want = if e % 2 == 1 { 1.0 } else { 0.0 };
                assert!((flux[e * m + p] - want).abs() < 1e-10);
            }
        }
        let c = vec![2.5; 4 * m];
        assert!(dense::matvec(&ops.t, &c).iter().all(|v| v.abs() < 1e-9));
        assert!(ops.z_part.iter().all(|&v| v == 0.0));
        assert!(ops.h_part.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dtn_leaf_harmonic_flux() {
        let g = build_leaf_grid(unit(), 16).unwrap();
        let ops = build_leaf_dtn(&g, &PdeOperatorSpec::<f64>::laplace()).unwrap();
        // Re (x + iy)^5
        let u = |x: f64, y: f64| x.powi(5) - 10.0 * x.powi(3) * y * y + 5.0 * x * y.powi(4);
        let ux = |x: f64, y: f64| 5.0 * x.powi(4) - 30.0 * x * x * y * y + 5.0 * y.powi(4);
        let uy = |x: f64, y: f64| -20.0 * x.powi(3) * y + 20.0 * x * y.powi(3);
        let flux = dense::matvec(&ops.t, &samples(&g, &g.idx_boundary, u));
        for (r, &k) in g.idx_boundary.iter().enumerate() {
            let (x, y) = g.all_points[k];
            let want = if (r / 14) % 2 == 0 { uy(x, y) } else { ux(x, y) };
            assert!((flux[r] - want).abs() < 1e-9, "{r}: {} vs {want}", flux[r]);
        }
    }

    #[test]
    fn dtn_particular_solution_matches_manufactured() {
        let g = build_leaf_grid(unit(), 16).unwrap();
        let pde = PdeOperatorSpec::<f64>::laplace()
            .with_body(Coef::func(|x, y| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()));
        let ops = build_leaf_dtn(&g, &pde).unwrap();
        for (v, &k) in ops.z_part.iter().zip(&g.idx_interior) {
            let (x, y) = g.all_points[k];
            assert!((v - (PI * x).sin() * (PI * y).sin()).abs() < 1e-8);
        }
        assert!(ops.h_part.iter().any(|v| v.abs() > 1.0));
    }

    #[test]
    fn dtn_reports_singular_leaf() {
        let g = build_leaf_grid(unit(), 6).unwrap();
        let pde = PdeOperatorSpec::<f64> {
            c11: Coef::Zero,
            c22: Coef::Zero,
            ..PdeOperatorSpec::laplace()
        };
        assert!(matches!(build_leaf_dtn(&g, &pde), Err(HpsError::LeafFactorization { .. })));
    }

    fn plane_wave(omega: f64) -> (impl Fn(f64, f64) -> c64, impl Fn(f64, f64) -> (c64, c64)) {
        let u = move |x: f64, _y: f64| c64::new(0.0, omega * x).exp();
        let grad = move |x: f64, _y: f64| (c64::new(0.0, omega) * c64::new(0.0, omega * x).exp(), c64::new(0.0, 0.0));
        (u, grad)
    }

    #[test]
    fn iti_leaf_plane_wave() {
        let omega = 10.0;
        let rect = Rect::new(0.0, 0.25, 0.0, 0.25).unwrap();
        let g = build_leaf_grid(rect, 16).unwrap();
        let pde = PdeOperatorSpec::<c64>::helmholtz(omega, Coef::Const(c64::new(1.0, 0.0)));
        let eta = c64::new(omega, 0.0);
        let ops = build_leaf_iti(&g, &pde, eta).unwrap();
        assert_eq!((ops.r.nrows(), ops.r.ncols()), (56, 56));
        let (u, grad) = plane_wave(omega);
        let ieta = c64::new(0.0, omega);
        let mut t = Vec::new();
        let mut out = Vec::new();
        for (r, &k) in g.idx_boundary.iter().enumerate() {
            let (x, y) = g.all_points[k];
            let (ux, uy) = grad(x, y);
            let nrm = match r / 14 {
                0 => -uy,
                1 => ux,
                2 => uy,
                _ => -ux,
            };
            t.push(nrm + ieta * u(x, y));
            out.push(nrm - ieta * u(x, y));
        }
        let sol = dense::matvec(&ops.psi, &t);
        for (v, &k) in sol.iter().zip(g.local_order().iter()) {
            let (x, y) = g.all_points[k];
            assert!((v - u(x, y)).norm() < 1e-8);
        }
        let got = dense::matvec(&ops.r, &t);
        for (a, b) in got.iter().zip(&out) {
            assert!((a - b).norm() < 1e-8);
        }
        assert!(ops.h_part.iter().all(|v| v.norm() == 0.0));
        assert!(ops.z_part.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn iti_rejects_real_scalars() {
        let g = build_leaf_grid(unit(), 6).unwrap();
        let r = build_leaf_iti(&g, &PdeOperatorSpec::<f64>::laplace(), c64::new(1.0, 0.0));
        assert!(matches!(r, Err(HpsError::FormulationMismatch(_))));
    }

    /// Chebyshev polynomial T_k and its first two derivatives by recurrence.
    fn cheb3(k: usize, x: f64) -> (f64, f64, f64) {
        let (mut t0, mut d0, mut s0) = (1.0, 0.0, 0.0);
        if k == 0 {
            return (t0, d0, s0);
        }
        let (mut t1, mut d1, mut s1) = (x, 1.0, 0.0);
        for _ in 1..k {
            let t2 = 2.0 * x * t1 - t0;
            let d2 = 2.0 * t1 + 2.0 * x * d1 - d0;
            let s2 = 4.0 * d1 + 2.0 * x * s1 - s0;
            (t0, d0, s0) = (t1, d1, s1);
            (t1, d1, s1) = (t2, d2, s2);
        }
        (t1, d1, s1)
    }

    /// Leaf solve of a random tensor polynomial of degree `n_c - 3` per
    /// variable under a variable-coefficient operator. Returns the
    /// relative interior error.
    pub(crate) fn polynomial_leaf_error(n_c: usize, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let deg = n_c - 3;
        let a: Vec<f64> = (0..(deg + 1) * (deg + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rect = Rect::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let eval = move |x: f64, y: f64| {
            let (mut u, mut ux, mut uy, mut uxx, mut uyy, mut uxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for p in 0..=deg {
                let (tx, dx, sx) = cheb3(p, x);
                for q in 0..=deg {
                    let (ty, dy, sy) = cheb3(q, y);
                    let c = a[p * (deg + 1) + q];
                    u += c * tx * ty;
                    ux += c * dx * ty;
                    uy += c * tx * dy;
                    uxx += c * sx * ty;
                    uyy += c * tx * sy;
                    uxy += c * dx * dy;
                }
            }
            (u, ux, uy, uxx, uyy, uxy)
        };
        let c11 = |x: f64, _y: f64| 1.0 + 0.25 * x;
        let c22 = |_x: f64, y: f64| 1.0 + 0.25 * y * y;
        let c1 = |_x: f64, y: f64| 0.5 * y;
        let c0 = |x: f64, y: f64| 1.0 + x * y;
        let ev = eval.clone();
        let pde = PdeOperatorSpec::<f64> {
            c11: Coef::func(c11),
            c12: Coef::Zero,
            c22: Coef::func(c22),
            c1: Coef::func(c1),
            c2: Coef::Const(-0.3),
            c0: Coef::func(c0),
            body: Coef::func(move |x, y| {
                let (u, ux, uy, uxx, uyy, _) = ev(x, y);
                -c11(x, y) * uxx - c22(x, y) * uyy + c1(x, y) * ux - 0.3 * uy + c0(x, y) * u
            }),
        };
        let g = build_leaf_grid(rect, n_c).unwrap();
        let ops = build_leaf_dtn(&g, &pde).unwrap();
        let ub = samples(&g, &g.idx_boundary, |x, y| eval(x, y).0);
        let mut ui = dense::matvec(&ops.psi, &ub);
        for (v, z) in ui.iter_mut().zip(&ops.z_part) {
            *v += z;
        }
        let exact = samples(&g, &g.idx_interior, |x, y| eval(x, y).0);
        let diff: Vec<f64> = ui.iter().zip(&exact).map(|(a, b)| a - b).collect();
        crate::scalar::norm2(diff) / crate::scalar::norm2(exact)
    }

    #[test]
    fn polynomial_solutions_are_exact() {
        for n in [8, 16, 32] {
            let e = polynomial_leaf_error(n, 7);
            assert!(e < 1e-10, "n_c = {n}: {e:e}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn leaf_solve_exact_on_tensor_polynomials(seed in any::<u64>(), which in 0usize..2) {
            let n = [8, 16][which];
            prop_assert!(polynomial_leaf_error(n, seed) < 1e-10);
        }

        #[test]
        fn dtn_consistent_with_fluxes_of_harmonic_polys(k in 1usize..12, re in any::<bool>()) {
            let g = build_leaf_grid(Rect::new(0.5, 1.5, -0.5, 0.5).unwrap(), 16).unwrap();
            let ops = build_leaf_dtn(&g, &PdeOperatorSpec::<f64>::laplace()).unwrap();
            // Re / Im of (x + iy)^k
            let z = move |x: f64, y: f64| c64::new(x, y).powi(k as i32);
            let pick = move |w: c64| if re { w.re } else { w.im };
            let dz = move |x: f64, y: f64| c64::new(k as f64, 0.0) * c64::new(x, y).powi(k as i32 - 1);
            let ub = samples(&g, &g.idx_boundary, |x, y| pick(z(x, y)));
            let flux = dense::matvec(&ops.t, &ub);
            let scale = 1.5f64.powi(k as i32) * k as f64;
            for (r, &idx) in g.idx_boundary.iter().enumerate() {
                let (x, y) = g.all_points[idx];
                let d = dz(x, y);
                // u_x = Re/Im(f'), u_y = Re/Im(i f')
                let want = if (r / 14) % 2 == 0 { pick(c64::new(0.0, 1.0) * d) } else { pick(d) };
                prop_assert!((flux[r] - want).abs() <= 1e-9 * scale.max(1.0));
            }
        }
    }
}
