//! Dense global collocation oracle.
//!
//! Every leaf carries its full `n x n` Chebyshev tensor grid. Interior
//! points collocate the PDE, domain-boundary edge points the boundary
//! condition, and interface edge points either value continuity or flux
//! balance. On a non-matching edge the fine side takes values from the
//! coarse panel's interpolant and the coarse side balances its flux
//! against the piecewise interpolant of the fine fluxes. Corner values are
//! pinned to zero (no equation references them when there is no mixed
//! derivative term).

#![allow(dead_code)]

use std::collections::HashSet;

use faer::Mat;
use hps::c64;
use hps::dense::Lu;
use hps::field::SolutionField;
use hps::leafops::{Coef, PdeOperatorSpec};
use hps::meshtree::{MeshTree, Rect, Side};
use hps::solver::{BuildOptions, Formulation, SolverTree};
use hps::spectral1d;
use hps::Scalar;

pub enum OracleBc<'a, T> {
    Dirichlet(&'a dyn Fn(f64, f64) -> T),
    /// `du/dn + i eta u = t(x, y, side)`.
    Impedance(T, &'a dyn Fn(f64, f64, Side) -> T),
}

struct LeafGeom {
    id: usize,
    rect: Rect,
    xs: Vec<f64>,
    ys: Vec<f64>,
    dx: Mat<f64>,
    dy: Mat<f64>,
}

const SIDES: [Side; 4] = [Side::South, Side::East, Side::North, Side::West];

impl LeafGeom {
    /// Tensor indices of the edge points of `side`, ascending along it.
    fn edge(&self, n: usize, side: Side) -> Vec<usize> {
        (1..n - 1)
            .map(|k| match side {
                Side::South => k * n,
                Side::North => k * n + n - 1,
                Side::West => k,
                Side::East => (n - 1) * n + k,
            })
            .collect()
    }

    fn tangential(&self, side: Side) -> &[f64] {
        match side {
            Side::South | Side::North => &self.xs,
            Side::East | Side::West => &self.ys,
        }
    }

    fn span(&self, side: Side) -> (f64, f64) {
        match side {
            Side::South | Side::North => (self.rect.x0, self.rect.x1),
            Side::East | Side::West => (self.rect.y0, self.rect.y1),
        }
    }

    /// Coefficients of the outward normal derivative at tensor point `p`
    /// on `side`, as (tensor index, weight) pairs.
    fn normal_row(&self, n: usize, p: usize, side: Side) -> Vec<(usize, f64)> {
        let (i, j) = (p / n, p % n);
        match side {
            Side::South => (0..n).map(|k| (i * n + k, -self.dy[(0, k)])).collect(),
            Side::North => (0..n).map(|k| (i * n + k, self.dy[(n - 1, k)])).collect(),
            Side::West => (0..n).map(|k| (k * n + j, -self.dx[(0, k)])).collect(),
            Side::East => (0..n).map(|k| (k * n + j, self.dx[(n - 1, k)])).collect(),
        }
    }
}

fn opposite(side: Side) -> Side {
    match side {
        Side::South => Side::North,
        Side::North => Side::South,
        Side::East => Side::West,
        Side::West => Side::East,
    }
}

/// Interpolation weights at `t` from the interior Chebyshev points of the
/// interval `(lo, hi)`.
fn panel_weights(n: usize, lo: f64, hi: f64, t: f64) -> Vec<f64> {
    let src = spectral1d::cheb_nodes(n, lo, hi).unwrap().interior().to_vec();
    let m = spectral1d::interp_matrix(&src, &[t]).unwrap();
    (0..src.len()).map(|k| m[(0, k)]).collect()
}

/// Solve the global collocation system on `mesh`; returns per-leaf tensor
/// values keyed by leaf id (corner entries are zero).
pub fn dense_solve<T: Scalar>(
    mesh: &MeshTree,
    pde: &PdeOperatorSpec<T>,
    bc: &OracleBc<'_, T>,
) -> Vec<(usize, Vec<T>)> {
    let n = mesh.n_c();
    let nn = n * n;
    let leaves = mesh.leaves();
    let geoms: Vec<LeafGeom> = leaves
        .iter()
        .map(|&id| {
            let rect = mesh.node(id).rect;
            let xn = spectral1d::cheb_nodes(n, rect.x0, rect.x1).unwrap();
            let yn = spectral1d::cheb_nodes(n, rect.y0, rect.y1).unwrap();
            LeafGeom {
                id,
                rect,
                dx: spectral1d::diff_matrix(&xn),
                dy: spectral1d::diff_matrix(&yn),
                xs: xn.points,
                ys: yn.points,
            }
        })
        .collect();
    let slot = |id: usize| leaves.iter().position(|&l| l == id).unwrap();
    let total = nn * leaves.len();
    let mut a = Mat::<T>::zeros(total, total);
    let mut rhs = vec![T::zero_value(); total];
    let one = T::one_value();

    for (s, g) in geoms.iter().enumerate() {
        let off = s * nn;
        // corners
        for p in [0, n - 1, (n - 1) * n, nn - 1] {
            a[(off + p, off + p)] = one;
        }
        // interior collocation
        let dxx = &g.dx * &g.dx;
        let dyy = &g.dy * &g.dy;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let (x, y) = (g.xs[i], g.ys[j]);
                let row = off + i * n + j;
                let c11 = pde.c11.eval(x, y);
                let c22 = pde.c22.eval(x, y);
                let c1 = pde.c1.eval(x, y);
                let c2 = pde.c2.eval(x, y);
                let c0 = pde.c0.eval(x, y);
                assert!(pde.c12.is_zero(), "oracle has no mixed term");
                for k in 0..n {
                    a[(row, off + k * n + j)] += c1.scale(g.dx[(i, k)]) - c11.scale(dxx[(i, k)]);
                    a[(row, off + i * n + k)] += c2.scale(g.dy[(j, k)]) - c22.scale(dyy[(j, k)]);
                }
                a[(row, row)] += c0;
                rhs[row] = pde.body.eval(x, y);
            }
        }
        // edges
        for side in SIDES {
            let edge = g.edge(n, side);
            let tang = g.tangential(side);
            let nbrs = mesh.leaves_across(g.id, side);
            if nbrs.is_empty() {
                for &p in &edge {
                    let row = off + p;
                    let (x, y) = (g.xs[p / n], g.ys[p % n]);
                    match bc {
                        OracleBc::Dirichlet(f) => {
                            a[(row, row)] = one;
                            rhs[row] = f(x, y);
                        }
                        OracleBc::Impedance(ieta, t) => {
                            for (q, w) in g.normal_row(n, p, side) {
                                a[(row, off + q)] += T::from_f64(w);
                            }
                            a[(row, row)] += *ieta;
                            rhs[row] = t(x, y, side);
                        }
                    }
                }
                continue;
            }
            let (lo, hi) = g.span(side);
            let my_len = hi - lo;
            for (k, &p) in edge.iter().enumerate() {
                let row = off + p;
                let t_here = tang[k + 1];
                // neighbour containing this point
                let nb = *nbrs
                    .iter()
                    .find(|&&b| {
                        let (blo, bhi) = geoms[slot(b)].span(side);
                        blo <= t_here && t_here <= bhi
                    })
                    .unwrap();
                let h = &geoms[slot(nb)];
                let hoff = slot(nb) * nn;
                let (blo, bhi) = h.span(side);
                let nb_len = bhi - blo;
                let nb_edge = h.edge(n, opposite(side));
                let conforming = nb_len == my_len;
                let value_eq = if conforming { g.id < nb } else { my_len < nb_len };
                if value_eq {
                    // u_here = interpolant of the neighbour's edge values
                    a[(row, row)] += one;
                    let w = panel_weights(n, blo, bhi, t_here);
                    for (q, wq) in nb_edge.iter().zip(w) {
                        a[(row, hoff + q)] -= T::from_f64(wq);
                    }
                } else {
                    // flux here + interpolant of neighbour's outward flux = 0
                    for (q, w) in g.normal_row(n, p, side) {
                        a[(row, off + q)] += T::from_f64(w);
                    }
                    let w = panel_weights(n, blo, bhi, t_here);
                    for (&q, wq) in nb_edge.iter().zip(w) {
                        for (r, wr) in h.normal_row(n, q, opposite(side)) {
                            a[(row, hoff + r)] += T::from_f64(wq * wr);
                        }
                    }
                }
            }
        }
    }
    let lu = Lu::new(&a).expect("oracle system is nonsingular");
    let u = lu.solve_vec(&rhs);
    leaves
        .iter()
        .enumerate()
        .map(|(s, &id)| (id, u[s * nn..(s + 1) * nn].to_vec()))
        .collect()
}

/// Relative l2 difference over all non-corner tensor points.
pub fn rel_diff<T: Scalar>(sol: &SolutionField<T>, oracle: &[(usize, Vec<T>)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (id, vals) in oracle {
        let leaf = sol.leaf(*id).expect("leaf present in solution");
        let n = leaf.n_c;
        for k in hps::field::LeafValues::<T>::discretization_indices(n) {
            num += (leaf.values[k] - vals[k]).modulus().powi(2);
            den += vals[k].modulus().powi(2);
        }
    }
    (num / den).sqrt()
}

pub fn unit() -> Rect {
    Rect::new(0.0, 1.0, 0.0, 1.0).unwrap()
}

/// Variable-coefficient operator without a mixed term, with a body load.
pub fn variable_pde() -> PdeOperatorSpec<f64> {
    PdeOperatorSpec {
        c11: Coef::func(|x, y| 1.0 + 0.3 * (x * y).sin()),
        c12: Coef::Zero,
        c22: Coef::func(|x, _| 1.2 + 0.2 * x.cos()),
        c1: Coef::func(|_, y| 0.5 * y),
        c2: Coef::Const(-0.7),
        c0: Coef::func(|x, y| 1.0 + x * x + y),
        body: Coef::func(|x, y| (3.0 * x).sin() + y * y),
    }
}

pub fn dirichlet(x: f64, y: f64) -> f64 {
    (x - 0.3 * y).exp() * (2.0 * y).cos()
}

fn leaf_key(mesh: &MeshTree) -> Vec<[u64; 4]> {
    let mut k: Vec<[u64; 4]> = mesh
        .leaves()
        .into_iter()
        .map(|id| {
            let r = mesh.node(id).rect;
            [r.x0.to_bits(), r.x1.to_bits(), r.y0.to_bits(), r.y1.to_bits()]
        })
        .collect();
    k.sort_unstable();
    k
}

/// Every level-restricted quadtree on the domain with at most `max_leaves`
/// leaves.
pub fn all_meshes(domain: Rect, n_c: usize, max_leaves: usize) -> Vec<MeshTree> {
    let root = MeshTree::root_tree(domain, n_c).unwrap();
    let mut seen = HashSet::new();
    seen.insert(leaf_key(&root));
    let mut out = vec![root.clone()];
    let mut frontier = vec![root];
    while let Some(m) = frontier.pop() {
        if m.num_leaves() + 3 > max_leaves {
            continue;
        }
        for id in m.leaves() {
            let mut c = m.clone();
            c.split_leaf(id).unwrap();
            if !c.is_level_restricted() || !seen.insert(leaf_key(&c)) {
                continue;
            }
            out.push(c.clone());
            frontier.push(c);
        }
    }
    out
}

pub fn is_nonuniform(mesh: &MeshTree) -> bool {
    let levels: HashSet<usize> = mesh.leaves().iter().map(|&l| mesh.node(l).rect.quad_level()).collect();
    levels.len() > 1
}

/// Relative difference between the hierarchical DtN solve and the oracle.
pub fn dtn_vs_oracle(mesh: &MeshTree, pde: &PdeOperatorSpec<f64>) -> f64 {
    let tree = SolverTree::build(mesh.clone(), pde.clone(), Formulation::Dtn, BuildOptions::default()).unwrap();
    let sol = tree.solve_dirichlet(dirichlet).unwrap();
    let oracle = dense_solve(mesh, pde, &OracleBc::Dirichlet(&dirichlet));
    rel_diff(&sol, &oracle)
}

/// Relative difference between the hierarchical ItI solve and the oracle
/// for a variable-medium Helmholtz problem on four leaves.
pub fn iti_four_leaf_vs_oracle() -> f64 {
    let omega = 12.0;
    let eta = c64::new(omega, 0.0);
    let pde = PdeOperatorSpec::helmholtz(omega, Coef::func(|x, y| c64::new(1.0 + 0.5 * x * y, 0.0)))
        .with_body(Coef::func(|x, y| c64::new((x + y).cos(), x)));
    let mesh = MeshTree::uniform(unit(), 16, 1).unwrap();
    let t = |x: f64, y: f64, s: Side| c64::new(x - y, 0.5).exp() * c64::new(1.0, s.index() as f64);
    let tree = SolverTree::build(mesh.clone(), pde.clone(), Formulation::Iti { eta }, BuildOptions::default()).unwrap();
    let sol = tree.solve_impedance(t).unwrap();
    let ieta = c64::new(0.0, 1.0) * eta;
    let oracle = dense_solve(&mesh, &pde, &OracleBc::Impedance(ieta, &t));
    rel_diff(&sol, &oracle)
}
