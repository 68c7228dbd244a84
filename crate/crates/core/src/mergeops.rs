//! Merging the operators of two sibling boxes into the parent's.
//!
//! Interfaces may be non-matching: where one child has a single panel and
//! the other has two half panels, data moves between the two point sets
//! through panel interpolation (`L1t2` from one panel to two halves,
//! `L2t1` back). For DtN merges the interface unknowns are the values on
//! the coarser side of each segment.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use faer::Mat;

use crate::dense::{self, Lu};
use crate::error::{HpsError, Result, Stage};
use crate::meshtree::{Child, InterfaceMaps, Panel};
use crate::scalar::Scalar;
use crate::spectral1d;

/// Panel interpolation operators on the reference interval.
#[derive(Debug)]
pub struct PanelInterp {
    /// One panel to its two halves, `2m x m`.
    pub l1t2: Arc<Mat<f64>>,
    /// Two halves to the full panel, `m x 2m`; each coarse point uses the
    /// nodes of the half containing it.
    pub l2t1: Arc<Mat<f64>>,
}

pub fn panel_interp(n_c: usize) -> Arc<PanelInterp> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<PanelInterp>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("panel cache poisoned");
    guard
        .entry(n_c)
        .or_insert_with(|| Arc::new(PanelInterp::new(n_c)))
        .clone()
}

impl PanelInterp {
    fn new(n_c: usize) -> Self {
        let coarse = Panel { lo: -1.0, hi: 1.0 }.nodes(n_c);
        let lower = Panel { lo: -1.0, hi: 0.0 }.nodes(n_c);
        let upper = Panel { lo: 0.0, hi: 1.0 }.nodes(n_c);
        let m = coarse.len();
        let fine: Vec<f64> = lower.iter().chain(&upper).cloned().collect();
        let l1t2 = spectral1d::interp_matrix(&coarse, &fine).expect("distinct nodes");
        let lo = spectral1d::interp_matrix(&lower, &coarse).expect("distinct nodes");
        let hi = spectral1d::interp_matrix(&upper, &coarse).expect("distinct nodes");
        let l2t1 = Mat::from_fn(m, 2 * m, |i, j| {
            let in_lower = coarse[i] <= 0.0;
            match (in_lower, j < m) {
                (true, true) => lo[(i, j)],
                (false, false) => hi[(i, j - m)],
                _ => 0.0,
            }
        });
        PanelInterp {
            l1t2: Arc::new(l1t2),
            l2t1: Arc::new(l2t1),
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    row: usize,
    rows: usize,
    col: usize,
    cols: usize,
    /// `None` for an identity block.
    mat: Option<Arc<Mat<f64>>>,
}

/// Block-diagonal linear map built from identity and panel-interpolation
/// blocks.
#[derive(Debug, Clone)]
pub struct Transfer {
    nrows: usize,
    ncols: usize,
    blocks: Vec<Block>,
}

impl Transfer {
    pub fn identity(n: usize) -> Self {
        Transfer {
            nrows: n,
            ncols: n,
            blocks: vec![Block {
                row: 0,
                rows: n,
                col: 0,
                cols: n,
                mat: None,
            }],
        }
    }

    fn push(&mut self, rows: usize, cols: usize, mat: Option<Arc<Mat<f64>>>) {
        self.blocks.push(Block {
            row: self.nrows,
            rows,
            col: self.ncols,
            cols,
            mat,
        });
        self.nrows += rows;
        self.ncols += cols;
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn is_identity(&self) -> bool {
        self.blocks.iter().all(|b| b.mat.is_none())
    }

    pub fn apply<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![T::zero_value(); self.nrows];
        for b in &self.blocks {
            match &b.mat {
                None => y[b.row..b.row + b.rows].copy_from_slice(&x[b.col..b.col + b.cols]),
                Some(m) => {
                    for i in 0..b.rows {
                        let mut acc = T::zero_value();
                        for j in 0..b.cols {
                            acc += x[b.col + j].scale(m[(i, j)]);
                        }
                        y[b.row + i] = acc;
                    }
                }
            }
        }
        y
    }

    /// `self * a`.
    pub fn left_mul<T: Scalar>(&self, a: &Mat<T>) -> Mat<T> {
        assert_eq!(a.nrows(), self.ncols);
        if self.is_identity() {
            return a.clone();
        }
        let mut out = Mat::<T>::zeros(self.nrows, a.ncols());
        for b in &self.blocks {
            let src = a.submatrix(b.col, 0, b.cols, a.ncols());
            match &b.mat {
                None => out.submatrix_mut(b.row, 0, b.rows, a.ncols()).copy_from(src),
                Some(m) => {
                    let mt: Mat<T> = dense::to_scalar(m);
                    let prod = &mt * src;
                    out.submatrix_mut(b.row, 0, b.rows, a.ncols()).copy_from(&prod);
                }
            }
        }
        out
    }

    /// `a * self`.
    pub fn right_mul<T: Scalar>(&self, a: &Mat<T>) -> Mat<T> {
        assert_eq!(a.ncols(), self.nrows);
        if self.is_identity() {
            return a.clone();
        }
        let mut out = Mat::<T>::zeros(a.nrows(), self.ncols);
        for b in &self.blocks {
            let src = a.submatrix(0, b.row, a.nrows(), b.rows);
            match &b.mat {
                None => out.submatrix_mut(0, b.col, a.nrows(), b.cols).copy_from(src),
                Some(m) => {
                    let mt: Mat<T> = dense::to_scalar(m);
                    let prod = src * &mt;
                    out.submatrix_mut(0, b.col, a.nrows(), b.cols).copy_from(&prod);
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut out = Mat::<f64>::zeros(self.nrows, self.ncols);
        for b in &self.blocks {
            for i in 0..b.rows {
                for j in 0..b.cols {
                    out[(b.row + i, b.col + j)] = match &b.mat {
                        None => (i == j) as u8 as f64,
                        Some(m) => m[(i, j)],
                    };
                }
            }
        }
        out
    }

    fn dense_bytes(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.mat.is_some())
            .map(|b| b.rows * b.cols * std::mem::size_of::<f64>())
            .sum()
    }
}

/// Interface data transfers for one merge.
///
/// The master unknowns are the points of the coarser child on each
/// interface segment (alpha's points where both agree).
#[derive(Debug, Clone)]
pub struct InterfacePlan {
    pub n_master: usize,
    /// Master to alpha / beta interface points.
    pub p_alpha: Transfer,
    pub p_beta: Transfer,
    /// Alpha / beta interface points to master.
    pub q_alpha: Transfer,
    pub q_beta: Transfer,
    /// Alpha interface points to beta interface points and back.
    pub x_ab: Transfer,
    pub x_ba: Transfer,
}

impl InterfacePlan {
    pub fn is_uniform(&self) -> bool {
        self.p_alpha.is_identity() && self.p_beta.is_identity()
    }
}

fn same(a: f64, b: f64) -> bool {
    a == b
}

pub fn interface_plan(maps: &InterfaceMaps, n_c: usize) -> Result<InterfacePlan> {
    let m = n_c - 2;
    let pi = panel_interp(n_c);
    let empty = || Transfer {
        nrows: 0,
        ncols: 0,
        blocks: Vec::new(),
    };
    let (mut pa, mut pb, mut qa, mut qb, mut xab, mut xba) = (empty(), empty(), empty(), empty(), empty(), empty());
    let (ap, bp) = (&maps.alpha_panels, &maps.beta_panels);
    let (mut i, mut j) = (0, 0);
    let mismatch = |what: &str| {
        HpsError::PreconditionViolation(format!(
            "interface panels do not pair up ({what}); is the mesh level restricted?"
        ))
    };
    while i < ap.len() && j < bp.len() {
        let (a, b) = (ap[i], bp[j]);
        if !same(a.lo, b.lo) {
            return Err(mismatch("misaligned panels"));
        }
        if same(a.hi, b.hi) {
            for t in [&mut pa, &mut pb, &mut qa, &mut qb, &mut xab, &mut xba] {
                t.push(m, m, None);
            }
            i += 1;
            j += 1;
        } else if a.len() > b.len() {
            // alpha coarse: one alpha panel against two beta halves
            let b2 = bp.get(j + 1).ok_or_else(|| mismatch("missing half panel"))?;
            if !(same(b.hi, b2.lo) && same(b2.hi, a.hi) && same(2.0 * b.len(), a.len())) {
                return Err(mismatch("level gap larger than one"));
            }
            pa.push(m, m, None);
            qa.push(m, m, None);
            pb.push(2 * m, m, Some(pi.l1t2.clone()));
            qb.push(m, 2 * m, Some(pi.l2t1.clone()));
            xab.push(2 * m, m, Some(pi.l1t2.clone()));
            xba.push(m, 2 * m, Some(pi.l2t1.clone()));
            i += 1;
            j += 2;
        } else {
            let a2 = ap.get(i + 1).ok_or_else(|| mismatch("missing half panel"))?;
            if !(same(a.hi, a2.lo) && same(a2.hi, b.hi) && same(2.0 * a.len(), b.len())) {
                return Err(mismatch("level gap larger than one"));
            }
            pa.push(2 * m, m, Some(pi.l1t2.clone()));
            qa.push(m, 2 * m, Some(pi.l2t1.clone()));
            pb.push(m, m, None);
            qb.push(m, m, None);
            xab.push(m, 2 * m, Some(pi.l2t1.clone()));
            xba.push(2 * m, m, Some(pi.l1t2.clone()));
            i += 2;
            j += 1;
        }
    }
    if i != ap.len() || j != bp.len() {
        return Err(mismatch("unequal interface extents"));
    }
    Ok(InterfacePlan {
        n_master: pa.ncols(),
        p_alpha: pa,
        p_beta: pb,
        q_alpha: qa,
        q_beta: qb,
        x_ab: xab,
        x_ba: xba,
    })
}

/// How a parent turns its boundary data into the children's interface data.
#[derive(Debug, Clone)]
pub enum Downward<T: Scalar> {
    /// Interface values on the master points: `u3 = psi * u_b + w`.
    Dtn {
        psi: Mat<T>,
        w: Vec<T>,
        p_alpha: Transfer,
        p_beta: Transfer,
    },
    /// Incoming impedance data on each child's interface points.
    Iti {
        psi_alpha: Mat<T>,
        w_alpha: Vec<T>,
        psi_beta: Mat<T>,
        w_beta: Vec<T>,
    },
}

/// Operators stored at a parent node.
#[derive(Debug, Clone)]
pub struct NodeOperators<T: Scalar> {
    pub down: Downward<T>,
    /// DtN map `T` or ItI map `R` on the parent boundary; dropped once the
    /// parent itself has been merged unless kept for updates.
    pub boundary_op: Option<Mat<T>>,
    /// Outgoing particular data on the parent boundary.
    pub h_part: Vec<T>,
    pub maps: Arc<InterfaceMaps>,
}

impl<T: Scalar> NodeOperators<T> {
    /// Split the parent boundary data into the two children's boundary
    /// data (outer points copied, interface points from the stored
    /// operators).
    pub fn child_data(&self, parent: &[T]) -> (Vec<T>, Vec<T>) {
        let maps = &self.maps;
        let na = maps.alpha_outer.len() + maps.alpha_iface.len();
        let nb = maps.beta_outer.len() + maps.beta_iface.len();
        let mut a = vec![T::zero_value(); na];
        let mut b = vec![T::zero_value(); nb];
        for (p, &(c, k)) in maps.parent_sources.iter().enumerate() {
            match c {
                Child::Alpha => a[k] = parent[p],
                Child::Beta => b[k] = parent[p],
            }
        }
        let (ia, ib) = match &self.down {
            Downward::Dtn { psi, w, p_alpha, p_beta } => {
                let mut u3 = dense::matvec(psi, parent);
                for (u, wv) in u3.iter_mut().zip(w) {
                    *u += *wv;
                }
                (p_alpha.apply(&u3), p_beta.apply(&u3))
            }
            Downward::Iti {
                psi_alpha,
                w_alpha,
                psi_beta,
                w_beta,
            } => {
                let add = |m: &Mat<T>, w: &[T]| {
                    let mut v = dense::matvec(m, parent);
                    for (x, y) in v.iter_mut().zip(w) {
                        *x += *y;
                    }
                    v
                };
                (add(psi_alpha, w_alpha), add(psi_beta, w_beta))
            }
        };
        for (v, &k) in ia.iter().zip(&maps.alpha_iface) {
            a[k] = *v;
        }
        for (v, &k) in ib.iter().zip(&maps.beta_iface) {
            b[k] = *v;
        }
        (a, b)
    }

    /// Bytes of dense operator storage.
    pub fn bytes(&self) -> usize {
        let s = std::mem::size_of::<T>();
        let mats = match &self.down {
            Downward::Dtn { psi, p_alpha, p_beta, .. } => {
                psi.nrows() * psi.ncols() * s + p_alpha.dense_bytes() + p_beta.dense_bytes()
            }
            Downward::Iti { psi_alpha, psi_beta, .. } => {
                (psi_alpha.nrows() * psi_alpha.ncols() + psi_beta.nrows() * psi_beta.ncols()) * s
            }
        };
        let bop = self.boundary_op.as_ref().map_or(0, |m| m.nrows() * m.ncols() * s);
        mats + bop
    }
}

/// Child operators taking part in a merge.
pub struct ChildOps<'a, T: Scalar> {
    /// `T` or `R` on the child boundary.
    pub op: &'a Mat<T>,
    /// Outgoing particular data.
    pub h: &'a [T],
}

fn merge_failure(id: usize, level: usize, detail: String) -> HpsError {
    HpsError::MergeFailure {
        node: id,
        level,
        stage: Stage::Merge,
        detail,
    }
}

/// Assemble the parent boundary operator and particular data from each
/// child's `op[k, I3] * corr_c` correction, where `corr_c` maps parent
/// data to the child's interface data and `wc` is the child's particular
/// interface data.
fn assemble_parent<T: Scalar>(
    maps: &InterfaceMaps,
    alpha: &ChildOps<'_, T>,
    beta: &ChildOps<'_, T>,
    corr_alpha: &Mat<T>,
    w_alpha: &[T],
    corr_beta: &Mat<T>,
    w_beta: &[T],
) -> (Mat<T>, Vec<T>) {
    let np = maps.parent_sources.len();
    // rows of each child's operator at its outer points, interface columns
    let a_rows = dense::select(alpha.op, &maps.alpha_outer, &maps.alpha_iface);
    let b_rows = dense::select(beta.op, &maps.beta_outer, &maps.beta_iface);
    let sa = &a_rows * corr_alpha;
    let sb = &b_rows * corr_beta;
    let ha = dense::matvec(&a_rows, w_alpha);
    let hb = dense::matvec(&b_rows, w_beta);
    // position of each child outer index in the outer lists
    let mut pos_a = vec![usize::MAX; alpha.op.nrows()];
    for (r, &k) in maps.alpha_outer.iter().enumerate() {
        pos_a[k] = r;
    }
    let mut pos_b = vec![usize::MAX; beta.op.nrows()];
    for (r, &k) in maps.beta_outer.iter().enumerate() {
        pos_b[k] = r;
    }
    let mut t = Mat::<T>::zeros(np, np);
    let mut h = vec![T::zero_value(); np];
    for (p, &(c, k)) in maps.parent_sources.iter().enumerate() {
        let (s, op, hc, hcorr, pos) = match c {
            Child::Alpha => (&sa, alpha.op, alpha.h, &ha, &pos_a),
            Child::Beta => (&sb, beta.op, beta.h, &hb, &pos_b),
        };
        let r = pos[k];
        for q in 0..np {
            t[(p, q)] = s[(r, q)];
        }
        for (q, &(cq, kq)) in maps.parent_sources.iter().enumerate() {
            if cq == c {
                t[(p, q)] += op[(k, kq)];
            }
        }
        h[p] = hc[k] + hcorr[r];
    }
    (t, h)
}

/// DtN merge of two siblings, covering matching and non-matching
/// interfaces and body loads.
pub fn merge_dtn<T: Scalar>(
    alpha: ChildOps<'_, T>,
    beta: ChildOps<'_, T>,
    maps: Arc<InterfaceMaps>,
    plan: &InterfacePlan,
    id: usize,
    level: usize,
) -> Result<NodeOperators<T>> {
    let ta33 = dense::select(alpha.op, &maps.alpha_iface, &maps.alpha_iface);
    let tb33 = dense::select(beta.op, &maps.beta_iface, &maps.beta_iface);
    let ka = plan.q_alpha.left_mul(&plan.p_alpha.right_mul(&ta33));
    let kb = plan.q_beta.left_mul(&plan.p_beta.right_mul(&tb33));
    let k = &ka - &kb;
    let lu = Lu::new(&k).map_err(|e| merge_failure(id, level, format!("interface system: {}", e.detail)))?;

    let xa = plan.q_alpha.left_mul(&dense::select_rows(alpha.op, &maps.alpha_iface));
    let xb = plan.q_beta.left_mul(&dense::select_rows(beta.op, &maps.beta_iface));
    let np = maps.parent_sources.len();
    let nm = plan.n_master;
    let mut rhs = Mat::<T>::zeros(nm, np);
    for (p, &(c, kk)) in maps.parent_sources.iter().enumerate() {
        for i in 0..nm {
            rhs[(i, p)] = match c {
                Child::Alpha => -xa[(i, kk)],
                Child::Beta => xb[(i, kk)],
            };
        }
    }
    let psi = lu.solve(&rhs);

    let ha3 = plan.q_alpha.apply(&dense::gather(alpha.h, &maps.alpha_iface));
    let hb3 = plan.q_beta.apply(&dense::gather(beta.h, &maps.beta_iface));
    let any_h = ha3.iter().chain(&hb3).any(|v| *v != T::zero_value());
    let w = if any_h {
        let r: Vec<T> = hb3.iter().zip(&ha3).map(|(b, a)| *b - *a).collect();
        lu.solve_vec(&r)
    } else {
        vec![T::zero_value(); nm]
    };

    let corr_a = plan.p_alpha.left_mul(&psi);
    let corr_b = plan.p_beta.left_mul(&psi);
    let wa = plan.p_alpha.apply(&w);
    let wb = plan.p_beta.apply(&w);
    let (t, h) = assemble_parent(&maps, &alpha, &beta, &corr_a, &wa, &corr_b, &wb);
    if !dense::is_finite(&t) {
        return Err(merge_failure(id, level, "non-finite merged operator".into()));
    }
    Ok(NodeOperators {
        down: Downward::Dtn {
            psi,
            w,
            p_alpha: plan.p_alpha.clone(),
            p_beta: plan.p_beta.clone(),
        },
        boundary_op: Some(t),
        h_part: h,
        maps,
    })
}

/// ItI merge of two siblings. On the shared edge the incoming data of one
/// child is minus the outgoing data of the other.
pub fn merge_iti<T: Scalar>(
    alpha: ChildOps<'_, T>,
    beta: ChildOps<'_, T>,
    maps: Arc<InterfaceMaps>,
    plan: &InterfacePlan,
    id: usize,
    level: usize,
) -> Result<NodeOperators<T>> {
    let ra33 = dense::select(alpha.op, &maps.alpha_iface, &maps.alpha_iface);
    let rb33 = dense::select(beta.op, &maps.beta_iface, &maps.beta_iface);
    let na3 = maps.alpha_iface.len();
    // M = Xba Rb33 Xab
    let m = plan.x_ba.left_mul(&plan.x_ab.right_mul(&rb33));
    let mut wmat = &m * &ra33;
    wmat *= faer::Scale(-T::one_value());
    for i in 0..na3 {
        wmat[(i, i)] += T::one_value();
    }
    let lu = Lu::new(&wmat).map_err(|e| merge_failure(id, level, format!("impedance system: {}", e.detail)))?;

    let ra3 = dense::select_rows(alpha.op, &maps.alpha_iface);
    let rb3 = dense::select_rows(beta.op, &maps.beta_iface);
    let ma = &m * &ra3;
    let xb = plan.x_ba.left_mul(&rb3);
    let np = maps.parent_sources.len();
    let mut rhs = Mat::<T>::zeros(na3, np);
    for (p, &(c, k)) in maps.parent_sources.iter().enumerate() {
        for i in 0..na3 {
            rhs[(i, p)] = match c {
                Child::Alpha => ma[(i, k)],
                Child::Beta => -xb[(i, k)],
            };
        }
    }
    let psi_a = lu.solve(&rhs);

    // beta incoming = -Xab (Ra3o t_ao + Ra33 t_a3 + h_a3)
    let mut inner = &ra33 * &psi_a;
    for (p, &(c, k)) in maps.parent_sources.iter().enumerate() {
        if c == Child::Alpha {
            for i in 0..na3 {
                inner[(i, p)] += ra3[(i, k)];
            }
        }
    }
    let mut psi_b = plan.x_ab.left_mul(&inner);
    psi_b *= faer::Scale(-T::one_value());

    let ha3 = dense::gather(alpha.h, &maps.alpha_iface);
    let hb3 = dense::gather(beta.h, &maps.beta_iface);
    let any_h = ha3.iter().chain(&hb3).any(|v| *v != T::zero_value());
    let (w_a, w_b) = if any_h {
        let mh = dense::matvec(&m, &ha3);
        let xh = plan.x_ba.apply(&hb3);
        let r: Vec<T> = mh.iter().zip(&xh).map(|(a, b)| *a - *b).collect();
        let wa = lu.solve_vec(&r);
        let mut s = dense::matvec(&ra33, &wa);
        for (v, h) in s.iter_mut().zip(&ha3) {
            *v += *h;
        }
        let wb: Vec<T> = plan.x_ab.apply(&s).into_iter().map(|v| -v).collect();
        (wa, wb)
    } else {
        (vec![T::zero_value(); na3], vec![T::zero_value(); maps.beta_iface.len()])
    };

    let (r, h) = assemble_parent(&maps, &alpha, &beta, &psi_a, &w_a, &psi_b, &w_b);
    if !dense::is_finite(&r) {
        return Err(merge_failure(id, level, "non-finite merged operator".into()));
    }
    Ok(NodeOperators {
        down: Downward::Iti {
            psi_alpha: psi_a,
            w_alpha: w_a,
            psi_beta: psi_b,
            w_beta: w_b,
        },
        boundary_op: Some(r),
        h_part: h,
        maps,
    })
}
