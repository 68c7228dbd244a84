//! Chebyshev tail refinement indicator, the relative convergence error
//! between successive solutions, and the adaptive solve driver.

use std::time::Instant;

use crate::error::{HpsError, Result};
use crate::field::{LeafValues, SolutionField};
use crate::leafops::PdeOperatorSpec;
use crate::meshtree::{adaptive_interp_mesh, InterpOptions, MeshTree, NonFinitePolicy, Rect};
use crate::problems::BoundaryData;
use crate::scalar::{norm2, Scalar};
use crate::solver::{BuildOptions, Formulation, SolverTree};
use crate::spectral1d;

/// Tail indicator of one leaf from its full `n_c x n_c` tensor values
/// (x-major). Only interior grid lines are examined, so corner values are
/// never read.
pub fn leaf_indicator<T: Scalar>(values: &[T], n_c: usize) -> Result<f64> {
    if n_c < 4 || values.len() != n_c * n_c {
        return Err(HpsError::InvalidArgument(format!(
            "expected {} values for n_c = {n_c}, got {}",
            n_c * n_c,
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite_value()) {
        return Err(HpsError::InvalidArgument("non-finite field values".into()));
    }
    let tail = |line: &[T]| -> Result<f64> {
        let b = spectral1d::cheb_coeffs(line)?;
        Ok(b[n_c - 2].modulus() + (b[n_c - 1] - b[n_c - 3]).modulus())
    };
    let mut s: f64 = 0.0;
    let mut line = vec![T::zero_value(); n_c];
    for j in 1..n_c - 1 {
        // y-direction: the line x = x_j
        line.copy_from_slice(&values[j * n_c..(j + 1) * n_c]);
        s = s.max(tail(&line)?);
        // x-direction: the line y = y_j
        for (i, v) in line.iter_mut().enumerate() {
            *v = values[i * n_c + j];
        }
        s = s.max(tail(&line)?);
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementReport {
    /// `(leaf id, S)` in increasing id order.
    pub indicators: Vec<(usize, f64)>,
    pub s_div: f64,
    pub marked: Vec<usize>,
    pub iteration: usize,
}

/// Indicators at or below this multiple of the largest solution magnitude
/// are rounding noise and never marked.
pub const INDICATOR_NOISE: f64 = 1e-13;

/// Mark every leaf whose indicator exceeds a quarter of the largest one.
pub fn mark_leaves<T: Scalar>(solution: &SolutionField<T>, mesh: &MeshTree) -> Result<RefinementReport> {
    let leaves = mesh.leaves();
    if leaves.is_empty() {
        return Err(HpsError::InvalidArgument("empty tree".into()));
    }
    let mut indicators = Vec::with_capacity(leaves.len());
    let mut umax: f64 = 0.0;
    for id in leaves {
        let leaf = solution
            .leaf(id)
            .ok_or_else(|| HpsError::PreconditionViolation(format!("solution has no values on leaf {id}")))?;
        indicators.push((id, leaf_indicator(&leaf.values, leaf.n_c)?));
        umax = leaf.discretization_values().iter().fold(umax, |m, v| m.max(v.modulus()));
    }
    let s_div = 0.25 * indicators.iter().map(|e| e.1).fold(0.0, f64::max);
    let noise = INDICATOR_NOISE * umax;
    let marked = indicators
        .iter()
        .filter(|e| e.1 > s_div && e.1 > noise)
        .map(|e| e.0)
        .collect();
    Ok(RefinementReport {
        indicators,
        s_div,
        marked,
        iteration: 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `(old leaf id, E)`.
    pub per_leaf: Vec<(usize, f64)>,
    pub e_rel: f64,
    pub converged: bool,
}

/// `mean over old leaves of |u_old - u_new| / |u_old + u_new|`, with the new
/// solution interpolated onto the grids of refined old leaves.
pub fn convergence_error<T: Scalar>(
    old: &SolutionField<T>,
    new: &SolutionField<T>,
    eps: f64,
) -> Result<ConvergenceReport> {
    if old.leaves.is_empty() {
        return Err(HpsError::InvalidArgument("empty solution".into()));
    }
    let idx: Vec<usize> = LeafValues::<T>::discretization_indices(old.n_c).collect();
    let mut per_leaf = Vec::with_capacity(old.num_leaves());
    for (&id, leaf) in &old.leaves {
        let sampled;
        let nv: &[T] = match new.leaf(id) {
            Some(l) if l.rect == leaf.rect => &l.values,
            _ => {
                sampled = new.sample_on(&leaf.rect)?;
                &sampled
            }
        };
        let num = norm2(idx.iter().map(|&k| leaf.values[k] - nv[k]));
        let den = norm2(idx.iter().map(|&k| leaf.values[k] + nv[k]));
        let e = if num == 0.0 {
            0.0
        } else if den < 1e-300 {
            return Err(HpsError::DegenerateField { leaf: id });
        } else {
            num / den
        };
        per_leaf.push((id, e));
    }
    let e_rel = per_leaf.iter().map(|e| e.1).sum::<f64>() / per_leaf.len() as f64;
    Ok(ConvergenceReport {
        per_leaf,
        e_rel,
        converged: e_rel <= eps,
    })
}

#[derive(Debug, Clone)]
pub struct AdaptiveOptions {
    pub max_iterations: usize,
    /// Start mesh generation from a uniform mesh with this many quadrant
    /// levels instead of the single root box.
    pub seed_levels: Option<usize>,
    pub interp: InterpOptions,
    pub threads: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions {
            max_iterations: 20,
            seed_levels: None,
            interp: InterpOptions {
                on_nonfinite: NonFinitePolicy::Skip,
                ..InterpOptions::default()
            },
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub n_leaves: usize,
    pub n_marked: usize,
    pub s_div: f64,
    /// `None` on the last iteration when nothing was marked.
    pub e_rel: Option<f64>,
}

impl IterationLog {
    pub fn to_line(&self) -> String {
        format!(
            "{}, {}, {}, {:.16e}, {}",
            self.iteration,
            self.n_leaves,
            self.n_marked,
            self.s_div,
            self.e_rel.map_or("-".to_string(), |e| format!("{e:.16e}"))
        )
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveReport {
    pub n_initial: usize,
    /// Leaves of the mesh whose solution passed the convergence check.
    pub n_final: usize,
    /// Leaves of the returned solver, which includes the last refinement.
    pub n_returned: usize,
    /// Mesh generation from the coefficients.
    pub t_initial: f64,
    /// Builds, solves, indicators and updates of the refinement loop.
    pub t_final: f64,
    /// One solve with the final solver.
    pub t_solve: f64,
    pub converged: bool,
    pub iterations: Vec<IterationLog>,
}

pub struct AdaptiveResult<T: Scalar> {
    pub solver: SolverTree<T>,
    pub solution: SolutionField<T>,
    pub report: AdaptiveReport,
}

pub fn solve_with<T: Scalar>(tree: &SolverTree<T>, bc: &BoundaryData<T>) -> Result<SolutionField<T>> {
    match bc {
        BoundaryData::Dirichlet(f) => tree.solve_dirichlet(|x, y| f(x, y)),
        BoundaryData::Impedance(t) => tree.solve_impedance(|x, y, s| t(x, y, s)),
    }
}

/// Adaptive discretization: mesh from the coefficients, then indicator
/// driven refinement until successive solutions agree to `eps`.
///
/// Reaching the iteration cap is not an error; the result then has
/// `report.converged == false`.
pub fn adaptive_solve<T: Scalar>(
    pde: &PdeOperatorSpec<T>,
    boundary: &BoundaryData<T>,
    domain: Rect,
    eps: f64,
    n_c: usize,
    formulation: Formulation,
    options: &AdaptiveOptions,
) -> Result<AdaptiveResult<T>> {
    if !(eps > 0.0) {
        return Err(HpsError::InvalidArgument(format!("tolerance must be positive, got {eps}")));
    }
    let t0 = Instant::now();
    let seed = options
        .seed_levels
        .map(|l| MeshTree::uniform(domain, n_c, l))
        .transpose()?;
    let funcs = pde.variable_terms();
    let mut mesh = match (funcs.is_empty(), seed) {
        (true, Some(s)) => s,
        (true, None) => MeshTree::root_tree(domain, n_c)?,
        (false, seed) => adaptive_interp_mesh(&funcs, eps, n_c, domain, seed, options.interp)?.0,
    };
    mesh.max_depth = options.interp.max_depth;
    mesh.level_restrict()?;
    let t_initial = t0.elapsed().as_secs_f64();
    let n_initial = mesh.num_leaves();

    let t1 = Instant::now();
    let build = BuildOptions {
        retain_for_update: true,
        recompute_leaves: false,
        threads: options.threads,
    };
    let mut solver = SolverTree::build(mesh, pde.clone(), formulation, build)?;
    let mut u_old = solve_with(&solver, boundary)?;
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut n_accepted = solver.mesh().num_leaves();
    for it in 1..=options.max_iterations {
        let marks = mark_leaves(&u_old, solver.mesh())?;
        let mut log = IterationLog {
            iteration: it,
            n_leaves: solver.mesh().num_leaves(),
            n_marked: marks.marked.len(),
            s_div: marks.s_div,
            e_rel: None,
        };
        if marks.marked.is_empty() {
            iterations.push(log);
            converged = true;
            break;
        }
        n_accepted = solver.mesh().num_leaves();
        solver.refine(&marks.marked)?;
        let u_new = solve_with(&solver, boundary)?;
        let conv = convergence_error(&u_old, &u_new, eps)?;
        log.e_rel = Some(conv.e_rel);
        iterations.push(log);
        u_old = u_new;
        if conv.converged {
            converged = true;
            break;
        }
        n_accepted = solver.mesh().num_leaves();
    }
    let t_final = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let solution = solve_with(&solver, boundary)?;
    let t_solve = t2.elapsed().as_secs_f64();
    let n_returned = solver.mesh().num_leaves();
    let n_final = if converged { n_accepted } else { n_returned };
    Ok(AdaptiveResult {
        solver,
        solution,
        report: AdaptiveReport {
            n_initial,
            n_final,
            n_returned,
            t_initial,
            t_final,
            t_solve,
            converged,
            iterations,
        },
    })
}
