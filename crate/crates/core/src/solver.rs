//! The hierarchical direct solver: upward build, downward solves and local
//! rebuilds after refinement.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use faer::Mat;

use crate::dense;
use crate::error::{HpsError, Result, Stage};
use crate::field::{LeafValues, SolutionField};
use crate::leafops::{self, LeafGrid, PdeOperatorSpec};
use crate::mergeops::{self, ChildOps, Downward, NodeOperators};
use crate::meshtree::{BoundaryLayout, InterfaceMaps, MeshTree, Side};
use crate::scalar::{c64, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Formulation {
    /// Dirichlet-to-Neumann maps.
    Dtn,
    /// Impedance-to-impedance maps with parameter `eta`.
    Iti { eta: c64 },
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Dtn => "dtn",
            Formulation::Iti { .. } => "iti",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Keep every node's boundary operator after its parent is merged, so
    /// that refined regions can be re-merged with clean siblings.
    pub retain_for_update: bool,
    /// Do not store leaf solution operators; the solve recomputes them
    /// leaf by leaf. Roughly halves memory at the cost of a slower solve.
    pub recompute_leaves: bool,
    /// Worker threads for leaf construction (0 or 1: sequential).
    pub threads: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BuildStats {
    pub leaf_seconds: f64,
    pub merge_seconds: f64,
    pub nodes_built: usize,
}

impl BuildStats {
    pub fn seconds(&self) -> f64 {
        self.leaf_seconds + self.merge_seconds
    }
}

#[derive(Debug, Clone)]
enum NodeKind<T: Scalar> {
    Leaf {
        grid: LeafGrid,
        /// Interior values (DtN) or all leaf unknowns (ItI) from boundary
        /// data; `None` with `recompute_leaves`.
        psi: Option<Mat<T>>,
        z: Vec<T>,
    },
    Parent {
        down: Downward<T>,
        maps: Arc<InterfaceMaps>,
    },
}

#[derive(Debug, Clone)]
struct NodeEntry<T: Scalar> {
    kind: NodeKind<T>,
    boundary_op: Option<Mat<T>>,
    h_part: Vec<T>,
}

impl<T: Scalar> NodeEntry<T> {
    fn bytes(&self) -> usize {
        let s = std::mem::size_of::<T>();
        let own = match &self.kind {
            NodeKind::Leaf { psi, .. } => psi.as_ref().map_or(0, |p| p.nrows() * p.ncols() * s),
            NodeKind::Parent { down, maps } => NodeOperators {
                down: down.clone(),
                boundary_op: None,
                h_part: Vec::new(),
                maps: maps.clone(),
            }
            .bytes(),
        };
        own + self.boundary_op.as_ref().map_or(0, |m| m.nrows() * m.ncols() * s)
    }
}

/// Bytes of stored operators.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub leaf_bytes: usize,
    pub parent_bytes: usize,
    /// Keyed by binary tree level.
    pub per_level: BTreeMap<usize, usize>,
    pub total: usize,
}

/// A merge tree together with the operators of every node.
#[derive(Debug, Clone)]
pub struct SolverTree<T: Scalar> {
    mesh: MeshTree,
    pde: PdeOperatorSpec<T>,
    formulation: Formulation,
    options: BuildOptions,
    nodes: Vec<Option<NodeEntry<T>>>,
    layouts: Vec<BoundaryLayout>,
    pub stats: BuildStats,
}

impl<T: Scalar> SolverTree<T> {
    /// An unbuilt solver over a mesh.
    pub fn new(
        mesh: MeshTree,
        pde: PdeOperatorSpec<T>,
        formulation: Formulation,
        options: BuildOptions,
    ) -> Result<Self> {
        if let Formulation::Iti { eta } = formulation {
            if !T::IS_COMPLEX {
                return Err(HpsError::FormulationMismatch(
                    "the impedance formulation needs complex scalars".into(),
                ));
            }
            if eta.re == 0.0 || !eta.re.is_finite() || !eta.im.is_finite() {
                return Err(HpsError::InvalidArgument(format!(
                    "impedance parameter must have nonzero real part, got {eta}"
                )));
            }
        }
        Ok(SolverTree {
            mesh,
            pde,
            formulation,
            options,
            nodes: Vec::new(),
            layouts: Vec::new(),
            stats: BuildStats::default(),
        })
    }

    /// Build all operators (leaves first, then parents in decreasing id).
    pub fn build(
        mesh: MeshTree,
        pde: PdeOperatorSpec<T>,
        formulation: Formulation,
        options: BuildOptions,
    ) -> Result<Self> {
        let mut tree = Self::new(mesh, pde, formulation, options)?;
        tree.build_all()?;
        Ok(tree)
    }

    pub fn build_all(&mut self) -> Result<()> {
        if !self.mesh.is_level_restricted() {
            return Err(HpsError::PreconditionViolation(
                "mesh is not level restricted".into(),
            ));
        }
        self.nodes = vec![None; self.mesh.num_nodes()];
        self.layouts = self.mesh.boundary_layouts();
        self.stats = BuildStats::default();
        let ids: Vec<usize> = (1..=self.mesh.num_nodes()).rev().collect();
        self.rebuild(&ids)
    }

    pub fn is_built(&self) -> bool {
        !self.nodes.is_empty() && self.nodes.iter().all(|n| n.is_some())
    }

    pub fn mesh(&self) -> &MeshTree {
        &self.mesh
    }

    pub fn pde(&self) -> &PdeOperatorSpec<T> {
        &self.pde
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }

    pub fn options(&self) -> BuildOptions {
        self.options
    }

    /// Boundary operator (`T` or `R`) of a node, if still stored.
    pub fn boundary_op(&self, id: usize) -> Option<&Mat<T>> {
        self.nodes.get(id - 1)?.as_ref()?.boundary_op.as_ref()
    }

    /// Outgoing particular data on a node's boundary.
    pub fn h_part(&self, id: usize) -> Option<&[T]> {
        self.nodes.get(id - 1)?.as_ref().map(|n| n.h_part.as_slice())
    }

    pub fn layout(&self, id: usize) -> &BoundaryLayout {
        &self.layouts[id - 1]
    }

    /// Rebuild the given nodes in the order given; parents must come after
    /// their children.
    fn rebuild(&mut self, ids: &[usize]) -> Result<()> {
        let n_c = self.mesh.n_c();
        let leaves: Vec<usize> = ids.iter().copied().filter(|&id| self.mesh.is_leaf(id)).collect();
        let t0 = Instant::now();
        let built = self.build_leaves(&leaves)?;
        for (id, entry) in leaves.iter().zip(built) {
            self.nodes[id - 1] = Some(entry);
            self.stats.nodes_built += 1;
        }
        self.stats.leaf_seconds += t0.elapsed().as_secs_f64();
        for &id in ids {
            let node = self.mesh.node(id).clone();
            match node.children {
                None => {}
                Some((a, b)) => {
                    let t0 = Instant::now();
                    let maps = Arc::new(InterfaceMaps::new(&self.layouts[a - 1], &self.layouts[b - 1])?);
                    let plan = mergeops::interface_plan(&maps, n_c)?;
                    let child = |k: usize| -> Result<ChildOps<'_, T>> {
                        let e = self.nodes[k - 1].as_ref().ok_or(HpsError::UnbuiltTree)?;
                        let op = e.boundary_op.as_ref().ok_or_else(|| {
                            HpsError::PreconditionViolation(format!(
                                "boundary operator of box {k} was discarded; build with retain_for_update"
                            ))
                        })?;
                        Ok(ChildOps { op, h: &e.h_part })
                    };
                    let level = node.rect.level;
                    let merged = match self.formulation {
                        Formulation::Dtn => mergeops::merge_dtn(child(a)?, child(b)?, maps.clone(), &plan, id, level)?,
                        Formulation::Iti { .. } => {
                            mergeops::merge_iti(child(a)?, child(b)?, maps.clone(), &plan, id, level)?
                        }
                    };
                    self.nodes[id - 1] = Some(NodeEntry {
                        kind: NodeKind::Parent {
                            down: merged.down,
                            maps,
                        },
                        boundary_op: merged.boundary_op,
                        h_part: merged.h_part,
                    });
                    if !self.options.retain_for_update {
                        for k in [a, b] {
                            if let Some(e) = self.nodes[k - 1].as_mut() {
                                e.boundary_op = None;
                            }
                        }
                    }
                    self.stats.merge_seconds += t0.elapsed().as_secs_f64();
                    self.stats.nodes_built += 1;
                }
            }
        }
        Ok(())
    }

    fn build_leaf(&self, id: usize) -> Result<NodeEntry<T>> {
        let grid = leafops::build_leaf_grid(self.mesh.node(id).rect, self.mesh.n_c())?;
        let keep = !self.options.recompute_leaves;
        Ok(match self.formulation {
            Formulation::Dtn => {
                let ops = leafops::build_leaf_dtn_for(&grid, &self.pde, id)?;
                NodeEntry {
                    kind: NodeKind::Leaf {
                        grid,
                        psi: keep.then_some(ops.psi),
                        z: ops.z_part,
                    },
                    boundary_op: Some(ops.t),
                    h_part: ops.h_part,
                }
            }
            Formulation::Iti { eta } => {
                let ops = leafops::build_leaf_iti_for(&grid, &self.pde, eta, id)?;
                NodeEntry {
                    kind: NodeKind::Leaf {
                        grid,
                        psi: keep.then_some(ops.psi),
                        z: ops.z_part,
                    },
                    boundary_op: Some(ops.r),
                    h_part: ops.h_part,
                }
            }
        })
    }

    /// Leaf operators for `ids`, split over `options.threads` workers.
    /// Each leaf is computed independently, so the result does not depend
    /// on the thread count.
    fn build_leaves(&self, ids: &[usize]) -> Result<Vec<NodeEntry<T>>> {
        let threads = self.options.threads.max(1).min(ids.len().max(1));
        if threads == 1 {
            return ids.iter().map(|&id| self.build_leaf(id)).collect();
        }
        let chunk = ids.len().div_ceil(threads);
        let parts: Vec<Result<Vec<NodeEntry<T>>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = ids
                .chunks(chunk)
                .map(|c| scope.spawn(move || c.iter().map(|&id| self.build_leaf(id)).collect()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("leaf worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(ids.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Rebuild operators after leaves of the mesh have been split.
    ///
    /// `refined` lists leaves that were split since the last build; leaves
    /// split by level restriction are detected and included automatically.
    /// Returns the ids of the rebuilt nodes, in rebuild order.
    pub fn update_after_refinement(&mut self, refined: &[usize]) -> Result<Vec<usize>> {
        if !self.is_built_prefix() {
            return Err(HpsError::UnbuiltTree);
        }
        let old_count = self.nodes.len();
        let mut split: BTreeSet<usize> = BTreeSet::new();
        for &id in refined {
            let was_leaf = id >= 1
                && id <= old_count
                && matches!(self.nodes[id - 1].as_ref().map(|e| &e.kind), Some(NodeKind::Leaf { .. }));
            if !was_leaf {
                return Err(HpsError::InvalidArgument(format!("box {id} was not a leaf")));
            }
            if self.mesh.is_leaf(id) {
                return Err(HpsError::InvalidArgument(format!("box {id} has not been split")));
            }
            split.insert(id);
        }
        for id in 1..=old_count {
            if !self.mesh.is_leaf(id)
                && matches!(self.nodes[id - 1].as_ref().map(|e| &e.kind), Some(NodeKind::Leaf { .. }))
            {
                split.insert(id);
            }
        }
        if split.is_empty() && self.mesh.num_nodes() == old_count {
            return Ok(Vec::new());
        }
        if !self.mesh.is_level_restricted() {
            return Err(HpsError::PreconditionViolation("mesh is not level restricted".into()));
        }
        let mut dirty: BTreeSet<usize> = (old_count + 1..=self.mesh.num_nodes()).collect();
        for &id in &split {
            dirty.insert(id);
            dirty.extend(self.mesh.ancestors(id));
        }
        // clean children of dirty parents must still hold their operators
        for &id in &dirty {
            if let Some((a, b)) = self.mesh.node(id).children {
                for k in [a, b] {
                    if !dirty.contains(&k) && self.nodes[k - 1].as_ref().and_then(|e| e.boundary_op.as_ref()).is_none() {
                        return Err(HpsError::PreconditionViolation(format!(
                            "boundary operator of box {k} was discarded; build with retain_for_update"
                        )));
                    }
                }
            }
        }
        self.nodes.resize(self.mesh.num_nodes(), None);
        self.layouts = self.mesh.boundary_layouts();
        let order: Vec<usize> = dirty.into_iter().rev().collect();
        self.rebuild(&order).map_err(|e| match e {
            HpsError::MergeFailure { node, level, detail, .. } => HpsError::MergeFailure {
                node,
                level,
                stage: Stage::Update,
                detail,
            },
            other => other,
        })?;
        Ok(order)
    }

    fn is_built_prefix(&self) -> bool {
        !self.nodes.is_empty() && self.nodes.iter().all(|n| n.is_some())
    }

    /// Split leaves, restore level restriction and update the operators.
    /// Returns the ids of all leaves that were split.
    pub fn refine(&mut self, leaves: &[usize]) -> Result<Vec<usize>> {
        let mut split = Vec::new();
        for &id in leaves {
            self.mesh.split_leaf(id)?;
            split.push(id);
        }
        split.extend(self.mesh.level_restrict()?);
        self.update_after_refinement(&split)?;
        Ok(split)
    }

    pub fn mesh_mut(&mut self) -> &mut MeshTree {
        &mut self.mesh
    }

    pub fn memory_report(&self) -> Result<MemoryReport> {
        if !self.is_built() {
            return Err(HpsError::UnbuiltTree);
        }
        let mut rep = MemoryReport {
            leaf_bytes: 0,
            parent_bytes: 0,
            per_level: BTreeMap::new(),
            total: 0,
        };
        for (idx, e) in self.nodes.iter().enumerate() {
            let e = e.as_ref().expect("built");
            let b = e.bytes();
            match e.kind {
                NodeKind::Leaf { .. } => rep.leaf_bytes += b,
                NodeKind::Parent { .. } => rep.parent_bytes += b,
            }
            *rep.per_level.entry(self.mesh.node(idx + 1).rect.level).or_default() += b;
            rep.total += b;
        }
        Ok(rep)
    }

    /// Points on the boundary of the whole domain, in root layout order,
    /// with the side each lies on.
    pub fn root_boundary_points(&self) -> Vec<(f64, f64, Side)> {
        self.layouts[0].points(self.mesh.n_c())
    }

    /// Downward sweep from root boundary data.
    fn sweep(&self, root: Vec<T>) -> Result<SolutionField<T>> {
        let n = self.mesh.n_c();
        let mut field = SolutionField::new(n);
        let mut stack = vec![(1usize, root)];
        while let Some((id, data)) = stack.pop() {
            let e = self.nodes[id - 1].as_ref().ok_or(HpsError::UnbuiltTree)?;
            match &e.kind {
                NodeKind::Parent { down, maps } => {
                    let ops = NodeOperators {
                        down: down.clone(),
                        boundary_op: None,
                        h_part: Vec::new(),
                        maps: maps.clone(),
                    };
                    let (a, b) = ops.child_data(&data);
                    let (ca, cb) = self.mesh.node(id).children.expect("parent has children");
                    stack.push((cb, b));
                    stack.push((ca, a));
                }
                NodeKind::Leaf { grid, psi, z } => {
                    let mut vals = vec![T::zero_value(); n * n];
                    let u = match psi {
                        Some(psi) => dense::matvec(psi, &data),
                        None => dense::matvec(&self.leaf_psi(id, grid)?, &data),
                    };
                    match self.formulation {
                        Formulation::Dtn => {
                            for (v, &k) in data.iter().zip(&grid.idx_boundary) {
                                vals[k] = *v;
                            }
                            for ((v, zz), &k) in u.iter().zip(z).zip(&grid.idx_interior) {
                                vals[k] = *v + *zz;
                            }
                        }
                        Formulation::Iti { .. } => {
                            for ((v, zz), k) in u.iter().zip(z).zip(grid.local_order()) {
                                vals[k] = *v + *zz;
                            }
                        }
                    }
                    if vals.iter().any(|v| !v.is_finite_value()) {
                        return Err(HpsError::LeafFactorization {
                            node: id,
                            level: grid.rect.level,
                            stage: Stage::Solve,
                            detail: "non-finite solution values".into(),
                        });
                    }
                    field.leaves.insert(id, LeafValues::from_tensor(grid.rect, n, vals));
                }
            }
        }
        Ok(field)
    }

    fn leaf_psi(&self, id: usize, grid: &LeafGrid) -> Result<Mat<T>> {
        Ok(match self.formulation {
            Formulation::Dtn => leafops::build_leaf_dtn_for(grid, &self.pde, id)?.psi,
            Formulation::Iti { eta } => leafops::build_leaf_iti_for(grid, &self.pde, eta, id)?.psi,
        })
    }

    /// Solve with Dirichlet data `f` on the domain boundary.
    pub fn solve_dirichlet(&self, f: impl Fn(f64, f64) -> T) -> Result<SolutionField<T>> {
        if !self.is_built() {
            return Err(HpsError::UnbuiltTree);
        }
        if self.formulation != Formulation::Dtn {
            return Err(HpsError::FormulationMismatch(
                "Dirichlet solves need a DtN-built tree".into(),
            ));
        }
        let mut data = Vec::new();
        for (x, y, _) in self.root_boundary_points() {
            let v = f(x, y);
            if !v.is_finite_value() {
                return Err(HpsError::Evaluation { x, y });
            }
            data.push(v);
        }
        self.sweep(data)
    }

    /// Solve with incoming impedance data `t(x, y, side)` on the domain
    /// boundary.
    pub fn solve_impedance(&self, t: impl Fn(f64, f64, Side) -> T) -> Result<SolutionField<T>> {
        if !self.is_built() {
            return Err(HpsError::UnbuiltTree);
        }
        if !matches!(self.formulation, Formulation::Iti { .. }) {
            return Err(HpsError::FormulationMismatch(
                "impedance solves need an ItI-built tree".into(),
            ));
        }
        let mut data = Vec::new();
        for (x, y, s) in self.root_boundary_points() {
            let v = t(x, y, s);
            if !v.is_finite_value() {
                return Err(HpsError::Evaluation { x, y });
            }
            data.push(v);
        }
        self.sweep(data)
    }
}
