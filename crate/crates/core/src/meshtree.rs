//! Box geometry and the binary merge tree.
//!
//! Node ids are 1-based, the root is box 1 and every parent has a smaller
//! id than its children. Refinement happens in quadrant quanta: a leaf is
//! split in two, and each half is split again along the other axis, so a
//! refined box gains four grandchildren. The intermediate halves exist only
//! as merge nodes.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{HpsError, Result};
use crate::scalar::{norm2, Scalar};
use crate::spectral1d;

/// Axis-aligned box. `level` is the binary depth in the merge tree, so one
/// quadrant refinement adds 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub level: usize,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) || ![x0, x1, y0, y1].iter().all(|v| v.is_finite()) {
            return Err(HpsError::InvalidArgument(format!(
                "degenerate rectangle [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Ok(Rect {
            x0,
            x1,
            y0,
            y1,
            level: 0,
        })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Quadrant refinement depth.
    pub fn quad_level(&self) -> usize {
        self.level / 2
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    fn halves(&self, axis: SplitAxis) -> (Rect, Rect) {
        let level = self.level + 1;
        match axis {
            SplitAxis::Vertical => {
                let xm = 0.5 * (self.x0 + self.x1);
                (
                    Rect { x1: xm, level, ..*self },
                    Rect { x0: xm, level, ..*self },
                )
            }
            SplitAxis::Horizontal => {
                let ym = 0.5 * (self.y0 + self.y1);
                (
                    Rect { y1: ym, level, ..*self },
                    Rect { y0: ym, level, ..*self },
                )
            }
        }
    }

    /// The four closed quarters, ordered (sw, se, nw, ne).
    pub fn quarters(&self) -> [Rect; 4] {
        let xm = 0.5 * (self.x0 + self.x1);
        let ym = 0.5 * (self.y0 + self.y1);
        let level = self.level + 2;
        [
            Rect { x1: xm, y1: ym, level, ..*self },
            Rect { x0: xm, y1: ym, level, ..*self },
            Rect { x1: xm, y0: ym, level, ..*self },
            Rect { x0: xm, y0: ym, level, ..*self },
        ]
    }
}

/// Direction of the cut that separates two children. A vertical split
/// produces left (alpha) and right (beta) halves; a horizontal split
/// produces bottom (alpha) and top (beta) halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitAxis {
    Vertical,
    Horizontal,
}

impl SplitAxis {
    fn other(self) -> Self {
        match self {
            SplitAxis::Vertical => SplitAxis::Horizontal,
            SplitAxis::Horizontal => SplitAxis::Vertical,
        }
    }

    fn for_rect(r: &Rect) -> Self {
        if r.height() > r.width() {
            SplitAxis::Horizontal
        } else {
            SplitAxis::Vertical
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxNode {
    pub id: usize,
    pub rect: Rect,
    pub parent: Option<usize>,
    pub children: Option<(usize, usize)>,
    pub split_axis: Option<SplitAxis>,
}

impl BoxNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshTree {
    nodes: Vec<BoxNode>,
    n_c: usize,
    pub max_depth: usize,
}

pub const DEFAULT_MAX_DEPTH: usize = 30;

impl MeshTree {
    /// Single-leaf tree covering `domain`.
    pub fn root_tree(domain: Rect, n_c: usize) -> Result<Self> {
        Rect::new(domain.x0, domain.x1, domain.y0, domain.y1)?;
        if n_c < 4 {
            return Err(HpsError::InvalidArgument(format!("n_c must be >= 4, got {n_c}")));
        }
        let rect = Rect { level: 0, ..domain };
        Ok(MeshTree {
            nodes: vec![BoxNode {
                id: 1,
                rect,
                parent: None,
                children: None,
                split_axis: None,
            }],
            n_c,
            max_depth: DEFAULT_MAX_DEPTH,
        })
    }

    /// Uniform tree with `4^quad_levels` leaves, numbered breadth first so
    /// the children of box k are 2k and 2k+1.
    pub fn uniform(domain: Rect, n_c: usize, quad_levels: usize) -> Result<Self> {
        let mut tree = Self::root_tree(domain, n_c)?;
        let mut frontier = vec![1usize];
        for _ in 0..quad_levels {
            for pass in 0..2 {
                let mut next = Vec::with_capacity(frontier.len() * 2);
                for &id in &frontier {
                    let axis = if pass == 0 {
                        SplitAxis::for_rect(&tree.node(id).rect)
                    } else {
                        let parent = tree.node(id).parent.expect("half has a parent");
                        tree.node(parent).split_axis.expect("parent is split").other()
                    };
                    let (a, b) = tree.binary_split(id, axis);
                    next.push(a);
                    next.push(b);
                }
                frontier = next;
            }
        }
        Ok(tree)
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn root(&self) -> &BoxNode {
        &self.nodes[0]
    }

    pub fn domain(&self) -> Rect {
        self.nodes[0].rect
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: usize) -> &BoxNode {
        &self.nodes[id - 1]
    }

    pub fn get(&self, id: usize) -> Option<&BoxNode> {
        if id == 0 {
            None
        } else {
            self.nodes.get(id - 1)
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &BoxNode> {
        self.nodes.iter()
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.node(id).is_leaf()
    }

    /// Leaf ids in ascending order.
    pub fn leaves(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.id).collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Ancestors of `id` from its parent up to the root.
    pub fn ancestors(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.node(id).parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.node(p).parent;
        }
        out
    }

    /// Leaf ids in the subtree rooted at `id` (including `id` itself if it
    /// is a leaf), ascending.
    pub fn subtree_leaves(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(k) = stack.pop() {
            match self.node(k).children {
                None => out.push(k),
                Some((a, b)) => {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub(crate) fn binary_split(&mut self, id: usize, axis: SplitAxis) -> (usize, usize) {
        let rect = self.node(id).rect;
        let (ra, rb) = rect.halves(axis);
        let a = self.nodes.len() + 1;
        let b = a + 1;
        for (k, r) in [(a, ra), (b, rb)] {
            self.nodes.push(BoxNode {
                id: k,
                rect: r,
                parent: Some(id),
                children: None,
                split_axis: None,
            });
        }
        let node = &mut self.nodes[id - 1];
        node.children = Some((a, b));
        node.split_axis = Some(axis);
        (a, b)
    }

    /// Quadrant refinement of a leaf. Returns the four new leaf ids.
    pub fn split_leaf(&mut self, id: usize) -> Result<[usize; 4]> {
        let node = self
            .get(id)
            .ok_or_else(|| HpsError::InvalidArgument(format!("no box with id {id}")))?;
        if !node.is_leaf() {
            return Err(HpsError::InvalidArgument(format!("box {id} is not a leaf")));
        }
        if node.rect.quad_level() + 1 > self.max_depth {
            return Err(HpsError::DepthExceeded {
                depth: node.rect.quad_level() + 1,
                max_depth: self.max_depth,
            });
        }
        let axis = SplitAxis::for_rect(&node.rect);
        let (a, b) = self.binary_split(id, axis);
        let (a1, a2) = self.binary_split(a, axis.other());
        let (b1, b2) = self.binary_split(b, axis.other());
        Ok([a1, a2, b1, b2])
    }

    /// Smallest leaf containing the point (closed boxes; the first child
    /// wins on shared edges).
    pub fn leaf_containing(&self, x: f64, y: f64) -> Option<usize> {
        if !self.root().rect.contains(x, y) {
            return None;
        }
        let mut cur = 1;
        while let Some((a, b)) = self.node(cur).children {
            cur = if self.node(a).rect.contains(x, y) { a } else { b };
        }
        Some(cur)
    }

    /// Leaves on the far side of edge `side` of box `id` that share a
    /// segment of positive length with it.
    pub fn leaves_across(&self, id: usize, side: Side) -> Vec<usize> {
        let r = self.node(id).rect;
        // (line coordinate, tangential lo, tangential hi)
        let (line, lo, hi) = match side {
            Side::South => (r.y0, r.x0, r.x1),
            Side::North => (r.y1, r.x0, r.x1),
            Side::West => (r.x0, r.y0, r.y1),
            Side::East => (r.x1, r.y0, r.y1),
        };
        let mut out = Vec::new();
        let mut stack = vec![1usize];
        while let Some(k) = stack.pop() {
            let q = self.node(k).rect;
            let (touches, qlo, qhi) = match side {
                Side::South => (q.y1 == line, q.x0, q.x1),
                Side::North => (q.y0 == line, q.x0, q.x1),
                Side::West => (q.x1 == line, q.y0, q.y1),
                Side::East => (q.x0 == line, q.y0, q.y1),
            };
            let spans = match side {
                Side::South | Side::North => q.y0 <= line && line <= q.y1,
                Side::West | Side::East => q.x0 <= line && line <= q.x1,
            };
            if !spans || qhi <= lo || qlo >= hi {
                continue;
            }
            match self.node(k).children {
                Some((a, b)) => {
                    stack.push(a);
                    stack.push(b);
                }
                None => {
                    if touches && k != id {
                        out.push(k);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Split leaves until every pair of edge-adjacent leaves differs by at
    /// most one quadrant level. Returns the ids of the leaves that were
    /// split, in the order they were split.
    pub fn level_restrict(&mut self) -> Result<Vec<usize>> {
        let mut split = Vec::new();
        let mut queue: VecDeque<usize> = self.leaves().into_iter().collect();
        let mut queued: BTreeSet<usize> = queue.iter().cloned().collect();
        while let Some(id) = queue.pop_front() {
            queued.remove(&id);
            if !self.is_leaf(id) {
                continue;
            }
            let lvl = self.node(id).rect.quad_level();
            let too_coarse = Side::ALL.iter().any(|&s| {
                self.leaves_across(id, s)
                    .iter()
                    .any(|&k| self.node(k).rect.quad_level() > lvl + 1)
            });
            if !too_coarse {
                continue;
            }
            let kids = self.split_leaf(id)?;
            split.push(id);
            // the new quarters and the coarse neighbours of this box may now
            // violate the constraint
            let mut touched: Vec<usize> = kids.to_vec();
            for s in Side::ALL {
                touched.extend(self.leaves_across(id, s));
            }
            for k in touched {
                if self.is_leaf(k) && queued.insert(k) {
                    queue.push_back(k);
                }
            }
        }
        Ok(split)
    }

    /// True when every edge-adjacent leaf pair differs by at most one
    /// quadrant level.
    pub fn is_level_restricted(&self) -> bool {
        self.leaves().into_iter().all(|id| {
            let lvl = self.node(id).rect.quad_level() as i64;
            Side::ALL.iter().all(|&s| {
                self.leaves_across(id, s)
                    .into_iter()
                    .all(|k| (self.node(k).rect.quad_level() as i64 - lvl).abs() <= 1)
            })
        })
    }

    /// Boundary layout of every node, indexed by `id - 1`.
    pub fn boundary_layouts(&self) -> Vec<BoundaryLayout> {
        let m = self.n_c - 2;
        let mut out: Vec<Option<BoundaryLayout>> = vec![None; self.nodes.len()];
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            let layout = match node.children {
                None => BoundaryLayout::leaf(node.rect, m),
                Some((a, b)) => {
                    let la = out[a - 1].as_ref().expect("children processed first");
                    let lb = out[b - 1].as_ref().expect("children processed first");
                    BoundaryLayout::merged(
                        node.rect,
                        node.split_axis.expect("parent has an axis"),
                        la,
                        lb,
                    )
                }
            };
            out[idx] = Some(layout);
        }
        out.into_iter().map(|l| l.expect("all layouts built")).collect()
    }

    /// Boundary layout of a single node.
    pub fn layout_of(&self, id: usize) -> BoundaryLayout {
        let node = self.node(id);
        match node.children {
            None => BoundaryLayout::leaf(node.rect, self.n_c - 2),
            Some((a, b)) => BoundaryLayout::merged(
                node.rect,
                node.split_axis.expect("parent has an axis"),
                &self.layout_of(a),
                &self.layout_of(b),
            ),
        }
    }

    /// Index bookkeeping for merging the two children of `id`.
    pub fn interface_maps(&self, id: usize) -> Result<InterfaceMaps> {
        let node = self
            .get(id)
            .ok_or_else(|| HpsError::InvalidArgument(format!("no box with id {id}")))?;
        let (a, b) = node
            .children
            .ok_or_else(|| HpsError::InvalidArgument(format!("box {id} is a leaf")))?;
        InterfaceMaps::new(&self.layout_of(a), &self.layout_of(b))
    }

    /// One line per leaf: `id, x0, x1, y0, y1, level` (quadrant level).
    pub fn export_leaves(&self) -> String {
        let mut s = String::from("# id, x0, x1, y0, y1, level\n");
        for id in self.leaves() {
            let r = self.node(id).rect;
            let _ = writeln!(
                s,
                "{}, {:.17e}, {:.17e}, {:.17e}, {:.17e}, {}",
                id,
                r.x0,
                r.x1,
                r.y0,
                r.y1,
                r.quad_level()
            );
        }
        s
    }
}

/// A leaf record as stored in a mesh export.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafRecord {
    pub id: usize,
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub level: usize,
}

pub fn parse_leaf_records(text: &str) -> Result<Vec<LeafRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if f.len() != 6 {
            return Err(HpsError::Parse(format!(
                "mesh line {}: expected 6 fields, got {}",
                lineno + 1,
                f.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| HpsError::Parse(format!("mesh line {}: {e}", lineno + 1)))
        };
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| HpsError::Parse(format!("mesh line {}: {e}", lineno + 1)))
        };
        out.push(LeafRecord {
            id: int(f[0])?,
            x0: num(f[1])?,
            x1: num(f[2])?,
            y0: num(f[3])?,
            y1: num(f[4])?,
            level: int(f[5])?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    South,
    East,
    North,
    West,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::South, Side::East, Side::North, Side::West];

    pub fn index(self) -> usize {
        match self {
            Side::South => 0,
            Side::East => 1,
            Side::North => 2,
            Side::West => 3,
        }
    }

    /// Outward unit normal.
    pub fn normal(self) -> (f64, f64) {
        match self {
            Side::South => (0.0, -1.0),
            Side::East => (1.0, 0.0),
            Side::North => (0.0, 1.0),
            Side::West => (-1.0, 0.0),
        }
    }
}

/// A leaf edge seen from a larger box: `n_c - 2` Chebyshev points on the
/// open interval (lo, hi) of the tangential coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub lo: f64,
    pub hi: f64,
}

impl Panel {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    /// The panel's points along the tangential coordinate.
    pub fn nodes(&self, n_c: usize) -> Vec<f64> {
        let s = spectral1d::cheb_nodes(n_c, self.lo, self.hi).expect("valid panel");
        s.interior().to_vec()
    }
}

/// Ordering of the boundary points of a box: sides in the order
/// south, east, north, west; panels within a side ascending in the
/// tangential coordinate; `m = n_c - 2` points per panel.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLayout {
    pub rect: Rect,
    pub sides: [Vec<Panel>; 4],
    pub m: usize,
}

impl BoundaryLayout {
    pub fn leaf(rect: Rect, m: usize) -> Self {
        let h = vec![Panel { lo: rect.x0, hi: rect.x1 }];
        let v = vec![Panel { lo: rect.y0, hi: rect.y1 }];
        BoundaryLayout {
            rect,
            sides: [h.clone(), v.clone(), h, v],
            m,
        }
    }

    pub fn merged(rect: Rect, axis: SplitAxis, a: &BoundaryLayout, b: &BoundaryLayout) -> Self {
        let cat = |p: &[Panel], q: &[Panel]| p.iter().chain(q).cloned().collect::<Vec<_>>();
        let [a_s, a_e, a_n, a_w] = &a.sides;
        let [b_s, b_e, b_n, b_w] = &b.sides;
        let sides = match axis {
            SplitAxis::Vertical => [cat(a_s, b_s), b_e.clone(), cat(a_n, b_n), a_w.clone()],
            SplitAxis::Horizontal => [a_s.clone(), cat(a_e, b_e), b_n.clone(), cat(a_w, b_w)],
        };
        BoundaryLayout { rect, sides, m: a.m }
    }

    pub fn len(&self) -> usize {
        self.sides.iter().map(|s| s.len()).sum::<usize>() * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn side_offset(&self, side: Side) -> usize {
        self.sides[..side.index()].iter().map(|s| s.len()).sum::<usize>() * self.m
    }

    pub fn side_len(&self, side: Side) -> usize {
        self.sides[side.index()].len() * self.m
    }

    /// Coordinates and side of every boundary point, in layout order.
    pub fn points(&self, n_c: usize) -> Vec<(f64, f64, Side)> {
        let mut out = Vec::with_capacity(self.len());
        for side in Side::ALL {
            for p in &self.sides[side.index()] {
                for t in p.nodes(n_c) {
                    out.push(match side {
                        Side::South => (t, self.rect.y0, side),
                        Side::North => (t, self.rect.y1, side),
                        Side::East => (self.rect.x1, t, side),
                        Side::West => (self.rect.x0, t, side),
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Child {
    Alpha,
    Beta,
}

/// Index sets for merging two sibling boxes.
///
/// `alpha_outer` (I1) and `beta_outer` (I2) index the children's
/// boundary orderings for points that stay on the parent boundary;
/// `alpha_iface` and `beta_iface` (I3, one list per child) index the shared
/// edge, each ascending in the tangential coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceMaps {
    pub axis: SplitAxis,
    pub alpha_outer: Vec<usize>,
    pub beta_outer: Vec<usize>,
    pub alpha_iface: Vec<usize>,
    pub beta_iface: Vec<usize>,
    pub alpha_panels: Vec<Panel>,
    pub beta_panels: Vec<Panel>,
    /// For each parent boundary point (parent layout order): source child
    /// and index in that child's boundary ordering.
    pub parent_sources: Vec<(Child, usize)>,
    pub parent_layout: BoundaryLayout,
}

impl InterfaceMaps {
    pub fn new(a: &BoundaryLayout, b: &BoundaryLayout) -> Result<Self> {
        let (ra, rb) = (a.rect, b.rect);
        let axis = if ra.x1 == rb.x0 && ra.y0 == rb.y0 && ra.y1 == rb.y1 {
            SplitAxis::Vertical
        } else if ra.y1 == rb.y0 && ra.x0 == rb.x0 && ra.x1 == rb.x1 {
            SplitAxis::Horizontal
        } else {
            return Err(HpsError::CorruptTree(format!(
                "boxes [{}, {}]x[{}, {}] and [{}, {}]x[{}, {}] do not share a full edge",
                ra.x0, ra.x1, ra.y0, ra.y1, rb.x0, rb.x1, rb.y0, rb.y1
            )));
        };
        if a.m != b.m {
            return Err(HpsError::CorruptTree("children use different orders".into()));
        }
        let (a_side, b_side) = match axis {
            SplitAxis::Vertical => (Side::East, Side::West),
            SplitAxis::Horizontal => (Side::North, Side::South),
        };
        let range = |l: &BoundaryLayout, s: Side| {
            let o = l.side_offset(s);
            o..o + l.side_len(s)
        };
        let ai = range(a, a_side);
        let bi = range(b, b_side);
        let alpha_iface: Vec<usize> = ai.clone().collect();
        let beta_iface: Vec<usize> = bi.clone().collect();
        let alpha_outer: Vec<usize> = (0..a.len()).filter(|k| !ai.contains(k)).collect();
        let beta_outer: Vec<usize> = (0..b.len()).filter(|k| !bi.contains(k)).collect();

        let rect = Rect {
            x0: ra.x0,
            x1: rb.x1.max(ra.x1),
            y0: ra.y0,
            y1: rb.y1.max(ra.y1),
            level: ra.level.saturating_sub(1),
        };
        let parent_layout = BoundaryLayout::merged(rect, axis, a, b);
        let side = |l: &BoundaryLayout, c: Child, s: Side| {
            range(l, s).map(move |k| (c, k)).collect::<Vec<_>>()
        };
        let (al, be) = (Child::Alpha, Child::Beta);
        let mut parent_sources = Vec::with_capacity(parent_layout.len());
        match axis {
            SplitAxis::Vertical => {
                parent_sources.extend(side(a, al, Side::South));
                parent_sources.extend(side(b, be, Side::South));
                parent_sources.extend(side(b, be, Side::East));
                parent_sources.extend(side(a, al, Side::North));
                parent_sources.extend(side(b, be, Side::North));
                parent_sources.extend(side(a, al, Side::West));
            }
            SplitAxis::Horizontal => {
                parent_sources.extend(side(a, al, Side::South));
                parent_sources.extend(side(a, al, Side::East));
                parent_sources.extend(side(b, be, Side::East));
                parent_sources.extend(side(b, be, Side::North));
                parent_sources.extend(side(a, al, Side::West));
                parent_sources.extend(side(b, be, Side::West));
            }
        }
        debug_assert_eq!(parent_sources.len(), parent_layout.len());
        Ok(InterfaceMaps {
            axis,
            alpha_outer,
            beta_outer,
            alpha_iface,
            beta_iface,
            alpha_panels: a.sides[a_side.index()].clone(),
            beta_panels: b.sides[b_side.index()].clone(),
            parent_sources,
            parent_layout,
        })
    }
}

pub type ScalarFn<T> = Arc<dyn Fn(f64, f64) -> T + Send + Sync>;

/// What to do when adaptive interpolation wants to split a box that is
/// already at the depth limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthPolicy {
    Error,
    /// Keep the box as a leaf and count it in the statistics.
    Stop,
}

#[derive(Debug, Clone, Copy)]
pub struct InterpOptions {
    pub max_depth: usize,
    pub on_depth_limit: DepthPolicy,
    /// Boxes whose grandchild samples are tiny compared to the global
    /// magnitude of the function are judged against
    /// `floor * max|f| * sqrt(#samples)` instead of their own norm.
    pub floor: f64,
    pub on_nonfinite: NonFinitePolicy,
}

/// What to do when a function is not finite at a sample point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonFinitePolicy {
    Error,
    /// The function does not take part in the refinement decision for
    /// boxes where it has non-finite samples.
    Skip,
}

impl Default for InterpOptions {
    fn default() -> Self {
        InterpOptions {
            max_depth: DEFAULT_MAX_DEPTH,
            on_depth_limit: DepthPolicy::Error,
            floor: 1e-8,
            on_nonfinite: NonFinitePolicy::Error,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct InterpStats {
    pub boxes_tested: usize,
    pub depth_capped: usize,
    /// Box tests skipped because of non-finite samples.
    pub nonfinite_skipped: usize,
}

/// Tensor interpolation from a box's n x n grid to the grids of its four
/// quarters, as 1D factors for the lower and upper halves.
struct QuarterInterp {
    lower: Vec<f64>,
    upper: Vec<f64>,
    n: usize,
}

impl QuarterInterp {
    fn new(n: usize) -> Self {
        let r = spectral1d::reference(n);
        let lo: Vec<f64> = r.points.iter().map(|t| 0.5 * (t - 1.0)).collect();
        let hi: Vec<f64> = r.points.iter().map(|t| 0.5 * (t + 1.0)).collect();
        let flat = |dst: &[f64]| {
            let m = spectral1d::interp_matrix(&r.points, dst).expect("distinct nodes");
            let mut v = vec![0.0; n * n];
            for i in 0..n {
                for k in 0..n {
                    v[i * n + k] = m[(i, k)];
                }
            }
            v
        };
        QuarterInterp {
            lower: flat(&lo),
            upper: flat(&hi),
            n,
        }
    }

    /// Apply Lx (rows) and Ly (columns) to an n x n tensor with x-major layout.
    fn apply<T: Scalar>(&self, f: &[T], upper_x: bool, upper_y: bool) -> Vec<T> {
        let n = self.n;
        let lx = if upper_x { &self.upper } else { &self.lower };
        let ly = if upper_y { &self.upper } else { &self.lower };
        let mut tmp = vec![T::zero_value(); n * n];
        for i in 0..n {
            for k in 0..n {
                let c = lx[i * n + k];
                if c == 0.0 {
                    continue;
                }
                for j in 0..n {
                    tmp[i * n + j] += f[k * n + j].scale(c);
                }
            }
        }
        let mut out = vec![T::zero_value(); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = T::zero_value();
                for l in 0..n {
                    acc += tmp[i * n + l].scale(ly[j * n + l]);
                }
                out[i * n + j] = acc;
            }
        }
        out
    }
}

fn sample_tensor_or_skip<T: Scalar>(
    f: &ScalarFn<T>,
    rect: &Rect,
    n: usize,
    policy: NonFinitePolicy,
) -> Result<Option<Vec<T>>> {
    let xs = spectral1d::cheb_nodes(n, rect.x0, rect.x1)?;
    let ys = spectral1d::cheb_nodes(n, rect.y0, rect.y1)?;
    let mut out = Vec::with_capacity(n * n);
    for &x in &xs.points {
        for &y in &ys.points {
            let v = f(x, y);
            if !v.is_finite_value() {
                return match policy {
                    NonFinitePolicy::Error => Err(HpsError::Evaluation { x, y }),
                    NonFinitePolicy::Skip => Ok(None),
                };
            }
            out.push(v);
        }
    }
    Ok(Some(out))
}

/// Relative error of interpolating `f` from the box grid to the grids of
/// its four quarters. `floor_abs` bounds the denominator from below.
pub fn interp_error<T: Scalar>(f: &ScalarFn<T>, rect: &Rect, n: usize, floor_abs: f64) -> Result<f64> {
    let q = QuarterInterp::new(n);
    interp_error_with(&q, f, rect, n, floor_abs, NonFinitePolicy::Error).map(|r| r.expect("errors on non-finite").0)
}

fn interp_error_with<T: Scalar>(
    q: &QuarterInterp,
    f: &ScalarFn<T>,
    rect: &Rect,
    n: usize,
    floor_abs: f64,
    policy: NonFinitePolicy,
) -> Result<Option<(f64, f64)>> {
    let Some(parent) = sample_tensor_or_skip(f, rect, n, policy)? else {
        return Ok(None);
    };
    let mut diff = Vec::with_capacity(4 * n * n);
    let mut kids = Vec::with_capacity(4 * n * n);
    let quads = rect.quarters();
    for (k, qr) in quads.iter().enumerate() {
        let Some(exact) = sample_tensor_or_skip(f, qr, n, policy)? else {
            return Ok(None);
        };
        let approx = q.apply(&parent, k % 2 == 1, k >= 2);
        for (e, a) in exact.iter().zip(&approx) {
            diff.push(*e - *a);
        }
        kids.extend(exact);
    }
    let num = norm2(diff.iter().cloned());
    let den = norm2(kids.iter().cloned());
    let gmax = kids
        .iter()
        .chain(parent.iter())
        .fold(0.0f64, |m, v| m.max(v.modulus()));
    let den = den.max(floor_abs);
    let e = if den <= 1e-300 {
        if num <= 1e-300 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    };
    Ok(Some((e, gmax)))
}

/// Build a mesh on which every function in `funcs` is interpolated from
/// each leaf's grid to its grandchildren's grids with relative error at
/// most `eps`.
pub fn adaptive_interp_mesh<T: Scalar>(
    funcs: &[ScalarFn<T>],
    eps: f64,
    n_c: usize,
    domain: Rect,
    seed: Option<MeshTree>,
    opts: InterpOptions,
) -> Result<(MeshTree, InterpStats)> {
    if !(eps > 0.0) {
        return Err(HpsError::InvalidArgument(format!("tolerance must be positive, got {eps}")));
    }
    if funcs.is_empty() {
        return Err(HpsError::InvalidArgument("no functions to interpolate".into()));
    }
    let mut tree = match seed {
        Some(t) => {
            if t.n_c() != n_c {
                return Err(HpsError::InvalidArgument("seed mesh uses a different n_c".into()));
            }
            t
        }
        None => MeshTree::root_tree(domain, n_c)?,
    };
    tree.max_depth = opts.max_depth;
    let q = QuarterInterp::new(n_c);
    let samples = 4 * n_c * n_c;

    // global magnitude of each function, from the starting leaves and their quarters
    let mut gscale = vec![0.0f64; funcs.len()];
    for id in tree.leaves() {
        let r = tree.node(id).rect;
        for (g, f) in gscale.iter_mut().zip(funcs) {
            if let Some((_, m)) = interp_error_with(&q, f, &r, n_c, f64::INFINITY, opts.on_nonfinite)? {
                *g = g.max(m);
            }
        }
    }

    let mut stats = InterpStats::default();
    let mut queue: VecDeque<usize> = tree.leaves().into_iter().collect();
    while let Some(id) = queue.pop_front() {
        let rect = tree.node(id).rect;
        stats.boxes_tested += 1;
        let mut refine = false;
        for (f, g) in funcs.iter().zip(&gscale) {
            let floor_abs = opts.floor * g * (samples as f64).sqrt();
            let Some((e, _)) = interp_error_with(&q, f, &rect, n_c, floor_abs, opts.on_nonfinite)? else {
                stats.nonfinite_skipped += 1;
                continue;
            };
            if !(e <= eps) {
                refine = true;
                break;
            }
        }
        if !refine {
            continue;
        }
        if rect.quad_level() + 1 > opts.max_depth {
            match opts.on_depth_limit {
                DepthPolicy::Error => {
                    return Err(HpsError::DepthExceeded {
                        depth: rect.quad_level() + 1,
                        max_depth: opts.max_depth,
                    })
                }
                DepthPolicy::Stop => {
                    stats.depth_capped += 1;
                    continue;
                }
            }
        }
        for k in tree.split_leaf(id)? {
            queue.push_back(k);
        }
    }
    Ok((tree, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Rect {
        Rect::new(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    /// Brute-force pairwise scan for edge adjacency with positive overlap.
    fn adjacent(a: &Rect, b: &Rect) -> bool {
        let ov = |l0: f64, h0: f64, l1: f64, h1: f64| h0.min(h1) - l0.max(l1) > 0.0;
        ((a.x1 == b.x0 || b.x1 == a.x0) && ov(a.y0, a.y1, b.y0, b.y1))
            || ((a.y1 == b.y0 || b.y1 == a.y0) && ov(a.x0, a.x1, b.x0, b.x1))
    }

    fn brute_force_balanced(t: &MeshTree) -> bool {
        let leaves = t.leaves();
        for &a in &leaves {
            for &b in &leaves {
                let (ra, rb) = (t.node(a).rect, t.node(b).rect);
                if a != b
                    && adjacent(&ra, &rb)
                    && (ra.quad_level() as i64 - rb.quad_level() as i64).abs() > 1
                {
                    return false;
                }
            }
        }
        true
    }

    fn assert_tiles(t: &MeshTree) {
        let leaves = t.leaves();
        let area: f64 = leaves.iter().map(|&k| t.node(k).rect.area()).sum();
        assert!((area - t.domain().area()).abs() <= 1e-12 * t.domain().area());
        for (i, &a) in leaves.iter().enumerate() {
            for &b in &leaves[i + 1..] {
                let (ra, rb) = (t.node(a).rect, t.node(b).rect);
                let ox = ra.x1.min(rb.x1) - ra.x0.max(rb.x0);
                let oy = ra.y1.min(rb.y1) - ra.y0.max(rb.y0);
                assert!(!(ox > 0.0 && oy > 0.0), "leaves {a} and {b} overlap");
            }
        }
        for n in t.nodes() {
            if let Some((a, b)) = n.children {
                assert!(a > n.id && b > n.id);
            }
        }
    }

    #[test]
    fn root_tree_basics() {
        let t = MeshTree::root_tree(unit(), 16).unwrap();
        assert_eq!(t.num_nodes(), 1);
        assert!(t.root().is_leaf());
        assert_eq!(t.root().id, 1);
        assert_eq!(t.root().rect, unit());
        assert!(MeshTree::root_tree(unit(), 3).is_err());
    }

    #[test]
    fn split_produces_quadrants() {
        let mut t = MeshTree::root_tree(unit(), 16).unwrap();
        let kids = t.split_leaf(1).unwrap();
        assert_eq!(t.num_nodes(), 7);
        let mut got: Vec<(f64, f64, f64, f64)> = kids
            .iter()
            .map(|&k| {
                let r = t.node(k).rect;
                (r.x0, r.x1, r.y0, r.y1)
            })
            .collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            got,
            vec![
                (0.0, 0.5, 0.0, 0.5),
                (0.0, 0.5, 0.5, 1.0),
                (0.5, 1.0, 0.0, 0.5),
                (0.5, 1.0, 0.5, 1.0)
            ]
        );
        assert_eq!(t.node(1).split_axis, Some(SplitAxis::Vertical));
        assert!(t.split_leaf(1).is_err());
        let again = t.split_leaf(kids[0]).unwrap();
        for k in again {
            let r = t.node(k).rect;
            assert_eq!(r.quad_level(), 2);
            assert_eq!(r.width(), 0.25);
        }
        assert_tiles(&t);
    }

    #[test]
    fn uniform_tree_uses_heap_numbering() {
        let t = MeshTree::uniform(unit(), 16, 2).unwrap();
        assert_eq!(t.num_nodes(), 31);
        assert_eq!(t.leaves(), (16..=31).collect::<Vec<_>>());
        for id in 2..=31 {
            assert_eq!(t.node(id).parent, Some(id / 2));
        }
        // boxes 16..19 are the grandchildren of box 4
        for k in 16..=19 {
            assert_eq!(t.node(t.node(k).parent.unwrap()).parent, Some(4));
        }
        assert_tiles(&t);
    }

    #[test]
    fn leaves_across_finds_neighbours() {
        let mut t = MeshTree::uniform(unit(), 8, 1).unwrap();
        // leaves 4,5 (left column: bottom, top), 6,7 (right column)
        assert_eq!(t.leaves_across(4, Side::East), vec![6]);
        assert_eq!(t.leaves_across(4, Side::North), vec![5]);
        assert!(t.leaves_across(4, Side::West).is_empty());
        t.split_leaf(6).unwrap();
        let across = t.leaves_across(4, Side::East);
        assert_eq!(across.len(), 2);
    }

    #[test]
    fn level_restriction_balances_deep_leaf() {
        let mut t = MeshTree::uniform(unit(), 8, 1).unwrap();
        // drive the south-east corner of the south-west quadrant to level 3
        let mut target = 4;
        for _ in 0..2 {
            let kids = t.split_leaf(target).unwrap();
            target = kids[1];
        }
        assert!(!brute_force_balanced(&t));
        let split = t.level_restrict().unwrap();
        assert!(!split.is_empty());
        assert!(brute_force_balanced(&t));
        assert!(t.is_level_restricted());
        let before = t.clone();
        assert!(t.level_restrict().unwrap().is_empty());
        assert_eq!(t, before);
        assert_tiles(&t);
    }

    #[test]
    fn balanced_tree_is_unchanged() {
        let mut t = MeshTree::uniform(unit(), 8, 2).unwrap();
        let before = t.clone();
        assert!(t.level_restrict().unwrap().is_empty());
        assert_eq!(t, before);
    }

    #[test]
    fn interface_counts() {
        let mut t = MeshTree::root_tree(Rect::new(0.0, 2.0, 0.0, 1.0).unwrap(), 16).unwrap();
        let (a, b) = t.binary_split(1, SplitAxis::Vertical);
        let maps = t.interface_maps(1).unwrap();
        assert_eq!(maps.alpha_outer.len(), 42);
        assert_eq!(maps.beta_outer.len(), 42);
        assert_eq!(maps.alpha_iface.len(), 14);
        assert_eq!(maps.beta_iface.len(), 14);
        assert_eq!(maps.parent_layout.len(), 84);
        // refine beta once: its west side has two panels
        t.split_leaf(b).unwrap();
        let maps = t.interface_maps(1).unwrap();
        assert_eq!(maps.alpha_iface.len(), 14);
        assert_eq!(maps.beta_iface.len(), 28);
        let la = t.layout_of(a);
        assert!(matches!(
            InterfaceMaps::new(&la, &la),
            Err(HpsError::CorruptTree(_))
        ));
    }

    #[test]
    fn layout_points_follow_side_order() {
        let l = BoundaryLayout::leaf(unit(), 4);
        let pts = l.points(6);
        assert_eq!(pts.len(), 16);
        assert!(pts[..4].iter().all(|p| p.1 == 0.0 && p.2 == Side::South));
        assert!(pts[4..8].iter().all(|p| p.0 == 1.0));
        assert!(pts[8..12].iter().all(|p| p.1 == 1.0));
        assert!(pts[12..].iter().all(|p| p.0 == 0.0));
        assert!(pts[..4].windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn constant_function_needs_no_refinement() {
        let f: ScalarFn<f64> = Arc::new(|_, _| 1.0);
        let (t, _) = adaptive_interp_mesh(&[f], 1e-12, 16, unit(), None, InterpOptions::default()).unwrap();
        assert_eq!(t.num_leaves(), 1);
        let z: ScalarFn<f64> = Arc::new(|_, _| 0.0);
        let (t, _) = adaptive_interp_mesh(&[z], 1e-12, 16, unit(), None, InterpOptions::default()).unwrap();
        assert_eq!(t.num_leaves(), 1);
    }

    #[test]
    fn huge_tolerance_keeps_seed() {
        let f: ScalarFn<f64> = Arc::new(|x, y| (3.0 * x).sin() * y);
        let seed = MeshTree::uniform(unit(), 8, 1).unwrap();
        let (t, _) =
            adaptive_interp_mesh(&[f], 10.0, 8, unit(), Some(seed.clone()), InterpOptions::default()).unwrap();
        assert_eq!(t, seed);
    }

    #[test]
    fn gaussian_bump_clusters_refinement() {
        let f: ScalarFn<f64> = Arc::new(|x, y| {
            (-(1000.0 * (x - 0.11f64).powi(2) + 100.0 * (y - 0.27f64).powi(2))).exp()
        });
        let (mut t, _) = adaptive_interp_mesh(&[f], 1e-6, 16, unit(), None, InterpOptions::default()).unwrap();
        assert!(t.num_leaves() > 4);
        let deepest = t.leaves().into_iter().map(|k| t.node(k).rect.level).max().unwrap();
        let centre = t.leaf_containing(0.11, 0.27).unwrap();
        assert_eq!(t.node(centre).rect.level, deepest);
        let far = t.leaf_containing(0.9, 0.9).unwrap();
        assert!(t.node(far).rect.level < deepest);
        let n_before = t.num_leaves();
        t.level_restrict().unwrap();
        assert!(t.num_leaves() >= n_before);
        assert!(brute_force_balanced(&t));
        assert_tiles(&t);
    }

    #[test]
    fn tighter_tolerance_refines_looser_mesh() {
        let f: ScalarFn<f64> = Arc::new(|x, y| (8.0 * x * y).sin() + (-(20.0 * (x - 0.7f64).powi(2))).exp());
        let (fine, _) = adaptive_interp_mesh(&[f.clone()], 1e-9, 8, unit(), None, InterpOptions::default()).unwrap();
        let (coarse, _) = adaptive_interp_mesh(&[f], 1e-4, 8, unit(), None, InterpOptions::default()).unwrap();
        // every coarse leaf is a union of fine leaves
        for id in coarse.leaves() {
            let r = coarse.node(id).rect;
            let c = fine.leaf_containing(0.5 * (r.x0 + r.x1), 0.5 * (r.y0 + r.y1)).unwrap();
            assert!(fine.node(c).rect.level >= r.level);
        }
        assert!(fine.num_leaves() >= coarse.num_leaves());
    }

    #[test]
    fn non_finite_samples_are_reported() {
        let f: ScalarFn<f64> = Arc::new(|x, _| if x == 0.0 { f64::NAN } else { 1.0 });
        let err = adaptive_interp_mesh(&[f], 1e-6, 8, unit(), None, InterpOptions::default()).unwrap_err();
        assert!(matches!(err, HpsError::Evaluation { x, .. } if x == 0.0));
    }

    #[test]
    fn depth_limit_policies() {
        // a kink that can never be resolved
        let f: ScalarFn<f64> = Arc::new(|x, y| (x - 1.0 / 3.0).abs() + y);
        let opts = InterpOptions {
            max_depth: 3,
            ..Default::default()
        };
        let err = adaptive_interp_mesh(&[f.clone()], 1e-12, 8, unit(), None, opts).unwrap_err();
        assert!(matches!(err, HpsError::DepthExceeded { .. }));
        let opts = InterpOptions {
            max_depth: 3,
            on_depth_limit: DepthPolicy::Stop,
            ..Default::default()
        };
        let (t, stats) = adaptive_interp_mesh(&[f], 1e-12, 8, unit(), None, opts).unwrap();
        assert!(stats.depth_capped > 0);
        assert!(t.leaves().iter().all(|&k| t.node(k).rect.quad_level() <= 3));
    }

    #[test]
    fn export_round_trips() {
        let mut t = MeshTree::uniform(unit(), 8, 1).unwrap();
        t.split_leaf(5).unwrap();
        let recs = parse_leaf_records(&t.export_leaves()).unwrap();
        assert_eq!(recs.len(), t.num_leaves());
        for r in recs {
            let n = t.node(r.id);
            assert_eq!((r.x0, r.x1, r.y0, r.y1), (n.rect.x0, n.rect.x1, n.rect.y0, n.rect.y1));
            assert_eq!(r.level, n.rect.quad_level());
        }
    }
}
