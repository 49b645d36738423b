//! Joint 2^D-tree (quadtree / octree) over several labelled point sets.
//!
//! Every node keeps mass and mass-weighted position sums per set label, so a
//! query can hide one set ("mass shadowing") without rebuilding the tree.
//! For each hidden label we also lay the nodes out in depth-first order with
//! the shadowed aggregate inlined, so a query is a forward scan with skips.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Point, PointCloud};

pub const DEFAULT_DEPTH_CAP: usize = 20;

const BOX_MARGIN: f64 = 1e-6;
const NO_CHILD: u32 = u32::MAX;

/// Aggregated mass located at its centre of mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster<const D: usize> {
    pub position: Point<D>,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy)]
struct Node<const D: usize> {
    center: Point<D>,
    half_width: f64,
    depth: u8,
    child_count: u8,
    first_child: u32,
    // range into `order`
    start: u32,
    len: u32,
}

impl<const D: usize> Node<D> {
    #[inline]
    fn is_leaf(&self) -> bool {
        self.child_count == 0
    }
}

/// A node as seen with one label hidden, stored in depth-first order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WalkNode<const D: usize> {
    pub(crate) com: Point<D>,
    pub(crate) mass: f64,
    side_sq: f64,
    // depth-first position just past this node's subtree
    skip: u32,
    id: u32,
}

/// Calls `accept(position)` for every accepted node of `walk`, in depth-first
/// order.
#[inline]
pub(crate) fn scan<const D: usize>(walk: &[WalkNode<D>], query: &Point<D>, theta: f64, mut accept: impl FnMut(u32)) {
    debug_assert!(theta > 0.0);
    let theta_sq = theta * theta;
    let mut pos = 0;
    while pos < walk.len() {
        let w = &walk[pos];
        if w.mass <= 0.0 {
            pos = w.skip as usize;
            continue;
        }
        let leaf = w.skip as usize == pos + 1;
        if leaf || w.side_sq * theta_sq < (query - w.com).norm_squared() {
            accept(pos as u32);
            pos = w.skip as usize;
        } else {
            pos += 1;
        }
    }
}

/// Sizes of the nested query groups used by [`chunk_clusters`], coarsest
/// first. A chunk holds at most `QUERY_LEVELS[0]` queries.
pub(crate) const QUERY_LEVELS: [usize; 5] = [256, 64, 16, 4, 1];

/// Number of lists per chunk: one per group of every level.
pub(crate) const LISTS_PER_CHUNK: usize = 1 + 4 + 16 + 64 + 256;

const LEVEL_OFFSET: [usize; 5] = [0, 1, 5, 21, 85];

// Relative margin that keeps box-level decisions clear of rounding, so they
// always agree with the per-query test.
const DECISION_MARGIN: f64 = 1e-9;

/// Index into [`ChunkClusters::ranges`] of the level-`level` list that covers
/// query `j` of a chunk.
#[inline]
pub(crate) fn list_index(level: usize, j: usize) -> usize {
    LEVEL_OFFSET[level] + j / QUERY_LEVELS[level]
}

/// Accepted nodes of a chunk of queries, split over the nested groups of
/// [`QUERY_LEVELS`]: the clusters of query `j` are the union of the lists
/// `list_index(level, j)` over all levels.
#[derive(Debug, Default, Clone)]
pub(crate) struct ChunkClusters {
    pub(crate) entries: Vec<u32>,
    pub(crate) ranges: Vec<(usize, usize)>,
    // candidate buffers, one per level, kept between calls
    pending: Vec<Vec<u32>>,
}

struct GroupBox<const D: usize> {
    lo: Point<D>,
    hi: Point<D>,
    single: bool,
}

/// Fills `out` with the clusters of every query, identical per query to
/// [`scan`]. Nodes are decided once for a whole group when its bounding box
/// allows it and handed down to the subgroups otherwise, so far-field work is
/// shared by nearby queries. Queries should be spatially coherent.
pub(crate) fn chunk_clusters<const D: usize>(
    walk: &[WalkNode<D>],
    queries: &[&Point<D>],
    theta: f64,
    out: &mut ChunkClusters,
) {
    assert!(queries.len() <= QUERY_LEVELS[0]);
    out.entries.clear();
    out.ranges.clear();
    out.ranges.resize(LISTS_PER_CHUNK, (0, 0));
    out.pending.resize_with(QUERY_LEVELS.len() + 1, Vec::new);
    if queries.is_empty() || walk.is_empty() {
        return;
    }
    let mut pending = std::mem::take(&mut out.pending);
    pending[0].clear();
    pending[0].push(0);
    descend(walk, queries, theta * theta, 0, 0, &mut pending, out);
    out.pending = pending;
}

fn descend<const D: usize>(
    walk: &[WalkNode<D>],
    queries: &[&Point<D>],
    theta_sq: f64,
    level: usize,
    start: usize,
    pending: &mut [Vec<u32>],
    out: &mut ChunkClusters,
) {
    let size = QUERY_LEVELS[level];
    let group = &queries[start..(start + size).min(queries.len())];
    let mut lo = *group[0];
    let mut hi = *group[0];
    for q in &group[1..] {
        lo = lo.inf(q);
        hi = hi.sup(q);
    }
    let bx = GroupBox {
        lo,
        hi,
        single: group.len() == 1,
    };
    let (candidates, rest) = pending.split_at_mut(level + 1);
    let candidates = &candidates[level];
    let passed = &mut rest[0];
    passed.clear();
    let first = out.entries.len();
    for &c in candidates.iter() {
        decide(walk, &bx, theta_sq, c as usize, &mut out.entries, passed);
    }
    out.ranges[LEVEL_OFFSET[level] + start / size] = (first, out.entries.len());
    if passed.is_empty() || level + 1 == QUERY_LEVELS.len() {
        debug_assert!(passed.is_empty());
        return;
    }
    // subgroups read pending[level + 1] and only write deeper buffers
    let sub = QUERY_LEVELS[level + 1];
    for s in (start..start + group.len()).step_by(sub) {
        descend(walk, queries, theta_sq, level + 1, s, pending, out);
    }
}

/// Decides node `pos` and, if opened for the whole group, its descendants.
/// Accepted nodes go to `accepted`; undecided ones to `passed`.
fn decide<const D: usize>(
    walk: &[WalkNode<D>],
    bx: &GroupBox<D>,
    theta_sq: f64,
    pos: usize,
    accepted: &mut Vec<u32>,
    passed: &mut Vec<u32>,
) {
    let w = &walk[pos];
    let skip = w.skip as usize;
    if w.mass <= 0.0 {
        return;
    }
    if skip == pos + 1 {
        accepted.push(pos as u32);
        return;
    }
    let limit = w.side_sq * theta_sq;
    let open = if bx.single {
        // the exact per-query test of `scan`
        if limit < (bx.lo - w.com).norm_squared() {
            accepted.push(pos as u32);
            return;
        }
        true
    } else {
        let mut near = 0.0;
        let mut far = 0.0;
        for k in 0..D {
            let below = bx.lo[k] - w.com[k];
            let above = w.com[k] - bx.hi[k];
            let gap = below.max(above).max(0.0);
            let reach = below.abs().max(above.abs());
            near += gap * gap;
            far += reach * reach;
        }
        if limit * (1.0 + DECISION_MARGIN) < near {
            accepted.push(pos as u32);
            return;
        }
        limit >= far * (1.0 + DECISION_MARGIN)
    };
    if open {
        let mut child = pos + 1;
        while child < skip {
            decide(walk, bx, theta_sq, child, accepted, passed);
            child = walk[child].skip as usize;
        }
    } else {
        passed.push(pos as u32);
    }
}

/// Barnes-Hut tree over the union of `L` labelled point sets.
#[derive(Debug, Clone)]
pub struct BhTree<const D: usize> {
    num_sets: usize,
    depth_cap: usize,
    nodes: Vec<Node<D>>,
    set_mass: Vec<f64>,
    set_moment: Vec<Point<D>>,
    // (num_sets + 1) depth-first copies of the nodes: copy s hides set s, the
    // last one hides nothing
    walk: Vec<WalkNode<D>>,
    // centre of mass and mass of every `walk` entry, packed for evaluation
    packed: Vec<[f64; 4]>,
    order: Vec<u32>,
    positions: Vec<Point<D>>,
    masses: Vec<f64>,
    labels: Vec<u32>,
    local_index: Vec<u32>,
}

/// Read-only view of one tree node.
#[derive(Clone, Copy)]
pub struct NodeRef<'a, const D: usize> {
    tree: &'a BhTree<D>,
    id: usize,
}

impl<'a, const D: usize> NodeRef<'a, D> {
    pub fn id(&self) -> usize {
        self.id
    }

    fn node(&self) -> &'a Node<D> {
        &self.tree.nodes[self.id]
    }

    pub fn depth(&self) -> usize {
        self.node().depth as usize
    }

    pub fn center(&self) -> Point<D> {
        self.node().center
    }

    pub fn half_width(&self) -> f64 {
        self.node().half_width
    }

    pub fn is_leaf(&self) -> bool {
        self.node().is_leaf()
    }

    pub fn children(&self) -> impl Iterator<Item = NodeRef<'a, D>> + 'a {
        let n = self.node();
        let tree = self.tree;
        let first = n.first_child as usize;
        (0..n.child_count as usize).map(move |k| NodeRef {
            tree,
            id: first + k,
        })
    }

    pub fn set_mass(&self, set: usize) -> f64 {
        self.tree.set_mass[self.id * self.tree.num_sets + set]
    }

    /// Centre of mass of one set inside this node, if it has mass here.
    pub fn set_center_of_mass(&self, set: usize) -> Option<Point<D>> {
        let m = self.set_mass(set);
        (m > 0.0).then(|| self.tree.set_moment[self.id * self.tree.num_sets + set] / m)
    }

    /// `(set, index within set)` for every point stored below this node.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + 'a {
        let n = self.node();
        let tree = self.tree;
        tree.order[n.start as usize..(n.start + n.len) as usize]
            .iter()
            .map(move |&g| {
                (
                    tree.labels[g as usize] as usize,
                    tree.local_index[g as usize] as usize,
                )
            })
    }
}

impl<const D: usize> BhTree<D> {
    /// Build the tree over `sets`; `sets[l]` holds the world-frame points and
    /// masses of set label `l`.
    pub fn build(sets: &[(&[Point<D>], &[f64])], depth_cap: usize) -> Result<Self> {
        crate::geometry::assert_supported::<D>();
        if depth_cap == 0 || depth_cap > u8::MAX as usize {
            return Err(Error::InvalidParameter {
                name: "depth_cap",
                reason: format!("must be in 1..=255, got {depth_cap}"),
            });
        }
        let total: usize = sets.iter().map(|(p, _)| p.len()).sum();
        if total == 0 {
            return Err(Error::EmptyInput);
        }
        let mut positions = Vec::with_capacity(total);
        let mut masses = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(total);
        let mut local_index = Vec::with_capacity(total);
        for (label, (pts, ms)) in sets.iter().enumerate() {
            if pts.len() != ms.len() {
                return Err(Error::InvalidCloud(format!(
                    "set {label}: {} points but {} masses",
                    pts.len(),
                    ms.len()
                )));
            }
            positions.extend_from_slice(pts);
            masses.extend_from_slice(ms);
            labels.extend(std::iter::repeat_n(label as u32, pts.len()));
            local_index.extend(0..pts.len() as u32);
        }

        let (lo, hi) = bounding_box(&positions);
        let center = (lo + hi) * 0.5;
        let extent = (hi - lo).max() * 0.5;
        let scale = center.amax().max(1.0);
        let half_width = (extent * (1.0 + BOX_MARGIN)).max(1e-12 * scale);

        let mut tree = Self {
            num_sets: sets.len(),
            depth_cap,
            nodes: Vec::with_capacity(2 * total),
            set_mass: Vec::new(),
            set_moment: Vec::new(),
            walk: Vec::new(),
            packed: Vec::new(),
            order: (0..total as u32).collect(),
            positions,
            masses,
            labels,
            local_index,
        };
        tree.nodes.push(Node {
            center,
            half_width,
            depth: 0,
            child_count: 0,
            first_child: NO_CHILD,
            start: 0,
            len: total as u32,
        });
        tree.subdivide(0);
        tree.accumulate();
        Ok(tree)
    }

    /// Tree over clouds given in their current world pose.
    pub fn from_clouds(clouds: &[PointCloud<D>], depth_cap: usize) -> Result<Self> {
        let sets: Vec<_> = clouds.iter().map(|c| (c.points(), c.masses())).collect();
        Self::build(&sets, depth_cap)
    }

    fn subdivide(&mut self, root: usize) {
        // points travel with their index so each pass reads memory in order
        let mut items: Vec<(Point<D>, u32)> = self.order.iter().map(|&g| (self.positions[g as usize], g)).collect();
        let mut scratch = items.clone();
        let mut stack = vec![root];
        let fan = 1usize << D;
        while let Some(id) = stack.pop() {
            let node = self.nodes[id];
            if node.len <= 1 || node.depth as usize >= self.depth_cap {
                continue;
            }
            let range = node.start as usize..(node.start + node.len) as usize;
            let mut counts = [0u32; 8];
            for (p, _) in &items[range.clone()] {
                counts[child_code(p, &node.center)] += 1;
            }
            // counting sort of the node's range by child code
            let mut offsets = [0u32; 8];
            for k in 1..fan {
                offsets[k] = offsets[k - 1] + counts[k - 1];
            }
            let mut cursor = offsets;
            let base = node.start as usize;
            for item in &items[range.clone()] {
                let k = child_code(&item.0, &node.center);
                scratch[base + cursor[k] as usize] = *item;
                cursor[k] += 1;
            }
            items[range.clone()].copy_from_slice(&scratch[range]);

            let first_child = self.nodes.len() as u32;
            let quarter = node.half_width * 0.5;
            let mut child_count = 0u8;
            for k in 0..fan {
                if counts[k] == 0 {
                    continue;
                }
                let center = Point::<D>::from_fn(|axis, _| {
                    if (k >> axis) & 1 == 1 {
                        node.center[axis] + quarter
                    } else {
                        node.center[axis] - quarter
                    }
                });
                self.nodes.push(Node {
                    center,
                    half_width: quarter,
                    depth: node.depth + 1,
                    child_count: 0,
                    first_child: NO_CHILD,
                    start: node.start + offsets[k],
                    len: counts[k],
                });
                child_count += 1;
            }
            let n = &mut self.nodes[id];
            n.first_child = first_child;
            n.child_count = child_count;
            for c in 0..child_count as usize {
                stack.push(first_child as usize + c);
            }
        }
        for (slot, (_, g)) in self.order.iter_mut().zip(&items) {
            *slot = *g;
        }
    }

    fn accumulate(&mut self) {
        let l = self.num_sets;
        let n = self.nodes.len();
        self.set_mass = vec![0.0; n * l];
        self.set_moment = vec![Point::<D>::zeros(); n * l];
        // children always have larger ids than their parent
        for id in (0..n).rev() {
            let node = self.nodes[id];
            if node.is_leaf() {
                for &g in &self.order[node.start as usize..(node.start + node.len) as usize] {
                    let g = g as usize;
                    let slot = id * l + self.labels[g] as usize;
                    self.set_mass[slot] += self.masses[g];
                    self.set_moment[slot] += self.positions[g] * self.masses[g];
                }
            } else {
                for c in node.first_child as usize..(node.first_child + node.child_count as u32) as usize {
                    for s in 0..l {
                        self.set_mass[id * l + s] += self.set_mass[c * l + s];
                        let m = self.set_moment[c * l + s];
                        self.set_moment[id * l + s] += m;
                    }
                }
            }
        }
        let preorder = self.preorder();
        let mut pos_of = vec![0u32; n];
        for (pos, &id) in preorder.iter().enumerate() {
            pos_of[id as usize] = pos as u32;
        }
        // a subtree ends where its last child's subtree ends
        let mut skip = vec![0u32; n];
        for (pos, &id) in preorder.iter().enumerate().rev() {
            let node = self.nodes[id as usize];
            skip[pos] = if node.is_leaf() {
                pos as u32 + 1
            } else {
                let last = node.first_child + node.child_count as u32 - 1;
                skip[pos_of[last as usize] as usize]
            };
        }
        self.walk = Vec::with_capacity(n * (l + 1));
        for excluded in 0..=l {
            for (pos, &id) in preorder.iter().enumerate() {
                let id = id as usize;
                let mut mass = 0.0;
                let mut moment = Point::<D>::zeros();
                for s in (0..l).filter(|&s| s != excluded) {
                    mass += self.set_mass[id * l + s];
                    moment += self.set_moment[id * l + s];
                }
                let side = 2.0 * self.nodes[id].half_width;
                self.walk.push(WalkNode {
                    com: if mass > 0.0 { moment / mass } else { moment },
                    mass,
                    side_sq: side * side,
                    skip: skip[pos],
                    id: id as u32,
                });
            }
        }
        self.packed = self
            .walk
            .iter()
            .map(|w| {
                let mut v = [0.0; 4];
                v[..D].copy_from_slice(w.com.as_slice());
                v[3] = w.mass;
                v
            })
            .collect();
    }

    /// Local indices of set `label` in leaf order, which keeps nearby points
    /// together.
    pub(crate) fn spatial_order(&self, label: usize) -> Vec<u32> {
        self.order
            .iter()
            .filter(|&&g| self.labels[g as usize] as usize == label)
            .map(|&g| self.local_index[g as usize])
            .collect()
    }

    /// `[x, y, (z,) mass]` of the depth-first node copies with `exclude` hidden,
    /// aligned with [`Self::walk_for`].
    pub(crate) fn packed_for(&self, exclude: Option<usize>) -> &[[f64; 4]] {
        let e = exclude.unwrap_or(self.num_sets);
        let n = self.nodes.len();
        &self.packed[e * n..(e + 1) * n]
    }

    /// Node ids in depth-first preorder, children in id order.
    fn preorder(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            out.push(id);
            let node = self.nodes[id as usize];
            for c in (0..node.child_count as u32).rev() {
                stack.push(node.first_child + c);
            }
        }
        out
    }

    pub fn num_sets(&self) -> usize {
        self.num_sets
    }

    pub fn num_points(&self) -> usize {
        self.positions.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth as usize).max().unwrap_or(0)
    }

    pub fn root(&self) -> NodeRef<'_, D> {
        NodeRef { tree: self, id: 0 }
    }

    pub fn node(&self, id: usize) -> NodeRef<'_, D> {
        assert!(id < self.nodes.len());
        NodeRef { tree: self, id }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef<'_, D>> {
        (0..self.nodes.len()).map(move |id| NodeRef { tree: self, id })
    }

    /// Total mass of all sets except `exclude`.
    pub fn visible_mass(&self, exclude: Option<usize>) -> f64 {
        self.walk_for(exclude)[0].mass
    }

    /// Range of walk node `pos` in leaf order, if it is a leaf. With a single
    /// set this indexes [`Self::spatial_order`].
    pub(crate) fn walk_leaf_range(&self, exclude: Option<usize>, pos: u32) -> Option<std::ops::Range<usize>> {
        let node = &self.nodes[self.walk_for(exclude)[pos as usize].id as usize];
        node.is_leaf()
            .then(|| node.start as usize..(node.start + node.len) as usize)
    }

    /// Depth-first node copies with `exclude` hidden.
    #[inline]
    pub(crate) fn walk_for(&self, exclude: Option<usize>) -> &[WalkNode<D>] {
        let e = match exclude {
            Some(s) => {
                debug_assert!(s < self.num_sets);
                s
            }
            None => self.num_sets,
        };
        let n = self.nodes.len();
        &self.walk[e * n..(e + 1) * n]
    }

    /// Depth-first traversal with the opening criterion `side / mu < 1 / theta`,
    /// where `mu` is the distance from `query` to the node's centre of mass with
    /// set `exclude` removed. Calls `visit(node_id, cluster)` for every accepted
    /// node with non-zero visible mass; leaves are always accepted.
    #[inline]
    pub fn for_each_cluster<F>(&self, query: &Point<D>, exclude: Option<usize>, theta: f64, mut visit: F)
    where
        F: FnMut(usize, Cluster<D>),
    {
        let walk = self.walk_for(exclude);
        scan(walk, query, theta, |pos| {
            let w = &walk[pos as usize];
            visit(
                w.id as usize,
                Cluster {
                    position: w.com,
                    mass: w.mass,
                },
            )
        });
    }

    pub fn fetch_clusters(&self, query: &Point<D>, exclude: Option<usize>, theta: f64) -> Vec<Cluster<D>> {
        let mut out = Vec::new();
        self.for_each_cluster(query, exclude, theta, |_, c| out.push(c));
        out
    }

    /// Points stored in the accepted leaves of a query, as `(set, index)` pairs.
    pub fn fetch_leaf_points(&self, query: &Point<D>, exclude: Option<usize>, theta: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.for_each_cluster(query, exclude, theta, |id, _| {
            let node = self.node(id);
            if node.is_leaf() {
                out.extend(
                    node.points()
                        .filter(|&(s, _)| Some(s) != exclude),
                );
            }
        });
        out
    }

    /// Line-oriented dump: one `node` line per node in id order.
    ///
    /// `node <id> depth <d> leaf <0|1> half <h> center <c..> mass <m_0 .. m_{L-1}>`
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "bhtree dim {} sets {} nodes {} points {}",
            D,
            self.num_sets,
            self.nodes.len(),
            self.positions.len()
        )?;
        for node in self.nodes() {
            write!(
                out,
                "node {} depth {} leaf {} half {:e} center",
                node.id(),
                node.depth(),
                node.is_leaf() as u8,
                node.half_width()
            )?;
            for c in node.center().iter() {
                write!(out, " {c:e}")?;
            }
            write!(out, " mass")?;
            for s in 0..self.num_sets {
                write!(out, " {:e}", node.set_mass(s))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[inline]
fn child_code<const D: usize>(p: &Point<D>, center: &Point<D>) -> usize {
    // ties go to the lower child
    let mut code = 0;
    for axis in 0..D {
        if p[axis] > center[axis] {
            code |= 1 << axis;
        }
    }
    code
}
