//! Directed graph storage and deterministic shortest-path machinery.
//!
//! Weights are integers in time-step units. All tie-breaking prefers the
//! lower node id, so parent arrays, extracted paths and everything derived
//! from them (corridors, penalty rounds) are reproducible.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use crate::dist::{scalar_views, DiscretePdf};

pub type NodeId = u32;

/// Distance of an unreachable node.
pub const INF: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    SelfLoop { node: NodeId },
    ParallelArc { from: NodeId, to: NodeId },
    NodeOutOfRange { node: NodeId, nodes: usize },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::SelfLoop { node } => write!(f, "self-loop at node {node}"),
            GraphError::ParallelArc { from, to } => write!(f, "parallel arc {from} -> {to}"),
            GraphError::NodeOutOfRange { node, nodes } => {
                write!(f, "node {node} out of range (graph has {nodes} nodes)")
            }
        }
    }
}

impl std::error::Error for GraphError {}

/// Which derived scalar of an arc distribution a deterministic search uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightView {
    FreeFlow,
    Mean,
    Max,
}

impl WeightView {
    pub fn label(&self) -> &'static str {
        match self {
            WeightView::FreeFlow => "freeflow",
            WeightView::Mean => "mean",
            WeightView::Max => "max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Immutable arc-list topology with CSR adjacency in both directions.
/// Arcs are sorted by `(from, to)`; self-loops and parallel arcs are
/// rejected at construction.
#[derive(Debug, Clone)]
pub struct Topology {
    node_count: usize,
    arcs: Vec<(NodeId, NodeId)>,
    out_first: Vec<u32>,
    out_arcs: Vec<u32>,
    in_first: Vec<u32>,
    in_arcs: Vec<u32>,
}

impl Topology {
    pub fn new(node_count: usize, mut arcs: Vec<(NodeId, NodeId)>) -> Result<Self, GraphError> {
        for &(u, v) in &arcs {
            if u as usize >= node_count {
                return Err(GraphError::NodeOutOfRange { node: u, nodes: node_count });
            }
            if v as usize >= node_count {
                return Err(GraphError::NodeOutOfRange { node: v, nodes: node_count });
            }
            if u == v {
                return Err(GraphError::SelfLoop { node: u });
            }
        }
        arcs.sort_unstable();
        for w in arcs.windows(2) {
            if w[0] == w[1] {
                return Err(GraphError::ParallelArc { from: w[0].0, to: w[0].1 });
            }
        }

        let mut out_first = vec![0u32; node_count + 1];
        for &(u, _) in &arcs {
            out_first[u as usize + 1] += 1;
        }
        for i in 0..node_count {
            out_first[i + 1] += out_first[i];
        }
        let out_arcs = (0..arcs.len() as u32).collect();

        let mut in_first = vec![0u32; node_count + 1];
        for &(_, v) in &arcs {
            in_first[v as usize + 1] += 1;
        }
        for i in 0..node_count {
            in_first[i + 1] += in_first[i];
        }
        let mut cursor = in_first.clone();
        let mut in_arcs = vec![0u32; arcs.len()];
        for (id, &(_, v)) in arcs.iter().enumerate() {
            in_arcs[cursor[v as usize] as usize] = id as u32;
            cursor[v as usize] += 1;
        }

        Ok(Topology { node_count, arcs, out_first, out_arcs, in_first, in_arcs })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn arc(&self, id: usize) -> (NodeId, NodeId) {
        self.arcs[id]
    }

    pub fn arcs(&self) -> &[(NodeId, NodeId)] {
        &self.arcs
    }

    pub fn arc_id(&self, from: NodeId, to: NodeId) -> Option<usize> {
        self.arcs.binary_search(&(from, to)).ok()
    }

    /// Out-arcs of `u` as `(arc id, head)`, heads in ascending order.
    pub fn out_arcs(&self, u: NodeId) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        let lo = self.out_first[u as usize] as usize;
        let hi = self.out_first[u as usize + 1] as usize;
        self.out_arcs[lo..hi].iter().map(move |&id| (id as usize, self.arcs[id as usize].1))
    }

    /// In-arcs of `v` as `(arc id, tail)`.
    pub fn in_arcs(&self, v: NodeId) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        let lo = self.in_first[v as usize] as usize;
        let hi = self.in_first[v as usize + 1] as usize;
        self.in_arcs[lo..hi].iter().map(move |&id| (id as usize, self.arcs[id as usize].0))
    }

    /// Arcs incident to `u` in the search direction: `(arc id, neighbour)`.
    pub fn adjacent(
        &self,
        u: NodeId,
        direction: Direction,
    ) -> Box<dyn Iterator<Item = (usize, NodeId)> + '_> {
        match direction {
            Direction::Forward => Box::new(self.out_arcs(u)),
            Direction::Backward => Box::new(self.in_arcs(u)),
        }
    }
}

/// A concrete path with its length under the weight view it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub length: u64,
}

/// Distances and one deterministic shortest-path tree.
///
/// `parent[v]` is the neighbour preceding `v` in search direction: the actual
/// predecessor for forward runs, the next hop towards the source for
/// backward runs. Among all shortest predecessors the lowest node id wins.
#[derive(Debug, Clone)]
pub struct SearchTree {
    pub dist: Vec<u64>,
    pub parent: Vec<Option<NodeId>>,
}

impl SearchTree {
    /// Walks the parent chain from `v` back to the search source.
    pub fn chain(&self, v: NodeId) -> Option<Vec<NodeId>> {
        if self.dist[v as usize] == INF {
            return None;
        }
        let mut nodes = vec![v];
        let mut cur = v;
        while let Some(p) = self.parent[cur as usize] {
            nodes.push(p);
            cur = p;
        }
        Some(nodes)
    }
}

/// Dijkstra from `source` over `weights` (indexed by arc id, all >= 1).
/// Heap ties pop the lower node id first; on equal distance the lower
/// parent id wins.
pub fn dijkstra(
    topo: &Topology,
    weights: &[u32],
    source: NodeId,
    direction: Direction,
) -> SearchTree {
    dijkstra_masked(topo, weights, source, direction, None)
}

/// Dijkstra restricted to nodes where `mask` is true (`None` = all nodes).
pub fn dijkstra_masked(
    topo: &Topology,
    weights: &[u32],
    source: NodeId,
    direction: Direction,
    mask: Option<&[bool]>,
) -> SearchTree {
    run_dijkstra(topo, weights, source, direction, mask, None)
}

fn run_dijkstra(
    topo: &Topology,
    weights: &[u32],
    source: NodeId,
    direction: Direction,
    mask: Option<&[bool]>,
    stop_at: Option<NodeId>,
) -> SearchTree {
    debug_assert_eq!(weights.len(), topo.arc_count());
    let n = topo.node_count();
    let mut dist = vec![INF; n];
    let mut parent = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(u64, NodeId)>> = BinaryHeap::new();
    let in_mask = |u: NodeId| mask.is_none_or(|m| m[u as usize]);
    if !in_mask(source) {
        return SearchTree { dist, parent };
    }
    dist[source as usize] = 0;
    heap.push(Reverse((0, source)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if settled[u as usize] {
            continue;
        }
        settled[u as usize] = true;
        // Parent entries of a node are final once it settles, so stopping
        // here keeps the tree up to `stop_at` intact.
        if stop_at == Some(u) {
            break;
        }
        for (arc, v) in topo.adjacent(u, direction) {
            if !in_mask(v) {
                continue;
            }
            let nd = d + weights[arc] as u64;
            let vi = v as usize;
            if nd < dist[vi] {
                dist[vi] = nd;
                parent[vi] = Some(u);
                heap.push(Reverse((nd, v)));
            } else if nd == dist[vi] && Some(u) < parent[vi] {
                parent[vi] = Some(u);
            }
        }
    }
    SearchTree { dist, parent }
}

/// Deterministic shortest path from `s` to `t`, `None` when disconnected.
/// Terminates the search as soon as `t` settles.
pub fn shortest_path(topo: &Topology, weights: &[u32], s: NodeId, t: NodeId) -> Option<Path> {
    let tree = run_dijkstra(topo, weights, s, Direction::Forward, None, Some(t));
    path_from_forward_tree(&tree, s, t)
}

/// Reads the `s -> t` path off a forward tree rooted at `s`.
pub fn path_from_forward_tree(tree: &SearchTree, s: NodeId, t: NodeId) -> Option<Path> {
    let mut nodes = tree.chain(t)?;
    nodes.reverse();
    debug_assert_eq!(nodes.first(), Some(&s));
    Some(Path { nodes, length: tree.dist[t as usize] })
}

/// Reads the `v -> t` path off a backward tree rooted at `t`.
pub fn path_from_backward_tree(tree: &SearchTree, v: NodeId) -> Option<Path> {
    let nodes = tree.chain(v)?;
    Some(Path { length: tree.dist[v as usize], nodes })
}

/// Iteration at which `v` is settled by a run from `s` (rank 0 = `s` itself).
/// `None` when `v` is unreachable.
pub fn dijkstra_rank(topo: &Topology, weights: &[u32], s: NodeId, v: NodeId) -> Option<u64> {
    let order = settle_order(topo, weights, s);
    order
        .iter()
        .position(|&u| u == v)
        .map(|i| i as u64)
}

/// Nodes in the order a forward run from `s` settles them.
pub fn settle_order(topo: &Topology, weights: &[u32], s: NodeId) -> Vec<NodeId> {
    let n = topo.node_count();
    let mut dist = vec![INF; n];
    let mut settled = vec![false; n];
    let mut order = Vec::new();
    let mut heap: BinaryHeap<Reverse<(u64, NodeId)>> = BinaryHeap::new();
    dist[s as usize] = 0;
    heap.push(Reverse((0, s)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if settled[u as usize] {
            continue;
        }
        settled[u as usize] = true;
        order.push(u);
        for (arc, v) in topo.out_arcs(u) {
            let nd = d + weights[arc] as u64;
            if nd < dist[v as usize] {
                dist[v as usize] = nd;
                heap.push(Reverse((nd, v)));
            }
        }
    }
    order
}

/// Topology plus one discretized travel-time distribution per arc and the
/// derived scalar weight views. Immutable after construction; queries may
/// share it across threads.
#[derive(Debug, Clone)]
pub struct StochasticGraph {
    topo: Topology,
    pdfs: Vec<DiscretePdf>,
    free_flow: Vec<u32>,
    mean: Vec<u32>,
    max: Vec<u32>,
}

impl StochasticGraph {
    /// `pdfs[i]` must describe arc `i` of `topo`.
    pub fn new(topo: Topology, pdfs: Vec<DiscretePdf>) -> Self {
        assert_eq!(topo.arc_count(), pdfs.len(), "one distribution per arc");
        let mut free_flow = Vec::with_capacity(pdfs.len());
        let mut mean = Vec::with_capacity(pdfs.len());
        let mut max = Vec::with_capacity(pdfs.len());
        for pdf in &pdfs {
            let v = scalar_views(pdf);
            free_flow.push(v.min);
            mean.push(v.mean.round() as u32);
            max.push(v.max);
        }
        StochasticGraph { topo, pdfs, free_flow, mean, max }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn node_count(&self) -> usize {
        self.topo.node_count()
    }

    pub fn arc_count(&self) -> usize {
        self.topo.arc_count()
    }

    pub fn pdf(&self, arc: usize) -> &DiscretePdf {
        &self.pdfs[arc]
    }

    pub fn weights(&self, view: WeightView) -> &[u32] {
        match view {
            WeightView::FreeFlow => &self.free_flow,
            WeightView::Mean => &self.mean,
            WeightView::Max => &self.max,
        }
    }

    /// Free-flow distance between two nodes, `INF` when disconnected.
    pub fn free_flow_dist(&self, s: NodeId, t: NodeId) -> u64 {
        let tree = dijkstra(&self.topo, &self.free_flow, s, Direction::Forward);
        tree.dist[t as usize]
    }
}
