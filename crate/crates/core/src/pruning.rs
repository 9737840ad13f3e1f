//! Alternative-route subgraphs used to restrict the policy computation.
//!
//! All three techniques run on deterministic weight views of the arc
//! distributions and return a node set whose induced subgraph the solver
//! masks to. Every retained node lies on some `s -> t` path, and the full
//! shortest path under the technique's view is always retained.

use std::collections::HashSet;
use std::fmt;

use crate::graph::{
    dijkstra, path_from_backward_tree, path_from_forward_tree, Direction, NodeId, SearchTree,
    StochasticGraph, Topology, WeightView, INF,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PruneError {
    Unreachable { s: NodeId, t: NodeId },
    BadParams(String),
}

impl fmt::Display for PruneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PruneError::Unreachable { s, t } => write!(f, "target {t} unreachable from {s}"),
            PruneError::BadParams(msg) => write!(f, "bad pruning parameters: {msg}"),
        }
    }
}

impl std::error::Error for PruneError {}

/// Node mask over a graph; the arc set is implied (arcs with both endpoints
/// retained). `provenance` records the technique and parameters that built it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneSet {
    nodes: Vec<bool>,
    count: usize,
    pub provenance: String,
}

impl PruneSet {
    pub fn full(node_count: usize) -> Self {
        PruneSet { nodes: vec![true; node_count], count: node_count, provenance: "full".into() }
    }

    pub fn from_flags(nodes: Vec<bool>, provenance: impl Into<String>) -> Self {
        let count = nodes.iter().filter(|&&b| b).count();
        PruneSet { nodes, count, provenance: provenance.into() }
    }

    pub fn contains(&self, u: NodeId) -> bool {
        self.nodes[u as usize]
    }

    pub fn node_count(&self) -> usize {
        self.count
    }

    pub fn flags(&self) -> &[bool] {
        &self.nodes
    }

    pub fn iter_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i as NodeId)
    }

    /// Retained share of the graph in percent.
    pub fn retained_pct(&self) -> f64 {
        100.0 * self.count as f64 / self.nodes.len() as f64
    }

    /// An arc is masked in when both endpoints are retained.
    pub fn arc_in(&self, topo: &Topology, arc: usize) -> bool {
        let (u, v) = topo.arc(arc);
        self.contains(u) && self.contains(v)
    }

    /// Drops nodes that do not lie on any retained `s -> t` path: keeps the
    /// intersection of forward reachability from `s` and backward
    /// reachability from `t` inside the induced subgraph.
    pub fn prune_dead_ends(&mut self, topo: &Topology, s: NodeId, t: NodeId) {
        let fwd = self.reachable(topo, s, Direction::Forward);
        let bwd = self.reachable(topo, t, Direction::Backward);
        for i in 0..self.nodes.len() {
            self.nodes[i] = self.nodes[i] && fwd[i] && bwd[i];
        }
        self.count = self.nodes.iter().filter(|&&b| b).count();
    }

    fn reachable(&self, topo: &Topology, from: NodeId, direction: Direction) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        if !self.contains(from) {
            return seen;
        }
        seen[from as usize] = true;
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            for (_, v) in topo.adjacent(u, direction) {
                if self.contains(v) && !seen[v as usize] {
                    seen[v as usize] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}

/// Via-node feasibility criteria.
#[derive(Debug, Clone)]
pub struct ViaParams {
    /// Concatenated path length at most `(1 + stretch_eps) * dist(s, t)`.
    pub stretch_eps: f64,
    /// Shared length with the shortest path at most `sharing_gamma * dist`.
    pub sharing_gamma: f64,
    /// Weight views to union over; more than one gives the via-mix variant.
    pub views: Vec<WeightView>,
}

impl Default for ViaParams {
    fn default() -> Self {
        ViaParams { stretch_eps: 0.25, sharing_gamma: 0.8, views: vec![WeightView::Mean] }
    }
}

impl ViaParams {
    pub fn mix() -> Self {
        ViaParams {
            views: vec![WeightView::FreeFlow, WeightView::Mean, WeightView::Max],
            ..ViaParams::default()
        }
    }
}

/// Penalty-iteration parameters.
#[derive(Debug, Clone)]
pub struct PenaltyParams {
    pub rounds: u32,
    /// Multiplier for arcs on the found path, > 1, rounded up to keep
    /// integer weights.
    pub penalty_factor: f64,
    /// Also penalize arcs incident to path nodes.
    pub adjoint: bool,
    /// Weaker multiplier for adjoint arcs, applied once per arc per round.
    pub adjoint_factor: f64,
    /// Stop once the found path is longer than `(1 + stop_stretch) * dist`.
    pub stop_stretch: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        PenaltyParams {
            rounds: 10,
            penalty_factor: 1.4,
            adjoint: true,
            adjoint_factor: 1.1,
            stop_stretch: 0.25,
        }
    }
}

/// Next hop of `v` towards the root of a backward tree.
fn backward_next_hop(tree: &SearchTree, v: NodeId) -> Option<NodeId> {
    tree.parent[v as usize]
}

/// The k-turn corridor: recursive union of tree paths to `t` from every
/// node reachable by one more turn off the current corridor.
///
/// All paths are read off a single backward shortest-path tree from `t`, so
/// one Dijkstra run serves the whole recursion.
pub fn corridor(
    g: &StochasticGraph,
    s: NodeId,
    t: NodeId,
    k: u32,
    view: WeightView,
) -> Result<PruneSet, PruneError> {
    let topo = g.topology();
    let back = dijkstra(topo, g.weights(view), t, Direction::Backward);
    if back.dist[s as usize] == INF {
        return Err(PruneError::Unreachable { s, t });
    }
    let n = topo.node_count();
    let mut in_set = vec![false; n];

    // Inserts the tree path v -> t, returning the nodes that were new.
    let add_chain = |in_set: &mut Vec<bool>, v: NodeId| -> Vec<NodeId> {
        let mut added = Vec::new();
        let mut cur = v;
        loop {
            if in_set[cur as usize] {
                break;
            }
            in_set[cur as usize] = true;
            added.push(cur);
            match backward_next_hop(&back, cur) {
                Some(next) => cur = next,
                None => break,
            }
        }
        added
    };

    let mut frontier = add_chain(&mut in_set, s);
    for _ in 0..k {
        let mut next_frontier = Vec::new();
        for &u in &frontier {
            for (_, v) in topo.out_arcs(u) {
                if !in_set[v as usize] && back.dist[v as usize] != INF {
                    next_frontier.extend(add_chain(&mut in_set, v));
                }
            }
        }
        if next_frontier.is_empty() {
            break;
        }
        frontier = next_frontier;
    }

    Ok(PruneSet::from_flags(in_set, format!("corridor:{k}[{}]", view.label())))
}

/// Alternative graph from via nodes: for every candidate settled by both
/// the forward search from `s` and the backward search from `t`, keep the
/// concatenated path when it passes the stretch and sharing criteria. The
/// shortest path itself is always retained. With several views the unions
/// are combined (via-mix).
pub fn via_alternative_graph(
    g: &StochasticGraph,
    s: NodeId,
    t: NodeId,
    params: &ViaParams,
) -> Result<PruneSet, PruneError> {
    if params.stretch_eps < 0.0 {
        return Err(PruneError::BadParams(format!("stretch_eps {} < 0", params.stretch_eps)));
    }
    if !(params.sharing_gamma > 0.0 && params.sharing_gamma <= 1.0) {
        return Err(PruneError::BadParams(format!(
            "sharing_gamma {} outside (0, 1]",
            params.sharing_gamma
        )));
    }
    if params.views.is_empty() {
        return Err(PruneError::BadParams("via needs at least one weight view".into()));
    }
    let topo = g.topology();
    let n = topo.node_count();
    let mut in_set = vec![false; n];

    for &view in &params.views {
        let weights = g.weights(view);
        let fwd = dijkstra(topo, weights, s, Direction::Forward);
        let bwd = dijkstra(topo, weights, t, Direction::Backward);
        if fwd.dist[t as usize] == INF {
            return Err(PruneError::Unreachable { s, t });
        }
        let dist = fwd.dist[t as usize];
        let bound = (1.0 + params.stretch_eps) * dist as f64;

        let sp = path_from_backward_tree(&bwd, s).expect("t reachable");
        let mut sp_arcs = HashSet::new();
        for w in sp.nodes.windows(2) {
            sp_arcs.insert(topo.arc_id(w[0], w[1]).expect("tree edge exists"));
        }
        for &u in &sp.nodes {
            in_set[u as usize] = true;
        }

        for v in 0..n as NodeId {
            let (df, db) = (fwd.dist[v as usize], bwd.dist[v as usize]);
            if df == INF || db == INF {
                continue;
            }
            if df as f64 > bound || db as f64 > bound {
                continue; // outside the pruned search spaces
            }
            if (df + db) as f64 > bound {
                continue; // stretch criterion
            }
            let to_v = path_from_forward_tree(&fwd, s, v).expect("settled");
            let from_v = path_from_backward_tree(&bwd, v).expect("settled");
            let mut overlap = 0u64;
            for path in [&to_v, &from_v] {
                for w in path.nodes.windows(2) {
                    let arc = topo.arc_id(w[0], w[1]).expect("tree edge exists");
                    if sp_arcs.contains(&arc) {
                        overlap += weights[arc] as u64;
                    }
                }
            }
            if overlap as f64 > params.sharing_gamma * dist as f64 {
                continue; // sharing criterion
            }
            for &u in to_v.nodes.iter().chain(&from_v.nodes) {
                in_set[u as usize] = true;
            }
        }
    }

    let label = if params.views.len() > 1 { "via-mix" } else { "via" };
    let mut set = PruneSet::from_flags(in_set, label);
    set.prune_dead_ends(topo, s, t);
    Ok(set)
}

/// Penalty method: repeatedly take the shortest path under working weights,
/// keep it, and inflate the weights of its arcs (and optionally the arcs
/// incident to its nodes). Stops after `rounds` or once the found path's
/// working length exceeds `(1 + stop_stretch) * dist(s, t)`.
pub fn penalty_alternative_graph(
    g: &StochasticGraph,
    s: NodeId,
    t: NodeId,
    params: &PenaltyParams,
    view: WeightView,
) -> Result<PruneSet, PruneError> {
    if params.rounds < 1 {
        return Err(PruneError::BadParams("rounds must be >= 1".into()));
    }
    if params.penalty_factor <= 1.0 {
        return Err(PruneError::BadParams(format!(
            "penalty_factor {} must be > 1",
            params.penalty_factor
        )));
    }
    let topo = g.topology();
    let mut working: Vec<u32> = g.weights(view).to_vec();
    let base_tree = dijkstra(topo, &working, s, Direction::Forward);
    if base_tree.dist[t as usize] == INF {
        return Err(PruneError::Unreachable { s, t });
    }
    let dist = base_tree.dist[t as usize];
    let stop_bound = (1.0 + params.stop_stretch) * dist as f64;

    let n = topo.node_count();
    let mut in_set = vec![false; n];
    let bump = |w: u32, factor: f64| -> u32 { ((w as f64 * factor).ceil() as u64).min(u32::MAX as u64) as u32 };

    for _ in 0..params.rounds {
        let tree = dijkstra(topo, &working, s, Direction::Forward);
        let path = match path_from_forward_tree(&tree, s, t) {
            Some(p) => p,
            None => break,
        };
        if path.length as f64 > stop_bound {
            break;
        }
        for &u in &path.nodes {
            in_set[u as usize] = true;
        }
        let mut path_arcs = HashSet::new();
        for w in path.nodes.windows(2) {
            path_arcs.insert(topo.arc_id(w[0], w[1]).expect("path follows arcs"));
        }
        for &arc in &path_arcs {
            working[arc] = bump(working[arc], params.penalty_factor);
        }
        if params.adjoint {
            let mut adjoint_arcs = HashSet::new();
            for &u in &path.nodes {
                for (arc, _) in topo.out_arcs(u) {
                    if !path_arcs.contains(&arc) {
                        adjoint_arcs.insert(arc);
                    }
                }
                for (arc, _) in topo.in_arcs(u) {
                    if !path_arcs.contains(&arc) {
                        adjoint_arcs.insert(arc);
                    }
                }
            }
            for arc in adjoint_arcs {
                working[arc] = bump(working[arc], params.adjoint_factor);
            }
        }
    }

    Ok(PruneSet::from_flags(in_set, "penalty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DiscretePdf;
    use crate::graph::Topology;

    fn point_graph(n: usize, arcs: &[(NodeId, NodeId, u32)]) -> StochasticGraph {
        let topo = Topology::new(n, arcs.iter().map(|&(u, v, _)| (u, v)).collect()).unwrap();
        let mut pdfs = vec![DiscretePdf::point(1); topo.arc_count()];
        for &(u, v, w) in arcs {
            pdfs[topo.arc_id(u, v).unwrap()] = DiscretePdf::point(w);
        }
        StochasticGraph::new(topo, pdfs)
    }

    fn unit_grid(w: u32, h: u32) -> StochasticGraph {
        let mut arcs = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let u = r * w + c;
                if c + 1 < w {
                    arcs.push((u, u + 1, 1));
                    arcs.push((u + 1, u, 1));
                }
                if r + 1 < h {
                    arcs.push((u, u + w, 1));
                    arcs.push((u + w, u, 1));
                }
            }
        }
        point_graph((w * h) as usize, &arcs)
    }

    #[test]
    fn corridor_zero_is_the_shortest_path() {
        let g = unit_grid(3, 3);
        let set = corridor(&g, 0, 8, 0, WeightView::FreeFlow).unwrap();
        let nodes: Vec<_> = set.iter_nodes().collect();
        assert_eq!(nodes, vec![0, 1, 2, 5, 8]);
    }

    /// Literal recursion oracle: distances to `t` recomputed per node with
    /// independent forward runs, greedy lowest-id next hops, one level of
    /// wrong turns at a time.
    fn corridor_oracle(g: &StochasticGraph, s: NodeId, t: NodeId, k: u32) -> Vec<NodeId> {
        let topo = g.topology();
        let w = g.weights(WeightView::FreeFlow);
        let n = topo.node_count();
        let dist_to_t: Vec<u64> = (0..n as NodeId)
            .map(|v| dijkstra(topo, w, v, Direction::Forward).dist[t as usize])
            .collect();
        let chain = |mut v: NodeId| -> Vec<NodeId> {
            let mut nodes = vec![v];
            while v != t {
                let next = topo
                    .out_arcs(v)
                    .filter(|&(arc, x)| {
                        dist_to_t[x as usize] != INF
                            && dist_to_t[v as usize] == dist_to_t[x as usize] + w[arc] as u64
                    })
                    .map(|(_, x)| x)
                    .min()
                    .expect("reachable");
                nodes.push(next);
                v = next;
            }
            nodes
        };
        let mut set: HashSet<NodeId> = chain(s).into_iter().collect();
        for _ in 0..k {
            let mut next_set = set.clone();
            for &u in &set {
                for (_, v) in topo.out_arcs(u) {
                    if dist_to_t[v as usize] != INF {
                        next_set.extend(chain(v));
                    }
                }
            }
            set = next_set;
        }
        let mut nodes: Vec<_> = set.into_iter().collect();
        nodes.sort_unstable();
        nodes
    }

    #[test]
    fn corridor_one_on_grid_matches_recursion_oracle() {
        let g = unit_grid(3, 3);
        let set = corridor(&g, 0, 8, 1, WeightView::FreeFlow).unwrap();
        let nodes: Vec<_> = set.iter_nodes().collect();
        assert_eq!(nodes, corridor_oracle(&g, 0, 8, 1));
        // One extra band beside the shortest path; the far corner stays out.
        assert_eq!(nodes, vec![0, 1, 2, 3, 4, 5, 7, 8]);
    }

    #[test]
    fn corridors_nest() {
        let g = unit_grid(5, 5);
        let mut prev: Option<PruneSet> = None;
        for k in 0..4 {
            let set = corridor(&g, 0, 24, k, WeightView::FreeFlow).unwrap();
            assert_eq!(
                set.iter_nodes().collect::<Vec<_>>(),
                corridor_oracle(&g, 0, 24, k),
                "oracle mismatch at k={k}"
            );
            if let Some(p) = &prev {
                for u in p.iter_nodes() {
                    assert!(set.contains(u), "corridor {k} lost node {u}");
                }
            }
            prev = Some(set);
        }
    }

    #[test]
    fn corridor_unreachable_is_an_error() {
        let g = point_graph(3, &[(0, 1, 1)]);
        assert!(matches!(
            corridor(&g, 0, 2, 1, WeightView::FreeFlow),
            Err(PruneError::Unreachable { .. })
        ));
    }

    #[test]
    fn via_diamond_retains_both_routes() {
        // Two disjoint equal routes; the off-path route passes both criteria.
        let g = point_graph(4, &[(0, 1, 1), (0, 2, 1), (1, 3, 1), (2, 3, 1)]);
        let params = ViaParams { sharing_gamma: 0.8, ..ViaParams::default() };
        let set = via_alternative_graph(&g, 0, 3, &params).unwrap();
        let nodes: Vec<_> = set.iter_nodes().collect();
        assert_eq!(nodes, vec![0, 1, 2, 3]);
    }

    #[test]
    fn via_zero_stretch_unique_sp_collapses_to_sp() {
        let g = point_graph(4, &[(0, 1, 1), (1, 3, 1), (0, 2, 2), (2, 3, 2)]);
        let params = ViaParams { stretch_eps: 0.0, ..ViaParams::default() };
        let set = via_alternative_graph(&g, 0, 3, &params).unwrap();
        assert_eq!(set.iter_nodes().collect::<Vec<_>>(), vec![0, 1, 3]);
    }

    #[test]
    fn via_always_contains_the_shortest_path() {
        let g = unit_grid(4, 4);
        let set = via_alternative_graph(&g, 0, 15, &ViaParams::default()).unwrap();
        let sp = corridor(&g, 0, 15, 0, WeightView::Mean).unwrap();
        for u in sp.iter_nodes() {
            assert!(set.contains(u));
        }
    }

    #[test]
    fn via_mix_contains_each_single_view_result() {
        // Asymmetric pdfs make the views disagree: give one detour a wide
        // distribution so mean/max route off it while free-flow stays.
        use crate::dist::DiscretePdf;
        let topo =
            Topology::new(4, vec![(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
        let mut pdfs = Vec::new();
        for (u, v) in topo.arcs() {
            if (*u, *v) == (0, 1) {
                // free-flow 1 but heavy tail
                pdfs.push(DiscretePdf::new(1, vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]).unwrap());
            } else {
                pdfs.push(DiscretePdf::point(2));
            }
        }
        let g = StochasticGraph::new(topo, pdfs);
        let mix = via_alternative_graph(&g, 0, 3, &ViaParams::mix()).unwrap();
        for view in [WeightView::FreeFlow, WeightView::Mean, WeightView::Max] {
            let single = via_alternative_graph(
                &g,
                0,
                3,
                &ViaParams { views: vec![view], ..ViaParams::default() },
            )
            .unwrap();
            for u in single.iter_nodes() {
                assert!(mix.contains(u), "via-mix must cover view {:?}", view);
            }
        }
    }

    #[test]
    fn penalty_single_round_is_the_shortest_path() {
        let g = unit_grid(4, 4);
        let params = PenaltyParams { rounds: 1, ..PenaltyParams::default() };
        let set = penalty_alternative_graph(&g, 0, 15, &params, WeightView::Mean).unwrap();
        let sp = corridor(&g, 0, 15, 0, WeightView::Mean).unwrap();
        assert_eq!(
            set.iter_nodes().collect::<Vec<_>>(),
            sp.iter_nodes().collect::<Vec<_>>()
        );
    }

    #[test]
    fn penalty_diamond_hand_trace() {
        // Routes of length 2 (0-1-3) and 3 (0-2-3, arc weights 1 and 2).
        // factor 2, stop_stretch 0.6 on dist 2 gives a stop bound of 3.2:
        // round 1 keeps the short route and doubles it to working length 4,
        // round 2 keeps the long route (working 3) and doubles it,
        // round 3 finds working length 4 > 3.2 and stops.
        let g = point_graph(4, &[(0, 1, 1), (1, 3, 1), (0, 2, 1), (2, 3, 2)]);
        let params = PenaltyParams {
            rounds: 10,
            penalty_factor: 2.0,
            adjoint: false,
            adjoint_factor: 1.1,
            stop_stretch: 0.6,
        };
        let set = penalty_alternative_graph(&g, 0, 3, &params, WeightView::FreeFlow).unwrap();
        assert_eq!(set.iter_nodes().collect::<Vec<_>>(), vec![0, 1, 2, 3]);

        // With a bound below the long route only the shortest path survives.
        let tight = PenaltyParams { stop_stretch: 0.4, ..params };
        let set = penalty_alternative_graph(&g, 0, 3, &tight, WeightView::FreeFlow).unwrap();
        assert_eq!(set.iter_nodes().collect::<Vec<_>>(), vec![0, 1, 3]);
    }

    #[test]
    fn penalty_union_contains_sp_and_is_deterministic() {
        let g = unit_grid(5, 5);
        let a = penalty_alternative_graph(&g, 0, 24, &PenaltyParams::default(), WeightView::Mean)
            .unwrap();
        let b = penalty_alternative_graph(&g, 0, 24, &PenaltyParams::default(), WeightView::Mean)
            .unwrap();
        assert_eq!(a, b);
        let sp = corridor(&g, 0, 24, 0, WeightView::Mean).unwrap();
        for u in sp.iter_nodes() {
            assert!(a.contains(u));
        }
    }

    #[test]
    fn dead_end_pruning_keeps_retained_paths() {
        // A dangling spur (node 4) must be dropped, the through nodes kept.
        let g = point_graph(5, &[(0, 1, 1), (1, 2, 1), (1, 4, 1), (0, 3, 1), (3, 2, 1)]);
        let mut set = PruneSet::from_flags(vec![true; 5], "test");
        set.prune_dead_ends(g.topology(), 0, 2);
        assert_eq!(set.iter_nodes().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(set.contains(0) && set.contains(2));
    }
}
