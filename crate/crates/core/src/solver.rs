//! Optimal on-time-arrival policies.
//!
//! A policy maximizes, per node and remaining budget, the probability of
//! reaching the target in time. Values follow the recursion
//!
//! ```text
//! prob_u(tau) = max over arcs (u,v) of  sum_w c_uv(w) * prob_v(tau - w)
//! prob_t(tau) = 1
//! ```
//!
//! The label-setting solver sweeps the budget in blocks of the graph-wide
//! minimum arc offset: every value below the current block is final when the
//! block is computed, so each (arc, block) pair costs exactly one truncated
//! convolution product. That product count, together with the number of
//! (node, block) update steps, is the work metric everything else compares.
//!
//! The successive-approximation solver iterates the same recursion to a
//! fixpoint and serves as the independent oracle for tests; both solvers
//! share the inner product kernel, so at the fixpoint they agree bit for
//! bit, including argmax tie-breaks (lowest successor id).

use std::collections::VecDeque;
use std::fmt;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::dist::{conv_fft_raw, conv_term};
use crate::graph::{dijkstra_masked, Direction, NodeId, StochasticGraph, INF};
use crate::pruning::PruneSet;

/// Sentinel in `next` tables: no successor defined.
pub const NO_NEXT: u32 = u32::MAX;

/// 99% two-sided normal quantile.
const Z99: f64 = 2.5758293035489004;

#[derive(Debug, Clone, PartialEq)]
pub enum SolveError {
    ZeroBudget,
    EmptyMask,
    TargetNotInMask { t: NodeId },
    NoConvergence { iters: u32 },
    ZeroSamples,
    BadProbability(f64),
    BudgetInsufficient { p: f64 },
}

impl fmt::Display for SolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveError::ZeroBudget => write!(f, "budget must be >= 1 step"),
            SolveError::EmptyMask => write!(f, "mask retains no nodes"),
            SolveError::TargetNotInMask { t } => write!(f, "target {t} not in mask"),
            SolveError::NoConvergence { iters } => {
                write!(f, "successive approximation did not converge in {iters} iterations")
            }
            SolveError::ZeroSamples => write!(f, "simulation needs at least one sample"),
            SolveError::BadProbability(p) => write!(f, "probability {p} outside (0, 1]"),
            SolveError::BudgetInsufficient { p } => {
                write!(f, "budget insufficient to reach arrival probability {p}")
            }
        }
    }
}

impl std::error::Error for SolveError {}

/// How (arc, block) products are evaluated. Counting is identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvMethod {
    #[default]
    Direct,
    Fft,
}

/// One label-setting budget increment, `delta` wide except for a shorter
/// final block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetBlock {
    pub lo: u32,
    pub hi: u32,
}

/// Blocks covering budgets `1..=budget` in steps of `delta`.
pub fn budget_blocks(budget: u32, delta: u32) -> impl Iterator<Item = BudgetBlock> {
    debug_assert!(delta >= 1);
    (0..).map(move |i| i as u32 * delta + 1).take_while(move |&lo| lo <= budget).map(move |lo| {
        BudgetBlock { lo, hi: (lo + delta - 1).min(budget) }
    })
}

/// Per-node arrival-probability curves and successor tables over
/// `tau in 0..=budget`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub target: NodeId,
    pub budget: u32,
    prob: Vec<Vec<f64>>,
    next: Vec<Vec<u32>>,
}

impl Policy {
    fn zeroed(n: usize, target: NodeId, budget: u32) -> Self {
        let len = budget as usize + 1;
        let mut prob = vec![vec![0.0; len]; n];
        prob[target as usize] = vec![1.0; len];
        Policy { target, budget, prob, next: vec![vec![NO_NEXT; len]; n] }
    }

    pub fn node_count(&self) -> usize {
        self.prob.len()
    }

    /// Arrival probability from `u` with remaining budget `tau`.
    pub fn prob(&self, u: NodeId, tau: u32) -> f64 {
        self.prob[u as usize][tau as usize]
    }

    /// Non-decreasing curve of `prob(u, tau)` over `tau in 0..=budget`.
    pub fn prob_curve(&self, u: NodeId) -> &[f64] {
        &self.prob[u as usize]
    }

    pub fn next(&self, u: NodeId, tau: u32) -> Option<NodeId> {
        let v = self.next[u as usize][tau as usize];
        (v != NO_NEXT).then_some(v)
    }

    pub(crate) fn next_raw(&self, u: NodeId) -> &[u32] {
        &self.next[u as usize]
    }

    pub(crate) fn from_parts(
        target: NodeId,
        budget: u32,
        prob: Vec<Vec<f64>>,
        next: Vec<Vec<u32>>,
    ) -> Self {
        Policy { target, budget, prob, next }
    }
}

/// Work counters of one solver run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    /// Truncated convolution products, one per evaluated (arc, block) pair.
    pub convolutions: u64,
    /// Update steps, one per (node, block) pair that did work.
    pub order_len: u64,
    /// Nodes updated at least once.
    pub touched_nodes: u64,
    /// Wall-clock time, informational only.
    pub wall_ms: f64,
}

struct MaskView<'a> {
    flags: Option<&'a [bool]>,
}

impl<'a> MaskView<'a> {
    fn contains(&self, u: NodeId) -> bool {
        self.flags.is_none_or(|f| f[u as usize])
    }
}

fn validate_mask(
    g: &StochasticGraph,
    t: NodeId,
    budget: u32,
    mask: Option<&PruneSet>,
) -> Result<(), SolveError> {
    if budget == 0 {
        return Err(SolveError::ZeroBudget);
    }
    if let Some(m) = mask {
        if m.node_count() == 0 {
            return Err(SolveError::EmptyMask);
        }
        if !m.contains(t) {
            return Err(SolveError::TargetNotInMask { t });
        }
    } else if g.node_count() == 0 {
        return Err(SolveError::EmptyMask);
    }
    Ok(())
}

/// Smallest arc offset over the masked arc set; block width of the sweep.
fn min_masked_offset(g: &StochasticGraph, mask: &MaskView) -> u32 {
    let topo = g.topology();
    let mut delta = u32::MAX;
    for arc in 0..topo.arc_count() {
        let (u, v) = topo.arc(arc);
        if mask.contains(u) && mask.contains(v) {
            delta = delta.min(g.pdf(arc).offset());
        }
    }
    if delta == u32::MAX {
        1
    } else {
        delta
    }
}

/// Free-flow distances to `t` inside the masked subgraph.
fn masked_dist_to_target(g: &StochasticGraph, t: NodeId, mask: Option<&PruneSet>) -> Vec<u64> {
    dijkstra_masked(
        g.topology(),
        g.weights(crate::graph::WeightView::FreeFlow),
        t,
        Direction::Backward,
        mask.map(|m| m.flags()),
    )
    .dist
}

/// Label-setting solve of the policy recursion on the masked subgraph.
///
/// Nodes outside the mask keep probability zero. Nodes that cannot reach
/// `t` within the current block's budget are skipped and charge nothing to
/// `order_len`; arcs whose head cannot contribute yet are skipped and charge
/// no convolution.
pub fn solve_label_setting(
    g: &StochasticGraph,
    t: NodeId,
    budget: u32,
    mask: Option<&PruneSet>,
    conv: ConvMethod,
) -> Result<(Policy, SolveStats), SolveError> {
    validate_mask(g, t, budget, mask)?;
    let start = Instant::now();
    let topo = g.topology();
    let n = topo.node_count();
    let mv = MaskView { flags: mask.map(|m| m.flags()) };
    let delta = min_masked_offset(g, &mv);
    let dist_to_t = masked_dist_to_target(g, t, mask);

    let mut policy = Policy::zeroed(n, t, budget);
    let mut stats = SolveStats::default();
    let mut touched = vec![false; n];
    let mut best = vec![0.0f64; delta as usize];
    let mut best_next = vec![NO_NEXT; delta as usize];

    for block in budget_blocks(budget, delta) {
        let width = (block.hi - block.lo + 1) as usize;
        for u in 0..n as NodeId {
            if u == t || !mv.contains(u) || dist_to_t[u as usize] > block.hi as u64 {
                continue;
            }
            if !touched[u as usize] {
                touched[u as usize] = true;
                stats.touched_nodes += 1;
            }
            stats.order_len += 1;
            best[..width].fill(0.0);
            best_next[..width].fill(NO_NEXT);
            for (arc, v) in topo.out_arcs(u) {
                if !mv.contains(v) {
                    continue;
                }
                let pdf = g.pdf(arc);
                let off = pdf.offset();
                if dist_to_t[v as usize].saturating_add(off as u64) > block.hi as u64 {
                    continue; // contributes nothing in this block
                }
                stats.convolutions += 1;
                let prob_v = &policy.prob[v as usize];
                match conv {
                    ConvMethod::Direct => {
                        for tau in block.lo.max(off)..=block.hi {
                            let s = conv_term(pdf.mass(), prob_v, (tau - off) as usize);
                            let i = (tau - block.lo) as usize;
                            if s > best[i] {
                                best[i] = s;
                                best_next[i] = v;
                            }
                        }
                    }
                    ConvMethod::Fft => {
                        let vals = fft_block_products(pdf.mass(), off, prob_v, block.lo, block.hi);
                        for (i, s) in vals.into_iter().enumerate() {
                            if s > best[i] {
                                best[i] = s;
                                best_next[i] = v;
                            }
                        }
                    }
                }
            }
            let lo = block.lo as usize;
            policy.prob[u as usize][lo..lo + width].copy_from_slice(&best[..width]);
            policy.next[u as usize][lo..lo + width].copy_from_slice(&best_next[..width]);
        }
    }
    stats.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((policy, stats))
}

/// Products `sum_j c[j] * prob_v[tau - off - j]` for `tau in lo..=hi`,
/// evaluated through one frequency-domain convolution of the pdf with the
/// finalized window of `prob_v`.
fn fft_block_products(c: &[f64], off: u32, prob_v: &[f64], lo: u32, hi: u32) -> Vec<f64> {
    let width = (hi - lo + 1) as usize;
    if hi < off {
        return vec![0.0; width];
    }
    let b1 = (hi - off) as usize; // largest prob index needed
    let b0 = (lo as i64 - off as i64 - (c.len() as i64 - 1)).max(0) as usize;
    let f = conv_fft_raw(c, &prob_v[b0..=b1]);
    (lo..=hi)
        .map(|tau| {
            if tau < off {
                return 0.0;
            }
            let idx = (tau - off) as i64 - b0 as i64;
            if idx >= 0 && (idx as usize) < f.len() {
                f[idx as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Fixpoint iteration of the policy recursion; the test oracle for the
/// label-setting solver on small graphs. `eps = 0` demands a bitwise-stable
/// fixpoint, which the strictly positive arc offsets guarantee within
/// `budget + 2` sweeps.
pub fn solve_successive_approx(
    g: &StochasticGraph,
    t: NodeId,
    budget: u32,
    mask: Option<&PruneSet>,
    max_iter: u32,
    eps: f64,
) -> Result<Policy, SolveError> {
    validate_mask(g, t, budget, mask)?;
    assert!(eps >= 0.0, "eps must be non-negative");
    let topo = g.topology();
    let n = topo.node_count();
    let mv = MaskView { flags: mask.map(|m| m.flags()) };
    let len = budget as usize + 1;

    let mut cur = Policy::zeroed(n, t, budget).prob;
    let mut nxt = cur.clone();
    let mut converged = false;
    for _ in 0..max_iter {
        let mut max_delta = 0.0f64;
        for u in 0..n as NodeId {
            if u == t || !mv.contains(u) {
                continue;
            }
            for tau in 0..len as u32 {
                let mut value = 0.0f64;
                for (arc, v) in topo.out_arcs(u) {
                    if !mv.contains(v) {
                        continue;
                    }
                    let pdf = g.pdf(arc);
                    if tau < pdf.offset() {
                        continue;
                    }
                    let s = conv_term(pdf.mass(), &cur[v as usize], (tau - pdf.offset()) as usize);
                    if s > value {
                        value = s;
                    }
                }
                let d = (value - cur[u as usize][tau as usize]).abs();
                if d > max_delta {
                    max_delta = d;
                }
                nxt[u as usize][tau as usize] = value;
            }
        }
        std::mem::swap(&mut cur, &mut nxt);
        if max_delta <= eps {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolveError::NoConvergence { iters: max_iter });
    }

    // Successor extraction from the converged values, with the same
    // lowest-id tie-break the label-setting argmax uses.
    let mut next = vec![vec![NO_NEXT; len]; n];
    for u in 0..n as NodeId {
        if u == t || !mv.contains(u) {
            continue;
        }
        for tau in 0..len as u32 {
            let mut value = 0.0f64;
            let mut arg = NO_NEXT;
            for (arc, v) in topo.out_arcs(u) {
                if !mv.contains(v) {
                    continue;
                }
                let pdf = g.pdf(arc);
                if tau < pdf.offset() {
                    continue;
                }
                let s = conv_term(pdf.mass(), &cur[v as usize], (tau - pdf.offset()) as usize);
                if s > value {
                    value = s;
                    arg = v;
                }
            }
            next[u as usize][tau as usize] = arg;
        }
    }
    Ok(Policy::from_parts(t, budget, cur, next))
}

/// Nodes the solved policy can actually steer through from `s`: seed `s`
/// with the full budget, follow `next` transitions, and propagate the
/// remaining-budget bound `beta - offset` to each successor until closure.
pub fn extract_optimal_order(g: &StochasticGraph, policy: &Policy, s: NodeId) -> PruneSet {
    let topo = g.topology();
    let n = topo.node_count();
    let mut bound = vec![-1i64; n];
    bound[s as usize] = policy.budget as i64;
    let mut queue = VecDeque::from([s]);
    let mut queued = vec![false; n];
    queued[s as usize] = true;
    while let Some(u) = queue.pop_front() {
        queued[u as usize] = false;
        let beta = bound[u as usize];
        let next_u = policy.next_raw(u);
        let reachable = beta.min(policy.budget as i64) as usize;
        let mut seen: Vec<NodeId> = Vec::new();
        for &v in &next_u[..=reachable] {
            if v == NO_NEXT || seen.contains(&v) {
                continue;
            }
            seen.push(v);
            let arc = topo.arc_id(u, v).expect("next table follows arcs");
            let cand = beta - g.pdf(arc).offset() as i64;
            if cand > bound[v as usize] {
                bound[v as usize] = cand;
                if !queued[v as usize] {
                    queued[v as usize] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    let flags: Vec<bool> = bound.iter().map(|&b| b >= 0).collect();
    PruneSet::from_flags(flags, "optimal-order")
}

/// Re-solves restricted to an extracted order, so order/convolution ratios
/// against the classic full-graph run use identical counting.
pub fn rerun_on_order(
    g: &StochasticGraph,
    t: NodeId,
    budget: u32,
    order: &PruneSet,
    conv: ConvMethod,
) -> Result<(Policy, SolveStats), SolveError> {
    solve_label_setting(g, t, budget, Some(order), conv)
}

/// Outcome of a Monte Carlo policy walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimResult {
    pub success_rate: f64,
    /// 99% normal-approximation confidence interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: u64,
}

/// Walks the policy from `s` with the full budget, drawing arc travel times
/// by inverse cdf. Undefined successors (stranded probability mass under a
/// pruned policy) and exhausted budgets count as failures.
pub fn simulate_policy(
    g: &StochasticGraph,
    policy: &Policy,
    s: NodeId,
    n_samples: u64,
    seed: u64,
) -> Result<SimResult, SolveError> {
    if n_samples == 0 {
        return Err(SolveError::ZeroSamples);
    }
    let topo = g.topology();
    let cdfs: Vec<_> = (0..g.arc_count()).map(|a| g.pdf(a).cdf()).collect();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut successes = 0u64;
    for _ in 0..n_samples {
        let mut u = s;
        let mut tau = policy.budget as i64;
        loop {
            if u == policy.target {
                successes += 1;
                break;
            }
            let Some(v) = policy.next(u, tau as u32) else {
                break; // dead end: failure, not an error
            };
            let arc = topo.arc_id(u, v).expect("next table follows arcs");
            let w = cdfs[arc].sample(rng.random::<f64>());
            tau -= w as i64;
            if tau < 0 {
                break;
            }
            u = v;
        }
    }
    let rate = successes as f64 / n_samples as f64;
    let half = Z99 * (rate * (1.0 - rate) / n_samples as f64).sqrt();
    Ok(SimResult {
        success_rate: rate,
        ci_low: (rate - half).max(0.0),
        ci_high: (rate + half).min(1.0),
        samples: n_samples,
    })
}

/// Budget factor to reach arrival probability `p` from `s`: the smallest
/// budget whose arrival probability reaches `p`, divided by the free-flow
/// distance. Distinguishes an insufficient solve budget from bad input.
pub fn budget_for_probability(
    g: &StochasticGraph,
    policy: &Policy,
    s: NodeId,
    p: f64,
) -> Result<f64, SolveError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SolveError::BadProbability(p));
    }
    let curve = policy.prob_curve(s);
    // Absorb float dust from renormalized tails when p = 1.
    let threshold = p - 1e-12;
    let tau = curve
        .iter()
        .position(|&q| q >= threshold)
        .ok_or(SolveError::BudgetInsufficient { p })?;
    if s == policy.target {
        return Ok(1.0);
    }
    let dff = g.free_flow_dist(s, policy.target);
    debug_assert!(dff != INF && dff >= 1);
    Ok(tau as f64 / dff as f64)
}
