//! Benchmark harness: runs query batches against the full graph and the
//! pruned subgraphs, measures convolution/order reductions and the arrival
//! probability error they cost, and writes one deterministic CSV.
//!
//! Per query the classic full-graph policy is the baseline. Its budget is
//! the free-flow distance scaled by the budget factor, capped at the first
//! budget with certain arrival so no blocks are spent past that point. The
//! a-posteriori optimal order is extracted and rerun, then every requested
//! technique is built, solved under its mask, and compared along the
//! normalized budget window.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::dist::scalar_views;
use crate::graph::{settle_order, NodeId, StochasticGraph, WeightView, INF};
use crate::pruning::{
    corridor, penalty_alternative_graph, via_alternative_graph, PenaltyParams, PruneError,
    PruneSet, ViaParams,
};
use crate::solver::{
    budget_for_probability, extract_optimal_order, rerun_on_order, solve_label_setting,
    ConvMethod, Policy, SolveError, SolveStats,
};

/// Arrival probability treated as "first relevant budget".
const RELEVANT_PROB: f64 = 0.001;
/// Arrival probability treated as certain.
const CERTAIN_PROB: f64 = 1.0 - 1e-9;
/// Points of the normalized error curve, covering 0..=100 percent.
pub const CURVE_SAMPLES: usize = 101;

#[derive(Debug)]
pub enum BenchError {
    BadParams(String),
    Solve(SolveError),
    Prune(PruneError),
    Io(std::io::Error),
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::BadParams(msg) => write!(f, "bad benchmark parameters: {msg}"),
            BenchError::Solve(e) => write!(f, "solver: {e}"),
            BenchError::Prune(e) => write!(f, "pruning: {e}"),
            BenchError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for BenchError {}

impl From<SolveError> for BenchError {
    fn from(e: SolveError) -> Self {
        BenchError::Solve(e)
    }
}

impl From<PruneError> for BenchError {
    fn from(e: PruneError) -> Self {
        BenchError::Prune(e)
    }
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Io(e)
    }
}

/// A pruning technique selectable on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Technique {
    Full,
    Corridor(u32),
    Penalty,
    Via,
    ViaMix,
}

impl Technique {
    pub fn label(&self) -> String {
        match self {
            Technique::Full => "full".into(),
            Technique::Corridor(k) => format!("corridor:{k}"),
            Technique::Penalty => "penalty".into(),
            Technique::Via => "via".into(),
            Technique::ViaMix => "via-mix".into(),
        }
    }
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Technique::Full),
            "penalty" => Ok(Technique::Penalty),
            "via" => Ok(Technique::Via),
            "via-mix" => Ok(Technique::ViaMix),
            other => {
                if let Some(k) = other.strip_prefix("corridor:") {
                    k.parse()
                        .map(Technique::Corridor)
                        .map_err(|_| format!("bad corridor turns in '{other}'"))
                } else {
                    Err(format!(
                        "unknown technique '{other}' (full|corridor:K|penalty|via|via-mix)"
                    ))
                }
            }
        }
    }
}

/// Technique parameter overrides shared by a whole run.
#[derive(Debug, Clone)]
pub struct TechniqueParams {
    /// View the corridor and penalty searches evaluate.
    pub view: WeightView,
    pub via: ViaParams,
    pub penalty: PenaltyParams,
}

impl Default for TechniqueParams {
    fn default() -> Self {
        TechniqueParams {
            view: WeightView::Mean,
            via: ViaParams::default(),
            penalty: PenaltyParams::default(),
        }
    }
}

impl TechniqueParams {
    /// Canonical parameter string for the CSV, one entry per technique kind.
    fn describe(&self, technique: Technique) -> String {
        match technique {
            Technique::Full => String::new(),
            Technique::Corridor(_) => format!("view={}", self.view.label()),
            Technique::Penalty => format!(
                "view={};factor={};adjoint={};rounds={};stop={}",
                self.view.label(),
                self.penalty.penalty_factor,
                if self.penalty.adjoint { self.penalty.adjoint_factor } else { 0.0 },
                self.penalty.rounds,
                self.penalty.stop_stretch
            ),
            Technique::Via => format!(
                "view={};stretch={};sharing={}",
                self.view.label(),
                self.via.stretch_eps,
                self.via.sharing_gamma
            ),
            Technique::ViaMix => {
                format!("stretch={};sharing={}", self.via.stretch_eps, self.via.sharing_gamma)
            }
        }
    }
}

/// Configuration of one benchmark run.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub techniques: Vec<Technique>,
    pub queries: u32,
    pub budget_factor: f64,
    pub seed: u64,
    pub conv: ConvMethod,
    pub params: TechniqueParams,
}

impl BenchConfig {
    pub fn new(techniques: Vec<Technique>, queries: u32, seed: u64) -> Self {
        BenchConfig {
            techniques,
            queries,
            budget_factor: 3.0,
            seed,
            conv: ConvMethod::Direct,
            params: TechniqueParams::default(),
        }
    }
}

/// The budget range a query's error curve is normalized over: from the first
/// relevant arrival probability to the first certain one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetWindow {
    pub lo: u32,
    pub hi: u32,
}

pub fn budget_window(policy: &Policy, s: NodeId) -> BudgetWindow {
    let curve = policy.prob_curve(s);
    let hi = curve
        .iter()
        .position(|&p| p >= CERTAIN_PROB)
        .map_or(policy.budget, |i| i as u32);
    match curve.iter().position(|&p| p > RELEVANT_PROB) {
        Some(lo) => BudgetWindow { lo: lo as u32, hi },
        None => BudgetWindow { lo: policy.budget, hi: policy.budget },
    }
}

/// Absolute arrival-probability loss of the pruned policy at `CURVE_SAMPLES`
/// evenly spaced budgets across the window, clamped at zero (dominance makes
/// true negatives impossible beyond float noise).
pub fn error_curve(
    full: &Policy,
    pruned: &Policy,
    s: NodeId,
    window: BudgetWindow,
) -> Vec<f64> {
    let span = (window.hi - window.lo) as f64;
    (0..CURVE_SAMPLES)
        .map(|j| {
            let tau =
                window.lo + (span * j as f64 / (CURVE_SAMPLES - 1) as f64).round() as u32;
            (full.prob(s, tau) - pruned.prob(s, tau)).max(0.0)
        })
        .collect()
}

/// Metrics of one (query, technique) pair.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub query: u32,
    pub rank: Option<u64>,
    pub s: NodeId,
    pub t: NodeId,
    pub budget: u32,
    pub technique: String,
    pub params: String,
    pub retained_pct: f64,
    pub convolutions: u64,
    pub order_len: u64,
    pub touched_nodes: u64,
    pub conv_ratio_vs_classic: f64,
    pub order_ratio_vs_classic: f64,
    pub order_ratio_classic_over_optimal: f64,
    pub max_error: f64,
    pub error_curve: Vec<f64>,
    /// Budget factors reaching 25/50/75/100% arrival probability; `None`
    /// when the solve budget was insufficient for that level.
    pub budget_factors: [Option<f64>; 4],
}

/// Per-technique means over a run; curve entries line up with the
/// normalized percent axis.
#[derive(Debug, Clone)]
pub struct TechniqueSummary {
    pub rank: Option<u64>,
    pub technique: String,
    pub queries: u32,
    pub mean_retained_pct: f64,
    pub mean_conv_ratio: f64,
    pub mean_order_ratio_vs_classic: f64,
    pub mean_order_ratio_classic_over_optimal: f64,
    pub mean_max_error: f64,
    pub mean_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub records: Vec<BenchRecord>,
    pub summaries: Vec<TechniqueSummary>,
    /// Disconnected pairs that had to be redrawn.
    pub resampled_pairs: u64,
}

fn build_prune_set(
    g: &StochasticGraph,
    s: NodeId,
    t: NodeId,
    technique: Technique,
    params: &TechniqueParams,
) -> Result<PruneSet, PruneError> {
    match technique {
        Technique::Full => Ok(PruneSet::full(g.node_count())),
        Technique::Corridor(k) => corridor(g, s, t, k, params.view),
        Technique::Penalty => penalty_alternative_graph(g, s, t, &params.penalty, params.view),
        Technique::Via => {
            let p = ViaParams { views: vec![params.view], ..params.via.clone() };
            via_alternative_graph(g, s, t, &p)
        }
        Technique::ViaMix => {
            let p = ViaParams {
                views: vec![WeightView::FreeFlow, WeightView::Mean, WeightView::Max],
                ..params.via.clone()
            };
            via_alternative_graph(g, s, t, &p)
        }
    }
}

fn budget_factors(g: &StochasticGraph, policy: &Policy, s: NodeId) -> [Option<f64>; 4] {
    [0.25, 0.5, 0.75, 1.0].map(|p| budget_for_probability(g, policy, s, p).ok())
}

struct QueryBaseline {
    budget: u32,
    classic: Policy,
    classic_stats: SolveStats,
    window: BudgetWindow,
}

fn solve_classic(
    g: &StochasticGraph,
    t: NodeId,
    s: NodeId,
    budget_factor: f64,
    conv: ConvMethod,
) -> Result<QueryBaseline, BenchError> {
    let dff = g.free_flow_dist(s, t);
    debug_assert!(dff != INF);
    let raw_budget = ((budget_factor * dff as f64).ceil() as u32).max(1);
    let (classic, stats) = solve_label_setting(g, t, raw_budget, None, conv)?;
    // Cap at the first certain-arrival budget; the rerun is a prefix of the
    // original sweep, just with the right counters.
    let certain = classic
        .prob_curve(s)
        .iter()
        .position(|&p| p >= CERTAIN_PROB)
        .map(|i| (i as u32).max(1));
    let (budget, classic, stats) = match certain {
        Some(cap) if cap < raw_budget => {
            let (p, st) = solve_label_setting(g, t, cap, None, conv)?;
            (cap, p, st)
        }
        _ => (raw_budget, classic, stats),
    };
    let window = budget_window(&classic, s);
    Ok(QueryBaseline { budget, classic, classic_stats: stats, window })
}

/// Runs one query against the baseline, the extracted optimal order, and
/// each configured technique.
fn bench_query(
    g: &StochasticGraph,
    query: u32,
    rank: Option<u64>,
    s: NodeId,
    t: NodeId,
    cfg: &BenchConfig,
) -> Result<Vec<BenchRecord>, BenchError> {
    let base = solve_classic(g, t, s, cfg.budget_factor, cfg.conv)?;
    let QueryBaseline { budget, classic, classic_stats, window } = &base;

    let order = extract_optimal_order(g, classic, s);
    let (optimal, optimal_stats) = rerun_on_order(g, t, *budget, &order, cfg.conv)?;
    let classic_over_optimal = classic_stats.order_len as f64 / optimal_stats.order_len as f64;

    let record = |technique: String,
                  params: String,
                  set: Option<&PruneSet>,
                  policy: &Policy,
                  stats: &SolveStats|
     -> BenchRecord {
        let curve = error_curve(classic, policy, s, *window);
        let max_error = curve.iter().cloned().fold(0.0, f64::max);
        BenchRecord {
            query,
            rank,
            s,
            t,
            budget: *budget,
            technique,
            params,
            retained_pct: set.map_or(100.0, |m| m.retained_pct()),
            convolutions: stats.convolutions,
            order_len: stats.order_len,
            touched_nodes: stats.touched_nodes,
            conv_ratio_vs_classic: stats.convolutions as f64
                / classic_stats.convolutions as f64,
            order_ratio_vs_classic: stats.order_len as f64 / classic_stats.order_len as f64,
            order_ratio_classic_over_optimal: classic_over_optimal,
            max_error,
            error_curve: curve,
            budget_factors: budget_factors(g, policy, s),
        }
    };

    let mut records = Vec::with_capacity(cfg.techniques.len() + 2);
    records.push(record("classic".into(), String::new(), None, classic, classic_stats));
    records.push(record(
        "optimal-order".into(),
        String::new(),
        Some(&order),
        &optimal,
        &optimal_stats,
    ));
    for &technique in &cfg.techniques {
        let set = build_prune_set(g, s, t, technique, &cfg.params)?;
        let (policy, stats) = solve_label_setting(g, t, *budget, Some(&set), cfg.conv)?;
        records.push(record(
            technique.label(),
            cfg.params.describe(technique),
            Some(&set),
            &policy,
            &stats,
        ));
    }
    Ok(records)
}

type RecordGroup<'a> = ((Option<u64>, String), Vec<&'a BenchRecord>);

fn summarize(records: &[BenchRecord]) -> Vec<TechniqueSummary> {
    let mut groups: Vec<RecordGroup> = Vec::new();
    for r in records {
        let key = (r.rank, r.technique.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((rank, technique), rows)| {
            let n = rows.len() as f64;
            let mean = |f: &dyn Fn(&BenchRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            let mut mean_curve = vec![0.0; CURVE_SAMPLES];
            for r in &rows {
                for (acc, &e) in mean_curve.iter_mut().zip(&r.error_curve) {
                    *acc += e;
                }
            }
            for acc in &mut mean_curve {
                *acc /= n;
            }
            TechniqueSummary {
                rank,
                technique,
                queries: rows.len() as u32,
                mean_retained_pct: mean(&|r| r.retained_pct),
                mean_conv_ratio: mean(&|r| r.conv_ratio_vs_classic),
                mean_order_ratio_vs_classic: mean(&|r| r.order_ratio_vs_classic),
                mean_order_ratio_classic_over_optimal: mean(&|r| r.order_ratio_classic_over_optimal),
                mean_max_error: mean(&|r| r.max_error),
                mean_curve,
            }
        })
        .collect()
}

/// Draws `queries` random connected pairs and benchmarks each; disconnected
/// draws are resampled so the query count stays exact. Queries solve in
/// parallel; record order stays deterministic.
pub fn run_benchmark(g: &StochasticGraph, cfg: &BenchConfig) -> Result<BenchOutput, BenchError> {
    if cfg.queries == 0 {
        return Err(BenchError::BadParams("need at least one query".into()));
    }
    if cfg.budget_factor < 1.0 {
        return Err(BenchError::BadParams("budget factor must be >= 1".into()));
    }
    if g.node_count() < 2 {
        return Err(BenchError::BadParams("graph needs at least two nodes".into()));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let n = g.node_count() as u32;
    let mut pairs = Vec::with_capacity(cfg.queries as usize);
    let mut resampled = 0u64;
    while pairs.len() < cfg.queries as usize {
        let s = rng.random_range(0..n);
        let mut t = rng.random_range(0..n);
        while t == s {
            t = rng.random_range(0..n);
        }
        if g.free_flow_dist(s, t) == INF {
            resampled += 1;
            continue;
        }
        pairs.push((s, t));
    }

    let results: Result<Vec<Vec<BenchRecord>>, BenchError> = pairs
        .par_iter()
        .enumerate()
        .map(|(q, &(s, t))| bench_query(g, q as u32, None, s, t, cfg))
        .collect();
    let records: Vec<BenchRecord> = results?.into_iter().flatten().collect();
    let summaries = summarize(&records);
    Ok(BenchOutput { records, summaries, resampled_pairs: resampled })
}

/// Benchmarks queries whose targets sit at fixed Dijkstra ranks from random
/// sources, one row group per rank.
pub fn rank_sweep(
    g: &StochasticGraph,
    ranks: &[u64],
    queries_per_rank: u32,
    cfg: &BenchConfig,
) -> Result<BenchOutput, BenchError> {
    if ranks.is_empty() || queries_per_rank == 0 {
        return Err(BenchError::BadParams("need ranks and queries per rank".into()));
    }
    if ranks.iter().any(|&r| r == 0 || r >= g.node_count() as u64) {
        return Err(BenchError::BadParams(format!(
            "ranks must be in [1, {})",
            g.node_count()
        )));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let n = g.node_count() as u32;
    let ff = g.weights(WeightView::FreeFlow);
    let mut queries = Vec::new();
    let mut resampled = 0u64;
    for &rank in ranks {
        for _ in 0..queries_per_rank {
            let mut attempts = 0;
            let (s, t) = loop {
                attempts += 1;
                if attempts > 1000 {
                    return Err(BenchError::BadParams(format!(
                        "no source reaches rank {rank}"
                    )));
                }
                let s = rng.random_range(0..n);
                let order = settle_order(g.topology(), ff, s);
                if order.len() as u64 > rank {
                    break (s, order[rank as usize]);
                }
                resampled += 1;
            };
            queries.push((rank, s, t));
        }
    }

    let results: Result<Vec<Vec<BenchRecord>>, BenchError> = queries
        .par_iter()
        .enumerate()
        .map(|(q, &(rank, s, t))| bench_query(g, q as u32, Some(rank), s, t, cfg))
        .collect();
    let records: Vec<BenchRecord> = results?.into_iter().flatten().collect();
    let summaries = summarize(&records);
    Ok(BenchOutput { records, summaries, resampled_pairs: resampled })
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.9}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn fmt_rank(r: Option<u64>) -> String {
    r.map(|r| r.to_string()).unwrap_or_default()
}

/// Writes per-query rows, aggregated curve rows and summary rows as one CSV
/// (comma separated, `.` decimal, LF). Byte-identical for identical inputs.
pub fn write_csv<W: Write>(w: &mut W, out: &BenchOutput) -> std::io::Result<()> {
    writeln!(
        w,
        "row_type,query,rank,s,t,budget,technique,params,retained_pct,convolutions,order_len,\
         touched_nodes,conv_ratio_vs_classic,order_ratio_vs_classic,\
         order_ratio_classic_over_optimal,max_error,bf25,bf50,bf75,bf100,tau_scaled,mean_error"
    )?;
    for r in &out.records {
        writeln!(
            w,
            "query,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},,",
            r.query,
            fmt_rank(r.rank),
            r.s,
            r.t,
            r.budget,
            r.technique,
            r.params,
            fmt_f64(r.retained_pct),
            r.convolutions,
            r.order_len,
            r.touched_nodes,
            fmt_f64(r.conv_ratio_vs_classic),
            fmt_f64(r.order_ratio_vs_classic),
            fmt_f64(r.order_ratio_classic_over_optimal),
            fmt_f64(r.max_error),
            fmt_opt(r.budget_factors[0]),
            fmt_opt(r.budget_factors[1]),
            fmt_opt(r.budget_factors[2]),
            fmt_opt(r.budget_factors[3]),
        )?;
    }
    for s in &out.summaries {
        for (j, &e) in s.mean_curve.iter().enumerate() {
            writeln!(
                w,
                "curve,,{},,,,{},,,,,,,,,,,,,,{},{}",
                fmt_rank(s.rank),
                s.technique,
                j,
                fmt_f64(e)
            )?;
        }
    }
    for s in &out.summaries {
        writeln!(
            w,
            "summary,,{},,,,{},,{},,,,{},{},{},{},,,,,,",
            fmt_rank(s.rank),
            s.technique,
            fmt_f64(s.mean_retained_pct),
            fmt_f64(s.mean_conv_ratio),
            fmt_f64(s.mean_order_ratio_vs_classic),
            fmt_f64(s.mean_order_ratio_classic_over_optimal),
            fmt_f64(s.mean_max_error),
        )?;
    }
    Ok(())
}

/// One row per arc with the derived distribution scalars.
pub fn variance_export<W: Write>(w: &mut W, g: &StochasticGraph) -> std::io::Result<()> {
    writeln!(w, "from,to,min,mean,max,variance")?;
    for arc in 0..g.arc_count() {
        let (u, v) = g.topology().arc(arc);
        let views = scalar_views(g.pdf(arc));
        writeln!(
            w,
            "{u},{v},{},{},{},{}",
            views.min,
            fmt_f64(views.mean),
            views.max,
            fmt_f64(views.variance)
        )?;
    }
    Ok(())
}
