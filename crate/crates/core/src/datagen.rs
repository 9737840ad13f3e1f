//! Synthetic stochastic inputs: grid graphs, round-based gamma perturbation
//! driven by shortest-path usage counters, and fully random distributions.
//!
//! Everything is deterministic under (settings, seed). Free-flow shifts never
//! change during generation, so the deterministic shortest paths that drive
//! the counters are stable across rounds.

use std::fmt;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::{Rng, SeedableRng};

use crate::dist::{DistSpec, GammaSpec};
use crate::graph::{
    dijkstra, path_from_backward_tree, shortest_path, Direction, NodeId, Topology, INF,
};

#[derive(Debug, Clone, PartialEq)]
pub enum GenError {
    BadParams(String),
    BaseMismatch { arcs: usize, base: usize },
}

impl fmt::Display for GenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenError::BadParams(msg) => write!(f, "bad generator parameters: {msg}"),
            GenError::BaseMismatch { arcs, base } => {
                write!(f, "graph has {arcs} arcs but base file has {base} distributions")
            }
        }
    }
}

impl std::error::Error for GenError {}

/// How per-round usage counters are produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenSetting {
    /// Uniformly random source/target pairs, `paths` per round.
    RandomPaths { paths: u32 },
    /// One random permutation per round: every node is source and target once.
    RandomShuffle,
    /// `hotspots` targets per round, `paths` split evenly across them.
    Hotspots { paths: u32, hotspots: u32 },
    /// `paths` random arcs counted as one-hop paths.
    RandomArcs { paths: u32 },
    /// No rounds: independent gamma parameters per arc.
    RandomArcDistributions,
}

impl GenSetting {
    pub fn label(&self) -> &'static str {
        match self {
            GenSetting::RandomPaths { .. } => "random-paths",
            GenSetting::RandomShuffle => "random-shuffle",
            GenSetting::Hotspots { .. } => "hotspots",
            GenSetting::RandomArcs { .. } => "random-arcs",
            GenSetting::RandomArcDistributions => "random-arc-distributions",
        }
    }
}

/// Generator configuration. The additive penalty applied to a counted arc
/// interpolates between the low and high value pair by counter magnitude,
/// saturating at `saturation` hits per round; uncounted arcs decay by
/// `decrease_factor`, floored at their base parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSettings {
    pub setting: GenSetting,
    pub rounds: u32,
    pub seed: u64,
    pub decrease_factor: f64,
    pub shape_add: (f64, f64),
    pub scale_add: (f64, f64),
    pub saturation: f64,
}

impl GenSettings {
    pub fn new(setting: GenSetting, rounds: u32, seed: u64) -> Self {
        GenSettings {
            setting,
            rounds,
            seed,
            decrease_factor: 0.9,
            shape_add: (0.02, 0.08),
            scale_add: (0.1, 0.5),
            saturation: 5.0,
        }
    }

    /// Named presets for the benchmark inputs.
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        let (setting, rounds) = match name {
            "graph1" => (GenSetting::RandomShuffle, 15),
            "graph2" => (GenSetting::RandomArcs { paths: 50_000 }, 40),
            "graph3" => (GenSetting::Hotspots { paths: 5_000, hotspots: 50 }, 15),
            "graph4" => (GenSetting::RandomPaths { paths: 2_500 }, 100),
            "graph5" => (GenSetting::RandomPaths { paths: 10_000 }, 25),
            _ => return None,
        };
        Some(GenSettings::new(setting, rounds, seed))
    }
}

/// Path bookkeeping of one generation run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenReport {
    pub attempted_paths: u64,
    /// Disconnected pairs: counted as attempted, contribute no arcs.
    pub skipped_paths: u64,
}

fn validate(settings: &GenSettings) -> Result<(), GenError> {
    let positive = |name: &str, v: u32| {
        if v >= 1 {
            Ok(())
        } else {
            Err(GenError::BadParams(format!("{name} must be >= 1")))
        }
    };
    match settings.setting {
        GenSetting::RandomPaths { paths } => positive("paths", paths)?,
        GenSetting::Hotspots { paths, hotspots } => {
            positive("paths", paths)?;
            positive("hotspots", hotspots)?;
        }
        GenSetting::RandomArcs { paths } => positive("paths", paths)?,
        GenSetting::RandomShuffle | GenSetting::RandomArcDistributions => {}
    }
    if !(settings.decrease_factor > 0.0 && settings.decrease_factor <= 1.0) {
        return Err(GenError::BadParams("decrease_factor must be in (0, 1]".into()));
    }
    if settings.saturation < 1.0 {
        return Err(GenError::BadParams("saturation must be >= 1".into()));
    }
    Ok(())
}

/// Runs the configured setting against the base gamma parameters and returns
/// one perturbed spec per arc. Shifts are taken from `base` and double as the
/// free-flow weights for all path computations.
pub fn generate(
    topo: &Topology,
    base: &[GammaSpec],
    settings: &GenSettings,
) -> Result<(Vec<GammaSpec>, GenReport), GenError> {
    validate(settings)?;
    if base.len() != topo.arc_count() {
        return Err(GenError::BaseMismatch { arcs: topo.arc_count(), base: base.len() });
    }
    let mut rng = StdRng::seed_from_u64(settings.seed);
    let free_flow: Vec<u32> = base.iter().map(|b| b.shift).collect();
    let mut report = GenReport::default();

    if let GenSetting::RandomArcDistributions = settings.setting {
        let specs = draw_random_arc_distributions(topo, &free_flow, &mut rng);
        return Ok((specs, report));
    }

    let mut shape: Vec<f64> = base.iter().map(|b| b.shape).collect();
    let mut scale: Vec<f64> = base.iter().map(|b| b.scale).collect();
    let m = topo.arc_count();

    for _ in 0..settings.rounds {
        let mut counters = vec![0u32; m];
        match settings.setting {
            GenSetting::RandomPaths { paths } => {
                count_random_paths(topo, &free_flow, paths, &mut rng, &mut counters, &mut report)
            }
            GenSetting::RandomShuffle => {
                count_shuffle(topo, &free_flow, &mut rng, &mut counters, &mut report)
            }
            GenSetting::Hotspots { paths, hotspots } => count_hotspots(
                topo,
                &free_flow,
                paths,
                hotspots,
                &mut rng,
                &mut counters,
                &mut report,
            ),
            GenSetting::RandomArcs { paths } => {
                for _ in 0..paths {
                    counters[rng.random_range(0..m)] += 1;
                    report.attempted_paths += 1;
                }
            }
            GenSetting::RandomArcDistributions => unreachable!("handled above"),
        }

        for arc in 0..m {
            if counters[arc] > 0 {
                let t = (counters[arc] as f64 / settings.saturation).min(1.0);
                shape[arc] +=
                    settings.shape_add.0 + (settings.shape_add.1 - settings.shape_add.0) * t;
                scale[arc] +=
                    settings.scale_add.0 + (settings.scale_add.1 - settings.scale_add.0) * t;
            } else {
                shape[arc] = (shape[arc] * settings.decrease_factor).max(base[arc].shape);
                scale[arc] = (scale[arc] * settings.decrease_factor).max(base[arc].scale);
            }
        }
    }

    let specs = (0..m)
        .map(|arc| GammaSpec { shape: shape[arc], scale: scale[arc], shift: base[arc].shift })
        .collect();
    Ok((specs, report))
}

fn count_path_arcs(topo: &Topology, nodes: &[NodeId], counters: &mut [u32]) {
    for w in nodes.windows(2) {
        let arc = topo.arc_id(w[0], w[1]).expect("path follows arcs");
        counters[arc] += 1;
    }
}

/// Counts shortest-path arcs for pre-drawn pairs in parallel. Pairs with
/// `s == t` are no-ops; merging per-thread counters is order-independent, so
/// the result matches a sequential run exactly.
fn count_pairs_parallel(
    topo: &Topology,
    weights: &[u32],
    pairs: &[(NodeId, NodeId)],
    counters: &mut [u32],
) -> u64 {
    let m = counters.len();
    let (local, skipped) = pairs
        .par_iter()
        .with_min_len(256)
        .fold(
            || (vec![0u32; m], 0u64),
            |(mut local, mut skipped), &(s, t)| {
                if s != t {
                    match shortest_path(topo, weights, s, t) {
                        Some(path) => count_path_arcs(topo, &path.nodes, &mut local),
                        None => skipped += 1,
                    }
                }
                (local, skipped)
            },
        )
        .reduce(
            || (vec![0u32; m], 0u64),
            |(mut a, sa), (b, sb)| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                (a, sa + sb)
            },
        );
    for (c, l) in counters.iter_mut().zip(&local) {
        *c += l;
    }
    skipped
}

fn count_random_paths(
    topo: &Topology,
    weights: &[u32],
    paths: u32,
    rng: &mut StdRng,
    counters: &mut [u32],
    report: &mut GenReport,
) {
    let n = topo.node_count() as u32;
    let pairs: Vec<(NodeId, NodeId)> = (0..paths)
        .map(|_| {
            let s = rng.random_range(0..n);
            let mut t = rng.random_range(0..n);
            while t == s {
                t = rng.random_range(0..n);
            }
            (s, t)
        })
        .collect();
    report.attempted_paths += pairs.len() as u64;
    report.skipped_paths += count_pairs_parallel(topo, weights, &pairs, counters);
}

fn count_shuffle(
    topo: &Topology,
    weights: &[u32],
    rng: &mut StdRng,
    counters: &mut [u32],
    report: &mut GenReport,
) {
    let n = topo.node_count() as u32;
    let mut targets: Vec<NodeId> = (0..n).collect();
    targets.shuffle(rng);
    // Fixed points of the permutation stay in the pair list as empty paths.
    let pairs: Vec<(NodeId, NodeId)> =
        targets.into_iter().enumerate().map(|(s, t)| (s as NodeId, t)).collect();
    report.attempted_paths += pairs.len() as u64;
    report.skipped_paths += count_pairs_parallel(topo, weights, &pairs, counters);
}

fn count_hotspots(
    topo: &Topology,
    weights: &[u32],
    paths: u32,
    hotspots: u32,
    rng: &mut StdRng,
    counters: &mut [u32],
    report: &mut GenReport,
) {
    let n = topo.node_count() as u32;
    let targets: Vec<NodeId> = (0..hotspots).map(|_| rng.random_range(0..n)).collect();
    let base_quota = paths / hotspots;
    let remainder = (paths % hotspots) as usize;
    let jobs: Vec<(NodeId, Vec<NodeId>)> = targets
        .iter()
        .enumerate()
        .map(|(i, &hotspot)| {
            let quota = base_quota + u32::from(i < remainder);
            let sources = (0..quota).map(|_| rng.random_range(0..n)).collect();
            (hotspot, sources)
        })
        .collect();
    report.attempted_paths += jobs.iter().map(|(_, s)| s.len() as u64).sum::<u64>();

    let m = counters.len();
    let (local, skipped) = jobs
        .par_iter()
        .fold(
            || (vec![0u32; m], 0u64),
            |(mut local, mut skipped), (hotspot, sources)| {
                // One backward tree per hotspot serves all its sources.
                let tree = dijkstra(topo, weights, *hotspot, Direction::Backward);
                for &s in sources {
                    if s == *hotspot {
                        continue;
                    }
                    if tree.dist[s as usize] == INF {
                        skipped += 1;
                        continue;
                    }
                    let path = path_from_backward_tree(&tree, s).expect("checked reachable");
                    count_path_arcs(topo, &path.nodes, &mut local);
                }
                (local, skipped)
            },
        )
        .reduce(
            || (vec![0u32; m], 0u64),
            |(mut a, sa), (b, sb)| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                (a, sa + sb)
            },
        );
    for (c, l) in counters.iter_mut().zip(&local) {
        *c += l;
    }
    report.skipped_paths += skipped;
}

/// Independent gamma parameters per arc, shape and scale uniform in
/// [0.01, 10], shift fixed at the free-flow steps.
pub fn random_arc_distributions(topo: &Topology, free_flow: &[u32], seed: u64) -> Vec<GammaSpec> {
    let mut rng = StdRng::seed_from_u64(seed);
    draw_random_arc_distributions(topo, free_flow, &mut rng)
}

fn draw_random_arc_distributions(
    topo: &Topology,
    free_flow: &[u32],
    rng: &mut StdRng,
) -> Vec<GammaSpec> {
    (0..topo.arc_count())
        .map(|arc| GammaSpec {
            shape: rng.random_range(0.01..=10.0),
            scale: rng.random_range(0.01..=10.0),
            shift: free_flow[arc],
        })
        .collect()
}

/// Bidirected 4-neighbour grid with free-flow steps drawn uniformly from
/// `ff_range` per directed arc.
pub fn make_grid(
    width: u32,
    height: u32,
    ff_range: (u32, u32),
    seed: u64,
) -> Result<(Topology, Vec<u32>), GenError> {
    if width < 2 || height < 2 {
        return Err(GenError::BadParams("grid needs width and height >= 2".into()));
    }
    if ff_range.0 < 1 || ff_range.0 > ff_range.1 {
        return Err(GenError::BadParams(format!(
            "free-flow range [{}, {}] invalid",
            ff_range.0, ff_range.1
        )));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let node = |r: u32, c: u32| r * width + c;
    let mut arcs = Vec::new();
    let mut weights = Vec::new();
    // Arcs emitted in (from, to) order so ids line up with Topology's sort.
    for r in 0..height {
        for c in 0..width {
            let u = node(r, c);
            let mut neighbours = Vec::new();
            if r > 0 {
                neighbours.push(node(r - 1, c));
            }
            if c > 0 {
                neighbours.push(node(r, c - 1));
            }
            if c + 1 < width {
                neighbours.push(node(r, c + 1));
            }
            if r + 1 < height {
                neighbours.push(node(r + 1, c));
            }
            for v in neighbours {
                arcs.push((u, v));
                weights.push(rng.random_range(ff_range.0..=ff_range.1));
            }
        }
    }
    let topo = Topology::new((width * height) as usize, arcs).expect("grid arcs are simple");
    Ok((topo, weights))
}

/// Starting distribution state for round-based generation: unit gamma
/// parameters shifted by the free-flow steps.
pub fn base_specs(free_flow: &[u32]) -> Vec<GammaSpec> {
    free_flow.iter().map(|&ff| GammaSpec { shape: 1.0, scale: 1.0, shift: ff }).collect()
}

/// Caps the variance of extreme distributions at the given network quantile.
/// Gamma arcs keep their shape and get their scale reduced; mixture arcs get
/// sigmas and mean spreads contracted uniformly. Arcs at or below the cap are
/// untouched.
pub fn smooth_variance(
    specs: &[DistSpec],
    cap_quantile: f64,
    dt: f64,
) -> Result<Vec<DistSpec>, GenError> {
    if !(cap_quantile > 0.5 && cap_quantile < 1.0) {
        return Err(GenError::BadParams(format!("cap_quantile {cap_quantile} outside (0.5, 1)")));
    }
    let variances: Vec<f64> = specs.iter().map(|s| s.variance_steps(dt)).collect();
    let mut sorted = variances.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((cap_quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    let cap = sorted[idx];

    let smoothed = specs
        .iter()
        .zip(&variances)
        .map(|(spec, &var)| {
            if var <= cap || var == 0.0 {
                return spec.clone();
            }
            let f = (cap / var).sqrt();
            match spec {
                DistSpec::Gamma(g) => DistSpec::Gamma(GammaSpec { scale: g.scale * f, ..*g }),
                DistSpec::NormalMixture(m) => {
                    let mean: f64 = m.components.iter().map(|c| c.weight * c.mu).sum();
                    let mut out = m.clone();
                    for c in &mut out.components {
                        c.sigma *= f;
                        c.mu = mean + (c.mu - mean) * f;
                    }
                    DistSpec::NormalMixture(out)
                }
            }
        })
        .collect();
    Ok(smoothed)
}
