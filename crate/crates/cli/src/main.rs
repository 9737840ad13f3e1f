use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sota_core::bench::{
    rank_sweep, run_benchmark, variance_export, write_csv, BenchConfig, Technique,
    TechniqueParams,
};
use sota_core::datagen::{
    base_specs, generate, make_grid, smooth_variance, GenSetting, GenSettings,
};
use sota_core::dist::{DistSpec, GammaSpec};
use sota_core::graph::{NodeId, StochasticGraph, Topology, WeightView};
use sota_core::io::{
    read_dists, read_graph, read_policy, write_dists, write_graph, write_policy, write_pruneset,
};
use sota_core::pruning::{PenaltyParams, ViaParams};
use sota_core::solver::{
    budget_for_probability, simulate_policy, solve_label_setting, ConvMethod,
};

#[derive(Parser)]
#[command(
    name = "sota",
    version,
    about = "Stochastic on-time arrival routing with alternative-route pruning"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a bidirected grid graph and its base distribution file.
    GenGrid(GenGridArgs),
    /// Perturb a base distribution file with one of the random settings.
    GenDist(GenDistArgs),
    /// Solve one policy query and export the policy table.
    Solve(SolveArgs),
    /// Build a pruning subgraph and list its nodes.
    Prune(PruneArgs),
    /// Monte Carlo validation of an exported policy.
    Simulate(SimulateArgs),
    /// Run a query batch and emit the benchmark CSV.
    Bench(BenchArgs),
    /// Benchmark queries grouped by Dijkstra rank of the target.
    RankSweep(RankSweepArgs),
    /// Export per-arc distribution scalars as CSV.
    VarianceExport(VarianceExportArgs),
}

#[derive(Args)]
struct InstanceArgs {
    /// Graph file (header `nodes <n> arcs <m>`, then `from to` lines).
    #[arg(long)]
    graph: PathBuf,
    /// Distribution file, one line per arc.
    #[arg(long)]
    dists: PathBuf,
    /// Seconds per grid step for normal-mixture components.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Discretization tail mass cut before renormalization.
    #[arg(long, default_value_t = 1e-6)]
    tail_eps: f64,
}

#[derive(Args)]
struct TechniqueArgs {
    /// Weight view deterministic searches evaluate (freeflow|mean|max).
    #[arg(long, default_value = "mean", value_parser = parse_view)]
    view: WeightView,
    /// Via: allowed detour as a fraction of the shortest distance.
    #[arg(long, default_value_t = 0.25)]
    stretch_eps: f64,
    /// Via: allowed overlap with the shortest path as a fraction.
    #[arg(long, default_value_t = 0.8)]
    sharing_gamma: f64,
    /// Penalty: iteration rounds.
    #[arg(long, default_value_t = 10)]
    penalty_rounds: u32,
    /// Penalty: multiplier for arcs on a found path.
    #[arg(long, default_value_t = 1.4)]
    penalty_factor: f64,
    /// Penalty: skip penalizing arcs incident to path nodes.
    #[arg(long)]
    no_adjoint: bool,
    /// Penalty: multiplier for adjoint arcs.
    #[arg(long, default_value_t = 1.1)]
    adjoint_factor: f64,
    /// Penalty: stop once a found path exceeds this stretch.
    #[arg(long, default_value_t = 0.25)]
    stop_stretch: f64,
}

impl TechniqueArgs {
    fn build(&self) -> TechniqueParams {
        TechniqueParams {
            view: self.view,
            via: ViaParams {
                stretch_eps: self.stretch_eps,
                sharing_gamma: self.sharing_gamma,
                views: vec![self.view],
            },
            penalty: PenaltyParams {
                rounds: self.penalty_rounds,
                penalty_factor: self.penalty_factor,
                adjoint: !self.no_adjoint,
                adjoint_factor: self.adjoint_factor,
                stop_stretch: self.stop_stretch,
            },
        }
    }
}

fn parse_view(s: &str) -> Result<WeightView, String> {
    match s {
        "freeflow" => Ok(WeightView::FreeFlow),
        "mean" => Ok(WeightView::Mean),
        "max" => Ok(WeightView::Max),
        other => Err(format!("unknown view '{other}' (freeflow|mean|max)")),
    }
}

#[derive(Args)]
struct GenGridArgs {
    #[arg(long)]
    width: u32,
    #[arg(long)]
    height: u32,
    /// Minimum free-flow steps per arc.
    #[arg(long, default_value_t = 1)]
    ff_min: u32,
    /// Maximum free-flow steps per arc.
    #[arg(long, default_value_t = 5)]
    ff_max: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    graph_out: PathBuf,
    /// Base distribution file: unit gammas shifted by the free-flow steps.
    #[arg(long)]
    dists_out: PathBuf,
}

#[derive(Args)]
struct GenDistArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Starting distribution state (gamma lines only for round settings).
    #[arg(long)]
    base: PathBuf,
    /// Named preset graph1..graph5, overrides setting/rounds/paths/hotspots.
    #[arg(long)]
    preset: Option<String>,
    /// random-paths|random-shuffle|hotspots|random-arcs|random-arc-distributions
    #[arg(long)]
    setting: Option<String>,
    #[arg(long, default_value_t = 10)]
    rounds: u32,
    #[arg(long, default_value_t = 1000)]
    paths: u32,
    #[arg(long, default_value_t = 10)]
    hotspots: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplier for parameters of arcs unused in a round.
    #[arg(long, default_value_t = 0.9)]
    decrease_factor: f64,
    /// Counter value at which the additive penalty saturates.
    #[arg(long, default_value_t = 5.0)]
    saturation: f64,
    /// Cap arc variances at this network quantile after generation.
    #[arg(long)]
    smooth_quantile: Option<f64>,
    /// Seconds per step (used when smoothing mixture lines).
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long)]
    source: NodeId,
    #[arg(long)]
    target: NodeId,
    /// Absolute budget in steps; overrides --budget-factor.
    #[arg(long)]
    budget: Option<u32>,
    /// Budget as a multiple of the free-flow distance.
    #[arg(long, default_value_t = 3.0)]
    budget_factor: f64,
    /// Restrict the solve to a technique's subgraph.
    #[arg(long, default_value = "full")]
    technique: Technique,
    #[command(flatten)]
    tech: TechniqueArgs,
    /// Evaluate convolution products through the FFT.
    #[arg(long)]
    fft: bool,
    /// Policy export destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long)]
    source: NodeId,
    #[arg(long)]
    target: NodeId,
    #[arg(long)]
    technique: Technique,
    #[command(flatten)]
    tech: TechniqueArgs,
    /// Node list destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Policy file produced by `solve`.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    source: NodeId,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Repeatable: full|corridor:K|penalty|via|via-mix.
    #[arg(long = "technique", required = true)]
    techniques: Vec<Technique>,
    #[arg(long, default_value_t = 100)]
    queries: u32,
    #[arg(long, default_value_t = 3.0)]
    budget_factor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tech: TechniqueArgs,
    #[arg(long)]
    fft: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankSweepArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Comma-separated Dijkstra ranks, e.g. 2,8,32,128.
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<u64>,
    #[arg(long, default_value_t = 10)]
    queries_per_rank: u32,
    #[arg(long)]
    technique: Technique,
    #[arg(long, default_value_t = 3.0)]
    budget_factor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tech: TechniqueArgs,
    #[arg(long)]
    fft: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VarianceExportArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long)]
    out: PathBuf,
}

fn load_topology(path: &Path) -> Result<Topology> {
    let file = File::open(path).with_context(|| format!("open {}", path.display()))?;
    read_graph(BufReader::new(file)).with_context(|| format!("parse {}", path.display()))
}

fn load_specs(path: &Path, topo: &Topology) -> Result<Vec<DistSpec>> {
    let file = File::open(path).with_context(|| format!("open {}", path.display()))?;
    read_dists(BufReader::new(file), topo).with_context(|| format!("parse {}", path.display()))
}

fn load_instance(args: &InstanceArgs) -> Result<StochasticGraph> {
    let topo = load_topology(&args.graph)?;
    let specs = load_specs(&args.dists, &topo)?;
    let mut pdfs = Vec::with_capacity(specs.len());
    for (arc, spec) in specs.iter().enumerate() {
        let (u, v) = topo.arc(arc);
        let pdf = spec
            .discretize(args.tail_eps, args.dt)
            .with_context(|| format!("discretize distribution of arc {u} -> {v}"))?;
        pdfs.push(pdf);
    }
    Ok(StochasticGraph::new(topo, pdfs))
}

fn check_node(g: &StochasticGraph, what: &str, u: NodeId) -> Result<()> {
    if (u as usize) < g.node_count() {
        Ok(())
    } else {
        bail!("{what} {u} out of range (graph has {} nodes)", g.node_count())
    }
}

fn out_writer(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("create {}", p.display()))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn parse_setting(args: &GenDistArgs) -> Result<Option<GenSettings>> {
    if let Some(name) = &args.preset {
        let settings = GenSettings::preset(name, args.seed)
            .with_context(|| format!("unknown preset '{name}' (graph1..graph5)"))?;
        return Ok(Some(settings));
    }
    let Some(setting) = &args.setting else {
        return Ok(None);
    };
    let setting = match setting.as_str() {
        "random-paths" => GenSetting::RandomPaths { paths: args.paths },
        "random-shuffle" => GenSetting::RandomShuffle,
        "hotspots" => GenSetting::Hotspots { paths: args.paths, hotspots: args.hotspots },
        "random-arcs" => GenSetting::RandomArcs { paths: args.paths },
        "random-arc-distributions" => GenSetting::RandomArcDistributions,
        other => bail!("unknown setting '{other}'"),
    };
    let mut settings = GenSettings::new(setting, args.rounds, args.seed);
    settings.decrease_factor = args.decrease_factor;
    settings.saturation = args.saturation;
    Ok(Some(settings))
}

fn gamma_base(specs: &[DistSpec]) -> Result<Vec<GammaSpec>> {
    specs
        .iter()
        .map(|s| match s {
            DistSpec::Gamma(g) => Ok(g.clone()),
            DistSpec::NormalMixture(_) => {
                bail!("round-based settings need an all-gamma base file")
            }
        })
        .collect()
}

fn run_gen_grid(args: GenGridArgs) -> Result<()> {
    let (topo, free_flow) =
        make_grid(args.width, args.height, (args.ff_min, args.ff_max), args.seed)?;
    let mut gw = BufWriter::new(
        File::create(&args.graph_out)
            .with_context(|| format!("create {}", args.graph_out.display()))?,
    );
    write_graph(&mut gw, &topo)?;
    let specs: Vec<DistSpec> = base_specs(&free_flow).into_iter().map(DistSpec::Gamma).collect();
    let mut dw = BufWriter::new(
        File::create(&args.dists_out)
            .with_context(|| format!("create {}", args.dists_out.display()))?,
    );
    write_dists(&mut dw, &topo, &specs)?;
    println!(
        "grid {}x{}: {} nodes, {} arcs",
        args.width,
        args.height,
        topo.node_count(),
        topo.arc_count()
    );
    Ok(())
}

fn run_gen_dist(args: GenDistArgs) -> Result<()> {
    let topo = load_topology(&args.graph)?;
    let base = load_specs(&args.base, &topo)?;
    let mut specs = match parse_setting(&args)? {
        Some(settings) => {
            let gamma = gamma_base(&base)?;
            let (out, report) = generate(&topo, &gamma, &settings)?;
            println!(
                "setting {}: {} rounds, {} paths attempted, {} skipped",
                settings.setting.label(),
                settings.rounds,
                report.attempted_paths,
                report.skipped_paths
            );
            out.into_iter().map(DistSpec::Gamma).collect()
        }
        None => base,
    };
    if let Some(q) = args.smooth_quantile {
        specs = smooth_variance(&specs, q, args.dt)?;
        println!("smoothed variances at quantile {q}");
    }
    let mut w = BufWriter::new(
        File::create(&args.out).with_context(|| format!("create {}", args.out.display()))?,
    );
    write_dists(&mut w, &topo, &specs)?;
    Ok(())
}

fn build_mask(
    g: &StochasticGraph,
    s: NodeId,
    t: NodeId,
    technique: Technique,
    params: &TechniqueParams,
) -> Result<Option<sota_core::pruning::PruneSet>> {
    use sota_core::pruning::{corridor, penalty_alternative_graph, via_alternative_graph};
    let set = match technique {
        Technique::Full => return Ok(None),
        Technique::Corridor(k) => corridor(g, s, t, k, params.view)?,
        Technique::Penalty => penalty_alternative_graph(g, s, t, &params.penalty, params.view)?,
        Technique::Via => via_alternative_graph(
            g,
            s,
            t,
            &ViaParams { views: vec![params.view], ..params.via.clone() },
        )?,
        Technique::ViaMix => via_alternative_graph(
            g,
            s,
            t,
            &ViaParams {
                views: vec![WeightView::FreeFlow, WeightView::Mean, WeightView::Max],
                ..params.via.clone()
            },
        )?,
    };
    Ok(Some(set))
}

fn run_solve(args: SolveArgs) -> Result<()> {
    let g = load_instance(&args.instance)?;
    let (s, t) = (args.source, args.target);
    check_node(&g, "source", s)?;
    check_node(&g, "target", t)?;
    let dff = g.free_flow_dist(s, t);
    if dff == sota_core::graph::INF {
        bail!("target {t} unreachable from {s}");
    }
    let budget = match args.budget {
        Some(b) => b,
        None => ((args.budget_factor * dff as f64).ceil() as u32).max(1),
    };
    let params = args.tech.build();
    let mask = build_mask(&g, s, t, args.technique, &params)?;
    let conv = if args.fft { ConvMethod::Fft } else { ConvMethod::Direct };
    let (policy, stats) = solve_label_setting(&g, t, budget, mask.as_ref(), conv)?;
    eprintln!(
        "solved {} -> {} budget {} ({} free-flow): {} convolutions, {} order steps, {} nodes, {:.1} ms",
        s, t, budget, dff, stats.convolutions, stats.order_len, stats.touched_nodes, stats.wall_ms
    );
    eprintln!("prob_s(T) = {:.9}", policy.prob(s, budget));
    for p in [0.25, 0.5, 0.75, 1.0] {
        match budget_for_probability(&g, &policy, s, p) {
            Ok(f) => eprintln!("budget factor for {:>3.0}%: {f:.3}", p * 100.0),
            Err(_) => eprintln!("budget factor for {:>3.0}%: budget insufficient", p * 100.0),
        }
    }
    let mut w = out_writer(args.out.as_ref())?;
    write_policy(&mut w, &policy)?;
    Ok(())
}

fn run_prune(args: PruneArgs) -> Result<()> {
    let g = load_instance(&args.instance)?;
    check_node(&g, "source", args.source)?;
    check_node(&g, "target", args.target)?;
    if g.free_flow_dist(args.source, args.target) == sota_core::graph::INF {
        bail!("target {} unreachable from {}", args.target, args.source);
    }
    let params = args.tech.build();
    let Some(set) = build_mask(&g, args.source, args.target, args.technique, &params)? else {
        bail!("'full' retains every node; pick a pruning technique");
    };
    eprintln!(
        "{}: {} of {} nodes ({:.2}%)",
        set.provenance,
        set.node_count(),
        g.node_count(),
        set.retained_pct()
    );
    let mut w = out_writer(args.out.as_ref())?;
    write_pruneset(&mut w, &set)?;
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let g = load_instance(&args.instance)?;
    let file =
        File::open(&args.policy).with_context(|| format!("open {}", args.policy.display()))?;
    let policy = read_policy(BufReader::new(file))?;
    if policy.node_count() != g.node_count() {
        bail!(
            "policy covers {} nodes but the graph has {}",
            policy.node_count(),
            g.node_count()
        );
    }
    check_node(&g, "source", args.source)?;
    let sim = simulate_policy(&g, &policy, args.source, args.samples, args.seed)?;
    let predicted = policy.prob(args.source, policy.budget);
    println!(
        "empirical {:.6} [{:.6}, {:.6}] over {} samples; policy predicts {:.6}",
        sim.success_rate, sim.ci_low, sim.ci_high, sim.samples, predicted
    );
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let g = load_instance(&args.instance)?;
    let mut cfg = BenchConfig::new(args.techniques.clone(), args.queries, args.seed);
    cfg.budget_factor = args.budget_factor;
    cfg.conv = if args.fft { ConvMethod::Fft } else { ConvMethod::Direct };
    cfg.params = args.tech.build();
    let out = run_benchmark(&g, &cfg)?;
    let mut w = out_writer(Some(&args.out))?;
    write_csv(&mut w, &out)?;
    eprintln!(
        "{} queries ({} resampled), {} rows -> {}",
        args.queries,
        out.resampled_pairs,
        out.records.len(),
        args.out.display()
    );
    for s in &out.summaries {
        eprintln!(
            "  {:<14} order {:>6.2}% of classic, max error {:.4}",
            s.technique,
            100.0 * s.mean_order_ratio_vs_classic,
            s.mean_max_error
        );
    }
    Ok(())
}

fn run_rank_sweep(args: RankSweepArgs) -> Result<()> {
    let g = load_instance(&args.instance)?;
    let mut cfg = BenchConfig::new(vec![args.technique], args.queries_per_rank, args.seed);
    cfg.budget_factor = args.budget_factor;
    cfg.conv = if args.fft { ConvMethod::Fft } else { ConvMethod::Direct };
    cfg.params = args.tech.build();
    let out = rank_sweep(&g, &args.ranks, args.queries_per_rank, &cfg)?;
    let mut w = out_writer(Some(&args.out))?;
    write_csv(&mut w, &out)?;
    eprintln!("ranks {:?} -> {}", args.ranks, args.out.display());
    Ok(())
}

fn run_variance_export(args: VarianceExportArgs) -> Result<()> {
    let g = load_instance(&args.instance)?;
    let mut w = out_writer(Some(&args.out))?;
    variance_export(&mut w, &g)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenGrid(args) => run_gen_grid(args),
        Cmd::GenDist(args) => run_gen_dist(args),
        Cmd::Solve(args) => run_solve(args),
        Cmd::Prune(args) => run_prune(args),
        Cmd::Simulate(args) => run_simulate(args),
        Cmd::Bench(args) => run_bench(args),
        Cmd::RankSweep(args) => run_rank_sweep(args),
        Cmd::VarianceExport(args) => run_variance_export(args),
    }
}
