//! Line-oriented file formats.
//!
//! Graph file: header `nodes <n> arcs <m>`, then one `from to` line per arc
//! (0-based ids). Scalar weight views are derived from the distribution
//! file, never stored here.
//!
//! Distribution file, one line per arc, every arc exactly once:
//! `from to gamma <shape> <scale> <shift>` or
//! `from to nm <K> <w1> <mu1> <sigma1> ...` with mu/sigma in seconds and
//! shift in steps. The seconds-per-step factor is supplied at load time.
//!
//! Policy export (unstable format, for the simulator and debugging):
//! header `policy target <t> budget <T> nodes <n>`, then `u tau prob next`
//! lines at every step where the pair changed; `-` marks an undefined
//! successor.

use std::fmt;
use std::io::{BufRead, Write};

use crate::dist::{DistSpec, GammaSpec, MixtureComponent, NormalMixtureSpec};
use crate::graph::{NodeId, Topology};
use crate::pruning::PruneSet;
use crate::solver::{Policy, NO_NEXT};

#[derive(Debug)]
pub enum FileError {
    Io(std::io::Error),
    Line { line: usize, msg: String },
    Incomplete { msg: String },
}

impl fmt::Display for FileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileError::Io(e) => write!(f, "io error: {e}"),
            FileError::Line { line, msg } => write!(f, "line {line}: {msg}"),
            FileError::Incomplete { msg } => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for FileError {}

impl From<std::io::Error> for FileError {
    fn from(e: std::io::Error) -> Self {
        FileError::Io(e)
    }
}

fn line_err(line: usize, msg: impl Into<String>) -> FileError {
    FileError::Line { line, msg: msg.into() }
}

struct Fields<'a> {
    parts: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> Fields<'a> {
    fn new(text: &'a str, line: usize) -> Self {
        Fields { parts: text.split_whitespace(), line }
    }

    fn next_str(&mut self, what: &str) -> Result<&'a str, FileError> {
        self.parts.next().ok_or_else(|| line_err(self.line, format!("missing {what}")))
    }

    fn next_parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, FileError> {
        let raw = self.next_str(what)?;
        raw.parse().map_err(|_| line_err(self.line, format!("cannot parse {what} from '{raw}'")))
    }

    fn expect_end(mut self) -> Result<(), FileError> {
        match self.parts.next() {
            None => Ok(()),
            Some(extra) => Err(line_err(self.line, format!("unexpected trailing field '{extra}'"))),
        }
    }
}

pub fn write_graph<W: Write>(w: &mut W, topo: &Topology) -> std::io::Result<()> {
    writeln!(w, "nodes {} arcs {}", topo.node_count(), topo.arc_count())?;
    for &(u, v) in topo.arcs() {
        writeln!(w, "{u} {v}")?;
    }
    Ok(())
}

pub fn read_graph<R: BufRead>(r: R) -> Result<Topology, FileError> {
    let mut lines = r.lines().enumerate();
    let (idx, header) = lines
        .next()
        .ok_or(FileError::Incomplete { msg: "empty graph file".into() })?;
    let header = header?;
    let mut f = Fields::new(&header, idx + 1);
    if f.next_str("header keyword")? != "nodes" {
        return Err(line_err(idx + 1, "expected header 'nodes <n> arcs <m>'"));
    }
    let n: usize = f.next_parse("node count")?;
    if f.next_str("header keyword")? != "arcs" {
        return Err(line_err(idx + 1, "expected header 'nodes <n> arcs <m>'"));
    }
    let m: usize = f.next_parse("arc count")?;
    f.expect_end()?;

    let mut arcs = Vec::with_capacity(m);
    let mut seen = std::collections::HashSet::with_capacity(m);
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if arcs.len() == m {
            return Err(line_err(lineno, format!("more than the declared {m} arcs")));
        }
        let mut f = Fields::new(&line, lineno);
        let u: NodeId = f.next_parse("from node")?;
        let v: NodeId = f.next_parse("to node")?;
        f.expect_end()?;
        if u as usize >= n || v as usize >= n {
            return Err(line_err(lineno, format!("node id out of range (graph has {n} nodes)")));
        }
        if u == v {
            return Err(line_err(lineno, format!("self-loop at node {u}")));
        }
        if !seen.insert((u, v)) {
            return Err(line_err(lineno, format!("duplicate arc {u} -> {v}")));
        }
        arcs.push((u, v));
    }
    if arcs.len() != m {
        return Err(FileError::Incomplete {
            msg: format!("expected {m} arcs, found {}", arcs.len()),
        });
    }
    Ok(Topology::new(n, arcs).expect("validated during parse"))
}

pub fn write_dists<W: Write>(
    w: &mut W,
    topo: &Topology,
    specs: &[DistSpec],
) -> std::io::Result<()> {
    assert_eq!(topo.arc_count(), specs.len());
    for (arc, spec) in specs.iter().enumerate() {
        let (u, v) = topo.arc(arc);
        match spec {
            DistSpec::Gamma(g) => {
                writeln!(w, "{u} {v} gamma {} {} {}", g.shape, g.scale, g.shift)?
            }
            DistSpec::NormalMixture(m) => {
                write!(w, "{u} {v} nm {}", m.components.len())?;
                for c in &m.components {
                    write!(w, " {} {} {}", c.weight, c.mu, c.sigma)?;
                }
                writeln!(w, " {}", m.shift)?;
            }
        }
    }
    Ok(())
}

/// Reads one distribution per arc; every arc of `topo` must appear exactly
/// once and unknown arcs are rejected with their line number.
pub fn read_dists<R: BufRead>(r: R, topo: &Topology) -> Result<Vec<DistSpec>, FileError> {
    let mut specs: Vec<Option<DistSpec>> = vec![None; topo.arc_count()];
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut f = Fields::new(&line, lineno);
        let u: NodeId = f.next_parse("from node")?;
        let v: NodeId = f.next_parse("to node")?;
        if u as usize >= topo.node_count() || v as usize >= topo.node_count() {
            return Err(line_err(lineno, "node id out of range"));
        }
        let arc = topo
            .arc_id(u, v)
            .ok_or_else(|| line_err(lineno, format!("graph has no arc {u} -> {v}")))?;
        if specs[arc].is_some() {
            return Err(line_err(lineno, format!("duplicate distribution for arc {u} -> {v}")));
        }
        let kind = f.next_str("distribution kind")?;
        let spec = match kind {
            "gamma" => {
                let shape: f64 = f.next_parse("shape")?;
                let scale: f64 = f.next_parse("scale")?;
                let shift: u32 = f.next_parse("shift")?;
                if shift == 0 {
                    return Err(line_err(lineno, "shift must be >= 1"));
                }
                DistSpec::Gamma(GammaSpec { shape, scale, shift })
            }
            "nm" => {
                let k: usize = f.next_parse("component count")?;
                if k == 0 {
                    return Err(line_err(lineno, "mixture needs at least one component"));
                }
                let mut components = Vec::with_capacity(k);
                for _ in 0..k {
                    let weight: f64 = f.next_parse("component weight")?;
                    let mu: f64 = f.next_parse("component mu")?;
                    let sigma: f64 = f.next_parse("component sigma")?;
                    components.push(MixtureComponent { weight, mu, sigma });
                }
                let shift: u32 = f.next_parse("shift")?;
                if shift == 0 {
                    return Err(line_err(lineno, "shift must be >= 1"));
                }
                DistSpec::NormalMixture(NormalMixtureSpec { components, shift })
            }
            other => return Err(line_err(lineno, format!("unknown distribution kind '{other}'"))),
        };
        f.expect_end()?;
        specs[arc] = Some(spec);
    }
    let missing = specs.iter().filter(|s| s.is_none()).count();
    if missing > 0 {
        let (u, v) = topo.arc(specs.iter().position(|s| s.is_none()).unwrap());
        return Err(FileError::Incomplete {
            msg: format!("{missing} arcs without a distribution, first is {u} -> {v}"),
        });
    }
    Ok(specs.into_iter().map(|s| s.unwrap()).collect())
}

pub fn write_pruneset<W: Write>(w: &mut W, set: &PruneSet) -> std::io::Result<()> {
    for u in set.iter_nodes() {
        writeln!(w, "node {u}")?;
    }
    Ok(())
}

/// Emits a policy as change-point lines; floats use shortest round-trip
/// formatting so a read-back reproduces the exact values.
pub fn write_policy<W: Write>(w: &mut W, policy: &Policy) -> std::io::Result<()> {
    writeln!(
        w,
        "policy target {} budget {} nodes {}",
        policy.target,
        policy.budget,
        policy.node_count()
    )?;
    for u in 0..policy.node_count() as NodeId {
        let mut prev = (0.0f64, None::<NodeId>);
        for tau in 0..=policy.budget {
            let cur = (policy.prob(u, tau), policy.next(u, tau));
            if cur != prev || (tau == 0 && cur.0 != 0.0) {
                match cur.1 {
                    Some(v) => writeln!(w, "{u} {tau} {} {v}", cur.0)?,
                    None => writeln!(w, "{u} {tau} {} -", cur.0)?,
                }
                prev = cur;
            }
        }
    }
    Ok(())
}

pub fn read_policy<R: BufRead>(r: R) -> Result<Policy, FileError> {
    let mut lines = r.lines().enumerate();
    let (idx, header) = lines
        .next()
        .ok_or(FileError::Incomplete { msg: "empty policy file".into() })?;
    let header = header?;
    let mut f = Fields::new(&header, idx + 1);
    if f.next_str("header keyword")? != "policy" || f.next_str("keyword")? != "target" {
        return Err(line_err(idx + 1, "expected 'policy target <t> budget <T> nodes <n>'"));
    }
    let target: NodeId = f.next_parse("target")?;
    if f.next_str("keyword")? != "budget" {
        return Err(line_err(idx + 1, "expected 'budget <T>'"));
    }
    let budget: u32 = f.next_parse("budget")?;
    if f.next_str("keyword")? != "nodes" {
        return Err(line_err(idx + 1, "expected 'nodes <n>'"));
    }
    let n: usize = f.next_parse("node count")?;
    f.expect_end()?;

    let len = budget as usize + 1;
    let mut prob = vec![vec![0.0f64; len]; n];
    let mut next = vec![vec![NO_NEXT; len]; n];
    let mut changes: Vec<Vec<(u32, f64, u32)>> = vec![Vec::new(); n];
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut f = Fields::new(&line, lineno);
        let u: usize = f.next_parse("node")?;
        let tau: u32 = f.next_parse("tau")?;
        let p: f64 = f.next_parse("prob")?;
        let next_str = f.next_str("next")?;
        let v = if next_str == "-" {
            NO_NEXT
        } else {
            next_str
                .parse()
                .map_err(|_| line_err(lineno, format!("cannot parse next from '{next_str}'")))?
        };
        f.expect_end()?;
        if u >= n || tau > budget {
            return Err(line_err(lineno, "node or budget out of range"));
        }
        changes[u].push((tau, p, v));
    }
    for (u, mut ch) in changes.into_iter().enumerate() {
        ch.sort_by_key(|&(tau, _, _)| tau);
        for &(tau, p, v) in &ch {
            for i in tau as usize..len {
                prob[u][i] = p;
                next[u][i] = v;
            }
        }
    }
    Ok(Policy::from_parts(target, budget, prob, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DiscretePdf;
    use crate::graph::StochasticGraph;
    use crate::solver::{solve_label_setting, ConvMethod};

    fn roundtrip_topo() -> Topology {
        Topology::new(4, vec![(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap()
    }

    #[test]
    fn graph_roundtrip() {
        let topo = roundtrip_topo();
        let mut buf = Vec::new();
        write_graph(&mut buf, &topo).unwrap();
        let back = read_graph(&buf[..]).unwrap();
        assert_eq!(back.node_count(), 4);
        assert_eq!(back.arcs(), topo.arcs());
    }

    #[test]
    fn graph_errors_carry_line_numbers() {
        let bad = b"nodes 2 arcs 2\n0 1\n0 1\n";
        match read_graph(&bad[..]) {
            Err(FileError::Line { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("expected duplicate-arc error, got {other:?}"),
        }
        let self_loop = b"nodes 2 arcs 1\n1 1\n";
        assert!(matches!(read_graph(&self_loop[..]), Err(FileError::Line { line: 2, .. })));
        let short = b"nodes 3 arcs 2\n0 1\n";
        assert!(matches!(read_graph(&short[..]), Err(FileError::Incomplete { .. })));
    }

    #[test]
    fn dists_roundtrip_bitexact() {
        let topo = roundtrip_topo();
        let specs = vec![
            DistSpec::Gamma(GammaSpec { shape: 1.25, scale: 0.333333333333, shift: 2 }),
            DistSpec::NormalMixture(NormalMixtureSpec {
                components: vec![
                    MixtureComponent { weight: 0.25, mu: 10.5, sigma: 2.0 },
                    MixtureComponent { weight: 0.75, mu: 30.0, sigma: 5.5 },
                ],
                shift: 3,
            }),
            DistSpec::Gamma(GammaSpec { shape: 9.99, scale: 10.0, shift: 1 }),
            DistSpec::Gamma(GammaSpec { shape: 0.01, scale: 0.01, shift: 7 }),
        ];
        let mut buf = Vec::new();
        write_dists(&mut buf, &topo, &specs).unwrap();
        let back = read_dists(&buf[..], &topo).unwrap();
        assert_eq!(back, specs);
    }

    #[test]
    fn dists_reject_unknown_duplicate_and_missing_arcs() {
        let topo = roundtrip_topo();
        let unknown = b"3 0 gamma 1 1 1\n";
        assert!(matches!(
            read_dists(&unknown[..], &topo),
            Err(FileError::Line { line: 1, .. })
        ));
        let dup = b"0 1 gamma 1 1 1\n0 1 gamma 2 2 2\n";
        assert!(matches!(read_dists(&dup[..], &topo), Err(FileError::Line { line: 2, .. })));
        let missing = b"0 1 gamma 1 1 1\n";
        assert!(matches!(read_dists(&missing[..], &topo), Err(FileError::Incomplete { .. })));
    }

    #[test]
    fn policy_roundtrip_is_exact() {
        let topo = Topology::new(3, vec![(0, 1), (1, 2), (0, 2)]).unwrap();
        let pdfs = vec![
            DiscretePdf::new(1, vec![0.5, 0.5]).unwrap(),
            DiscretePdf::point(2),
            DiscretePdf::new(2, vec![0.25, 0.25, 0.25, 0.25]).unwrap(),
        ];
        let g = StochasticGraph::new(topo, pdfs);
        let (policy, _) = solve_label_setting(&g, 2, 9, None, ConvMethod::Direct).unwrap();
        let mut buf = Vec::new();
        write_policy(&mut buf, &policy).unwrap();
        let back = read_policy(&buf[..]).unwrap();
        assert_eq!(back, policy);
    }

    #[test]
    fn pruneset_export_lists_nodes() {
        let set = PruneSet::from_flags(vec![true, false, true], "test");
        let mut buf = Vec::new();
        write_pruneset(&mut buf, &set).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "node 0\nnode 2\n");
    }
}
