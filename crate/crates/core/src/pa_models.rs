//! Sequential preferential attachment multigraphs, models (a), (b) and (d).
//!
//! Vertex `v >= 3` arrives with `m` edges placed one at a time. Edge `j` of
//! vertex `v` attaches to an older vertex `u` with weight `d_u + delta`; the
//! variants differ only in the self-loop weight:
//!
//! | variant | self-loop weight          | normalizer `c_{v,j}`                              |
//! |---------|---------------------------|---------------------------------------------------|
//! | A       | `d_v + 1 + j*delta/m`     | `a + 2δ + (2m+δ)(v-3) + 2(j-1) + 1 + jδ/m`        |
//! | B       | `d_v + (j-1)*delta/m`     | `a + 2δ + (2m+δ)(v-3) + 2(j-1) + (j-1)δ/m`        |
//! | D       | none                      | `a + 2δ + (2m+δ)(v-3) + (j-1)`                    |
//!
//! where `a = a1 + a2` is the total degree of the initial two-vertex graph.
//! Degrees count self-loops twice.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    A,
    B,
    D,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::A => "a",
            Variant::B => "b",
            Variant::D => "d",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Variant::A),
            "b" => Ok(Variant::B),
            "d" => Ok(Variant::D),
            other => Err(Error::Parameter(format!(
                "unknown variant {other:?} (expected a, b or d)"
            ))),
        }
    }
}

/// Model parameters plus the initial two-vertex graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaConfig {
    pub variant: Variant,
    pub m: u32,
    pub delta: f64,
    pub n: usize,
    /// Edges among vertices {1, 2}, 1-indexed. Defaults to `m` parallel edges 1-2.
    pub initial_edges: Vec<(u32, u32)>,
    pub seed: u64,
}

impl PaConfig {
    pub fn new(variant: Variant, m: u32, delta: f64, n: usize, seed: u64) -> Self {
        PaConfig {
            variant,
            m,
            delta,
            n,
            initial_edges: vec![(1, 2); m as usize],
            seed,
        }
    }

    pub fn with_initial_edges(mut self, edges: Vec<(u32, u32)>) -> Self {
        self.initial_edges = edges;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    /// Initial degrees `(a1, a2)`.
    pub fn initial_degrees(&self) -> (u64, u64) {
        let mut d = [0u64; 2];
        for &(u, v) in &self.initial_edges {
            if (1..=2).contains(&u) && (1..=2).contains(&v) {
                d[(u - 1) as usize] += 1;
                d[(v - 1) as usize] += 1;
            }
        }
        (d[0], d[1])
    }

    pub fn initial_total_degree(&self) -> u64 {
        let (a1, a2) = self.initial_degrees();
        a1 + a2
    }

    /// Every constraint breach, in a fixed order. Empty means valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let m = self.m as f64;
        if self.m < 1 {
            out.push("m must be at least 1".to_string());
        }
        if !self.delta.is_finite() || self.delta <= -m {
            out.push(format!(
                "delta must exceed -m (got delta = {}, m = {})",
                self.delta, self.m
            ));
        }
        if self.n < 2 {
            out.push(format!("n must be at least 2 (got {})", self.n));
        }
        if self.n > u32::MAX as usize {
            out.push("n must fit in 32 bits".to_string());
        }
        for &(u, v) in &self.initial_edges {
            if !(1..=2).contains(&u) || !(1..=2).contains(&v) {
                out.push(format!("initial edge ({u}, {v}) must join vertices 1 and 2"));
            }
        }
        let (a1, a2) = self.initial_degrees();
        if a1.min(a2) > self.m as u64 {
            out.push(format!(
                "at least one initial vertex must have degree at most m (a1 = {a1}, a2 = {a2})"
            ));
        }
        if self.delta.is_finite() {
            if (a1 as f64) + self.delta < 0.0 || (a2 as f64) + self.delta < 0.0 {
                out.push("initial degrees plus delta must be non-negative".to_string());
            }
            if (a1 + a2) as f64 + 2.0 * self.delta <= 0.0 {
                out.push("a1 + a2 + 2 delta must be positive".to_string());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(v.join("; ")))
        }
    }
}

/// Undirected multigraph with self-loops; vertices are `0..n_vertices`
/// internally and 1-indexed in serialized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiGraph {
    pub n_vertices: usize,
    /// `(u, v)` with `u <= v`; `u == v` is a self-loop.
    pub edges: Vec<(u32, u32)>,
    pub degrees: Vec<u32>,
}

impl MultiGraph {
    /// Builds a graph from an edge list, normalizing pairs to `u <= v`.
    pub fn from_edges(n_vertices: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut degrees = vec![0u32; n_vertices];
        let edges: Vec<(u32, u32)> = edges
            .into_iter()
            .map(|(u, v)| {
                degrees[u as usize] += 1;
                degrees[v as usize] += 1;
                (u.min(v), u.max(v))
            })
            .collect();
        MultiGraph {
            n_vertices,
            edges,
            degrees,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn total_degree(&self) -> u64 {
        self.degrees.iter().map(|&d| d as u64).sum()
    }

    pub fn self_loops(&self) -> usize {
        self.edges.iter().filter(|(u, v)| u == v).count()
    }

    /// Adjacency lists with multiplicity, self-loops omitted.
    pub fn neighbors(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.n_vertices];
        for &(u, v) in &self.edges {
            if u != v {
                adj[u as usize].push(v);
                adj[v as usize].push(u);
            }
        }
        adj
    }
}

/// Normalizer `c_{v,j}` for 1-indexed vertex `v >= 3` and edge `1 <= j <= m`.
pub fn normalizer(variant: Variant, m: u32, delta: f64, initial_total: u64, v: usize, j: u32) -> f64 {
    let m_f = m as f64;
    let j_f = j as f64;
    let base = initial_total as f64 + 2.0 * delta + (2.0 * m_f + delta) * (v as f64 - 3.0);
    match variant {
        Variant::A => base + 2.0 * (j_f - 1.0) + 1.0 + j_f * delta / m_f,
        Variant::B => base + 2.0 * (j_f - 1.0) + (j_f - 1.0) * delta / m_f,
        Variant::D => base + (j_f - 1.0),
    }
}

/// Unnormalized self-loop weight of edge `j` given the current degree of the new vertex.
#[inline]
fn self_loop_weight(variant: Variant, m: u32, delta: f64, d_self: u64, j: u32) -> f64 {
    let (m_f, j_f) = (m as f64, j as f64);
    match variant {
        Variant::A => d_self as f64 + 1.0 + j_f * delta / m_f,
        Variant::B => d_self as f64 + (j_f - 1.0) * delta / m_f,
        Variant::D => 0.0,
    }
}

/// Exact attachment law of edge `j` of vertex `v`.
///
/// `degrees[u-1]` is the degree of vertex `u` in the partial graph, for
/// `u = 1..=v`; the last entry is the new vertex (self-loop target). Returns a
/// probability vector of length `v`.
pub fn attachment_distribution(
    degrees: &[u64],
    j: u32,
    variant: Variant,
    m: u32,
    delta: f64,
    initial_total: u64,
) -> Result<Vec<f64>> {
    if delta <= -(m as f64) {
        return Err(Error::Parameter(format!("delta must exceed -m (got {delta})")));
    }
    let v = degrees.len();
    if v < 3 || j < 1 || j > m {
        return Err(Error::Structural(format!(
            "need v >= 3 and 1 <= j <= m (v = {v}, j = {j})"
        )));
    }
    let expected_total = initial_total + 2 * m as u64 * (v as u64 - 3) + 2 * (j as u64 - 1);
    let total: u64 = degrees.iter().sum();
    if total != expected_total {
        return Err(Error::Structural(format!(
            "degree sum {total} does not match a construction state (expected {expected_total})"
        )));
    }
    let d_self = degrees[v - 1];
    if d_self < j as u64 - 1 {
        return Err(Error::Structural(format!(
            "new vertex has degree {d_self} after {} edges",
            j - 1
        )));
    }
    if variant == Variant::D && d_self != j as u64 - 1 {
        return Err(Error::Structural(
            "model (d) state contains a self-loop on the new vertex".into(),
        ));
    }
    let c = normalizer(variant, m, delta, initial_total, v, j);
    let mut p: Vec<f64> = degrees[..v - 1].iter().map(|&d| (d as f64 + delta) / c).collect();
    p.push(self_loop_weight(variant, m, delta, d_self, j) / c);
    if p.iter().any(|&x| x < 0.0) {
        return Err(Error::Structural("negative attachment weight".into()));
    }
    Ok(p)
}

/// Fenwick tree over f64 weights supporting prefix search.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<f64>,
    top: usize,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        let top = if n == 0 {
            0
        } else {
            1usize << (usize::BITS - 1 - n.leading_zeros())
        };
        Fenwick {
            tree: vec![0.0; n + 1],
            top,
        }
    }

    fn add(&mut self, idx: usize, w: f64) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += w;
            i += i & i.wrapping_neg();
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `x`.
    fn search(&self, mut x: f64) -> usize {
        let mut pos = 0;
        let mut step = self.top;
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= x {
                pos = next;
                x -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// One placed edge, reported to generation observers.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    /// New vertex, 1-indexed.
    pub v: usize,
    pub j: u32,
    /// Degree of the new vertex before this edge.
    pub d_self: u64,
    /// Target, 1-indexed (`== v` for a self-loop).
    pub target: usize,
}

pub fn generate(config: &PaConfig) -> Result<MultiGraph> {
    let mut rng = StreamRng::new(config.seed);
    generate_with(config, &mut rng, |_| {})
}

/// Sequential generation drawing from `rng`; `observe` sees every placed edge.
pub fn generate_with(config: &PaConfig, rng: &mut StreamRng, mut observe: impl FnMut(StepInfo)) -> Result<MultiGraph> {
    config.validate()?;
    let n = config.n;
    let m = config.m;
    let delta = config.delta;
    let mut degrees = vec![0u32; n];
    let mut edges = Vec::with_capacity(config.initial_edges.len() + m as usize * n.saturating_sub(2));
    for &(u, v) in &config.initial_edges {
        let (a, b) = ((u.min(v) - 1), (u.max(v) - 1));
        degrees[a as usize] += 1;
        degrees[b as usize] += 1;
        edges.push((a, b));
    }

    let mut fen = Fenwick::new(n);
    let mut old_total = 0.0;
    for (u, &d) in degrees.iter().enumerate().take(2) {
        let w = d as f64 + delta;
        fen.add(u, w);
        old_total += w;
    }

    for v in 2..n {
        for j in 1..=m {
            let d_self = degrees[v] as u64;
            let self_w = self_loop_weight(config.variant, m, delta, d_self, j);
            let x = rng.uniform() * (old_total + self_w);
            let target = if x < old_total { fen.search(x).min(v - 1) } else { v };
            observe(StepInfo {
                v: v + 1,
                j,
                d_self,
                target: target + 1,
            });
            degrees[target] += 1;
            degrees[v] += 1;
            if target < v {
                fen.add(target, 1.0);
                old_total += 1.0;
            }
            edges.push((target as u32, v as u32));
        }
        let w = degrees[v] as f64 + delta;
        fen.add(v, w);
        old_total += w;
    }

    Ok(MultiGraph {
        n_vertices: n,
        edges,
        degrees,
    })
}

pub fn degree_histogram(graph: &MultiGraph) -> BTreeMap<u32, usize> {
    let mut h = BTreeMap::new();
    for &d in &graph.degrees {
        *h.entry(d).or_insert(0) += 1;
    }
    h
}

/// Header of the text serialization: `n m delta variant seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphHeader {
    pub n: usize,
    pub m: u32,
    pub delta: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl From<&PaConfig> for GraphHeader {
    fn from(c: &PaConfig) -> Self {
        GraphHeader {
            n: c.n,
            m: c.m,
            delta: c.delta,
            variant: c.variant,
            seed: c.seed,
        }
    }
}

/// Writes the header line and one 1-indexed `u v` line per edge.
pub fn write_graph<W: Write>(mut w: W, header: &GraphHeader, graph: &MultiGraph) -> Result<()> {
    writeln!(
        w,
        "{} {} {} {} {}",
        header.n, header.m, header.delta, header.variant, header.seed
    )?;
    for &(u, v) in &graph.edges {
        writeln!(w, "{} {}", u + 1, v + 1)?;
    }
    Ok(())
}

/// Parses the text format. Blank lines and lines starting with `#` are skipped.
pub fn read_graph<R: BufRead>(r: R) -> Result<(GraphHeader, MultiGraph)> {
    let mut lines = r
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty() || s.starts_with('#')));
    let (head_line, head) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let head = head?;
    let f: Vec<&str> = head.split_whitespace().collect();
    let bad = |msg: &str| Error::Parse {
        line: head_line,
        msg: msg.to_string(),
    };
    if f.len() != 5 {
        return Err(bad("header must be `n m delta variant seed`"));
    }
    let header = GraphHeader {
        n: f[0].parse().map_err(|_| bad("n"))?,
        m: f[1].parse().map_err(|_| bad("m"))?,
        delta: f[2].parse().map_err(|_| bad("delta"))?,
        variant: f[3].parse()?,
        seed: f[4].parse().map_err(|_| bad("seed"))?,
    };
    let mut edges = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        let mut it = line.split_whitespace().map(|s| s.parse::<u32>());
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(u)), Some(Ok(v)), None) if u >= 1 && v >= 1 && (u.max(v) as usize) <= header.n => {
                edges.push((u - 1, v - 1))
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("bad edge line {line:?}"),
                })
            }
        }
    }
    Ok((header.clone(), MultiGraph::from_edges(header.n, edges)))
}
