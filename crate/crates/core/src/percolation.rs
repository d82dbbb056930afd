//! Bond percolation on multigraphs with a threshold coupling across retention
//! probabilities: each edge gets one uniform `U_e`, and is retained at `pi`
//! iff `U_e <= pi`. Parallel edges are independent bonds; self-loops are
//! percolated but never merge components.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pa_models::{generate_with, MultiGraph, PaConfig};
use crate::rng::{seed_stream, StreamRng};
use crate::stats::Moments;

const GRAPH_STREAM: u64 = 0;
const BOND_STREAM: u64 = 1;

/// Union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    /// Merges the sets of `a` and `b`; returns the size of the merged set.
    pub fn union(&mut self, a: u32, b: u32) -> u32 {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return self.size[ra as usize];
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        self.size[ra as usize]
    }

    /// Sizes of all sets, descending.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = (0..self.parent.len())
            .filter(|&i| self.parent[i] == i as u32)
            .map(|i| self.size[i] as usize)
            .collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }

    /// The two largest set sizes (second is 0 if there is one set).
    pub fn top_two(&self) -> (usize, usize) {
        let (mut a, mut b) = (0usize, 0usize);
        for i in 0..self.parent.len() {
            if self.parent[i] == i as u32 {
                let s = self.size[i] as usize;
                if s > a {
                    b = a;
                    a = s;
                } else if s > b {
                    b = s;
                }
            }
        }
        (a, b)
    }
}

/// One uniform in `(0, 1)` per edge, from the stream keyed by `seed`.
pub fn edge_uniforms(edge_count: usize, seed: u64) -> Vec<f64> {
    let rng = StreamRng::new(seed);
    (0..edge_count as u64)
        .map(|e| ((rng.at(e) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64))
        .collect()
}

/// Per-edge draws and the retained mask `{U_e <= pi}`.
pub fn percolate_mask(graph: &MultiGraph, pi: f64, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let u = edge_uniforms(graph.edge_count(), seed);
    let mask = u.iter().map(|&x| x <= pi).collect();
    (u, mask)
}

/// Component sizes (descending) of the subgraph of retained edges.
pub fn components(graph: &MultiGraph, mask: &[bool]) -> Vec<usize> {
    assert_eq!(mask.len(), graph.edge_count(), "mask length must equal edge count");
    let mut uf = UnionFind::new(graph.n_vertices);
    for (&(u, v), &keep) in graph.edges.iter().zip(mask) {
        if keep && u != v {
            uf.union(u, v);
        }
    }
    uf.sizes()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercolationOutcome {
    pub pi: f64,
    pub retained_edges: usize,
    pub component_sizes: Vec<usize>,
    pub c1_frac: f64,
    pub c2_frac: f64,
}

impl PercolationOutcome {
    pub fn from_sizes(pi: f64, retained_edges: usize, component_sizes: Vec<usize>) -> Self {
        let n: usize = component_sizes.iter().sum();
        let c1 = component_sizes.first().copied().unwrap_or(0);
        let c2 = component_sizes.get(1).copied().unwrap_or(0);
        PercolationOutcome {
            pi,
            retained_edges,
            c1_frac: c1 as f64 / n as f64,
            c2_frac: c2 as f64 / n as f64,
            component_sizes,
        }
    }
}

pub fn percolate(graph: &MultiGraph, pi: f64, seed: u64) -> PercolationOutcome {
    let (_, mask) = percolate_mask(graph, pi, seed);
    let retained = mask.iter().filter(|&&k| k).count();
    PercolationOutcome::from_sizes(pi, retained, components(graph, &mask))
}

/// `(c1_frac, c2_frac)` at every grid value, sharing the draws `uniforms`.
///
/// Edges are added in increasing `U_e` order, so the grid is swept with a
/// single union-find. `grid` must be sorted ascending.
pub fn coupled_fractions(graph: &MultiGraph, uniforms: &[f64], grid: &[f64]) -> Vec<(f64, f64)> {
    let n = graph.n_vertices as f64;
    let mut order: Vec<u32> = (0..graph.edge_count() as u32).collect();
    order.sort_unstable_by(|&a, &b| uniforms[a as usize].total_cmp(&uniforms[b as usize]).then(a.cmp(&b)));
    let mut uf = UnionFind::new(graph.n_vertices);
    let mut next = 0;
    grid.iter()
        .map(|&pi| {
            while next < order.len() && uniforms[order[next] as usize] <= pi {
                let (u, v) = graph.edges[order[next] as usize];
                if u != v {
                    uf.union(u, v);
                }
                next += 1;
            }
            let (a, b) = uf.top_two();
            (a as f64 / n, b as f64 / n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pi: f64,
    pub c1: Moments,
    pub c2: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub config: PaConfig,
    pub pi_grid: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    /// Count of (replica, grid step) pairs where `c1_frac` decreased.
    pub monotonicity_violations: usize,
    /// `c1_frac` per replica (outer) and grid point (inner).
    pub c1_by_replica: Vec<Vec<f64>>,
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Parameter("pi grid is empty".into()));
    }
    if grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Parameter("pi values must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Parameter("pi grid must be sorted ascending".into()));
    }
    Ok(())
}

/// One replica: the graph from stream `(seed, r, 0)`, bond draws from `(seed, r, 1)`.
pub fn replica_fractions(config: &PaConfig, grid: &[f64], seed: u64, r: usize) -> Result<Vec<(f64, f64)>> {
    let key = seed_stream(seed, r as u64);
    let mut graph_rng = StreamRng::new(StreamRng::child_key(key, GRAPH_STREAM));
    let graph = generate_with(config, &mut graph_rng, |_| {})?;
    let uniforms = edge_uniforms(graph.edge_count(), StreamRng::child_key(key, BOND_STREAM));
    Ok(coupled_fractions(&graph, &uniforms, grid))
}

/// Replicated coupled sweep. Replicas run on the current rayon pool; the
/// result does not depend on the pool size.
pub fn sweep(config: &PaConfig, pi_grid: &[f64], replicas: usize, seed: u64) -> Result<SweepTable> {
    config.validate()?;
    validate_grid(pi_grid)?;
    if replicas == 0 {
        return Err(Error::Parameter("replicas must be at least 1".into()));
    }
    let per_replica: Vec<Vec<(f64, f64)>> = (0..replicas)
        .into_par_iter()
        .map(|r| replica_fractions(config, pi_grid, seed, r))
        .collect::<Result<_>>()?;

    let mut violations = 0;
    for rep in &per_replica {
        violations += rep.windows(2).filter(|w| w[1].0 < w[0].0).count();
    }
    let rows = pi_grid
        .iter()
        .enumerate()
        .map(|(k, &pi)| {
            let mut c1 = Moments::default();
            let mut c2 = Moments::default();
            for rep in &per_replica {
                c1.push(rep[k].0);
                c2.push(rep[k].1);
            }
            SweepRow { pi, c1, c2 }
        })
        .collect();
    Ok(SweepTable {
        config: config.clone(),
        pi_grid: pi_grid.to_vec(),
        replicas,
        seed,
        rows,
        monotonicity_violations: violations,
        c1_by_replica: per_replica.iter().map(|r| r.iter().map(|x| x.0).collect()).collect(),
    })
}
