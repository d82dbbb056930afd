//! Edge expansion `α(G, ε) = min |C(S, S^c)| / |S|` over `ε n <= |S| <= n/2`.
//!
//! Small graphs are enumerated exactly; larger ones get a certified lower
//! bound from the normalized Laplacian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pa_models::{generate, MultiGraph, PaConfig};
use crate::percolation::UnionFind;
use crate::rng::{seed_stream, StreamRng};

/// Largest vertex count accepted by [`exact_alpha`].
pub const EXACT_MAX_VERTICES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutMethod {
    Exact,
    SpectralBound,
}

impl std::fmt::Display for CutMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CutMethod::Exact => "exact",
            CutMethod::SpectralBound => "spectral-bound",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDescriptor {
    pub n_vertices: usize,
    pub edges: usize,
    pub self_loops: usize,
    pub min_degree: u32,
}

impl From<&MultiGraph> for GraphDescriptor {
    fn from(g: &MultiGraph) -> Self {
        GraphDescriptor {
            n_vertices: g.n_vertices,
            edges: g.edge_count(),
            self_loops: g.self_loops(),
            min_degree: g.degrees.iter().copied().min().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutReport {
    pub epsilon: f64,
    pub alpha: f64,
    pub method: CutMethod,
    /// Minimizing subset, 0-indexed (exact method only).
    pub witness: Option<Vec<u32>>,
    /// Cut size of the witness.
    pub witness_cut: Option<usize>,
    /// Second-smallest normalized Laplacian eigenvalue, lower-bounded (spectral method only).
    pub lambda2: Option<f64>,
    pub graph: GraphDescriptor,
}

/// Number of edges, with multiplicity, joining `subset` to its complement.
/// Self-loops never count.
pub fn cutset_size(graph: &MultiGraph, subset: &[u32]) -> usize {
    let mut inside = vec![false; graph.n_vertices];
    for &v in subset {
        inside[v as usize] = true;
    }
    graph
        .edges
        .iter()
        .filter(|&&(u, v)| inside[u as usize] != inside[v as usize])
        .count()
}

/// Admissible subset sizes `max(1, ⌈ε n⌉) ..= ⌊n/2⌋`.
pub fn size_window(n: usize, epsilon: f64) -> Result<(usize, usize)> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(Error::Parameter(format!(
            "epsilon must lie in [0, 1/2] (got {epsilon})"
        )));
    }
    let lo = ((epsilon * n as f64 - 1e-9).ceil() as usize).max(1);
    let hi = n / 2;
    if lo > hi {
        return Err(Error::Domain(format!(
            "no subset size fits in [{lo}, {hi}] for n = {n}"
        )));
    }
    Ok((lo, hi))
}

fn weighted_adjacency(graph: &MultiGraph) -> Vec<Vec<(u32, u32)>> {
    let mut adj: Vec<Vec<(u32, u32)>> = vec![Vec::new(); graph.n_vertices];
    for (v, nbrs) in graph.neighbors().into_iter().enumerate() {
        let mut nbrs = nbrs;
        nbrs.sort_unstable();
        for u in nbrs {
            match adj[v].last_mut() {
                Some((w, c)) if *w == u => *c += 1,
                _ => adj[v].push((u, 1)),
            }
        }
    }
    adj
}

/// Exact `α(G, ε)` by a Gray-code walk over all subsets, updating the cut
/// incrementally as single vertices enter or leave.
pub fn exact_alpha(graph: &MultiGraph, epsilon: f64) -> Result<CutReport> {
    let n = graph.n_vertices;
    if n > EXACT_MAX_VERTICES {
        return Err(Error::TooLarge {
            n,
            max: EXACT_MAX_VERTICES,
        });
    }
    let (lo, hi) = size_window(n, epsilon)?;
    let adj = weighted_adjacency(graph);
    let mut mask: u32 = 0;
    let mut cut: i64 = 0;
    let mut size = 0usize;
    let mut best: Option<(i64, usize, u32)> = None;
    for i in 1u64..(1u64 << n) {
        let v = i.trailing_zeros();
        let bit = 1u32 << v;
        let entering = mask & bit == 0;
        let mut toward_inside = 0i64;
        let mut toward_outside = 0i64;
        for &(u, c) in &adj[v as usize] {
            if mask & (1 << u) != 0 {
                toward_inside += c as i64;
            } else {
                toward_outside += c as i64;
            }
        }
        if entering {
            cut += toward_outside - toward_inside;
            size += 1;
        } else {
            cut += toward_inside - toward_outside;
            size -= 1;
        }
        mask ^= bit;
        if size >= lo && size <= hi {
            let better = match best {
                None => true,
                Some((bc, bs, _)) => cut * (bs as i64) < bc * (size as i64),
            };
            if better {
                best = Some((cut, size, mask));
            }
        }
    }
    let (bc, bs, bm) = best.expect("window is nonempty");
    let witness: Vec<u32> = (0..n as u32).filter(|&v| bm & (1 << v) != 0).collect();
    Ok(CutReport {
        epsilon,
        alpha: bc as f64 / bs as f64,
        method: CutMethod::Exact,
        witness: Some(witness),
        witness_cut: Some(bc as usize),
        lambda2: None,
        graph: graph.into(),
    })
}

pub fn is_connected(graph: &MultiGraph) -> bool {
    let mut uf = UnionFind::new(graph.n_vertices);
    for &(u, v) in &graph.edges {
        uf.union(u, v);
    }
    graph.n_vertices <= 1 || uf.top_two().0 == graph.n_vertices
}

pub const LAPLACIAN_MAX_ITERATIONS: usize = 200_000;
pub const LAPLACIAN_RESIDUAL_TOL: f64 = 1e-9;

/// Lower bound on the second-smallest eigenvalue of the normalized Laplacian
/// `I - D^{-1/2} A D^{-1/2}` (a self-loop adds 2 to its diagonal entry of `A`).
///
/// Power iteration on `2I - L` with the top eigenvector `D^{1/2} 1` projected
/// out gives a Rayleigh quotient `θ` and residual `r`; the returned value is
/// `2 - θ - |r|`, which is below the true eigenvalue once the iteration has
/// locked onto the top of the deflated spectrum.
pub fn normalized_laplacian_lambda2(graph: &MultiGraph) -> Result<f64> {
    let n = graph.n_vertices;
    if n < 2 {
        return Err(Error::Domain("need at least two vertices".into()));
    }
    if graph.degrees.contains(&0) {
        return Err(Error::Domain("isolated vertex".into()));
    }
    let inv_sqrt: Vec<f64> = graph.degrees.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
    let vol: f64 = graph.degrees.iter().map(|&d| d as f64).sum();
    let top: Vec<f64> = graph.degrees.iter().map(|&d| (d as f64 / vol).sqrt()).collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        // out = (2I - L) x = x + D^{-1/2} A D^{-1/2} x
        out.copy_from_slice(x);
        for &(u, v) in &graph.edges {
            let (u, v) = (u as usize, v as usize);
            if u == v {
                out[u] += 2.0 * inv_sqrt[u] * inv_sqrt[u] * x[u];
            } else {
                let w = inv_sqrt[u] * inv_sqrt[v];
                out[u] += w * x[v];
                out[v] += w * x[u];
            }
        }
    };
    let deflate = |x: &mut [f64]| {
        let dot: f64 = x.iter().zip(&top).map(|(a, b)| a * b).sum();
        for (xi, ti) in x.iter_mut().zip(&top) {
            *xi -= dot * ti;
        }
    };
    let normalize = |x: &mut [f64]| {
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        for xi in x.iter_mut() {
            *xi /= norm;
        }
    };
    let mut rng = StreamRng::new(0x5eed_1a91_ac1a_0002);
    let mut x: Vec<f64> = (0..n).map(|_| rng.uniform() - 0.5).collect();
    deflate(&mut x);
    normalize(&mut x);
    let mut y = vec![0.0; n];
    let mut last = [f64::NAN; 2];
    for it in 1..=LAPLACIAN_MAX_ITERATIONS {
        apply(&x, &mut y);
        deflate(&mut y);
        let theta: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let residual = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (b - theta * a).powi(2))
            .sum::<f64>()
            .sqrt();
        last = [last[1], 2.0 - theta];
        if residual < LAPLACIAN_RESIDUAL_TOL {
            return Ok((2.0 - theta - residual).max(0.0));
        }
        std::mem::swap(&mut x, &mut y);
        normalize(&mut x);
        if it == LAPLACIAN_MAX_ITERATIONS {
            break;
        }
    }
    Err(Error::NonConvergence {
        method: "normalized Laplacian power iteration",
        iterations: LAPLACIAN_MAX_ITERATIONS,
        last,
    })
}

/// Certified lower bound `α >= (λ₂/2) d_min`.
///
/// For `|S| <= n/2`, Cheeger gives `|C(S,S^c)| >= (λ₂/2) min(vol S, vol S^c)`
/// and both volumes are at least `d_min |S|`.
pub fn spectral_alpha_bound(graph: &MultiGraph, epsilon: f64) -> Result<CutReport> {
    size_window(graph.n_vertices, epsilon)?;
    if !is_connected(graph) {
        return Err(Error::Domain("spectral bound needs a connected graph".into()));
    }
    let lambda2 = normalized_laplacian_lambda2(graph)?;
    let d_min = graph.degrees.iter().copied().min().unwrap_or(0) as f64;
    Ok(CutReport {
        epsilon,
        alpha: 0.5 * lambda2 * d_min,
        method: CutMethod::SpectralBound,
        witness: None,
        witness_cut: None,
        lambda2: Some(lambda2),
        graph: graph.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub n: usize,
    pub replicas: usize,
    pub method: CutMethod,
    pub epsilon: f64,
    pub alpha_probe: f64,
    pub fail_frac: f64,
    pub min_observed: f64,
}

/// Graph seed for replica `r` at size `n`.
pub fn expansion_graph_seed(seed: u64, n: usize, r: usize) -> u64 {
    seed_stream(StreamRng::child_key(seed, n as u64), r as u64)
}

/// Fraction of replicas with measured expansion below `alpha_probe`, per
/// graph size. Exact for `n <= 24`, spectral lower bound beyond; a
/// disconnected graph measures 0 under the spectral method.
pub fn expansion_experiment(
    config: &PaConfig,
    epsilon: f64,
    alpha_probe: f64,
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<Vec<ExpansionRow>> {
    if config.m < 2 {
        return Err(Error::Parameter("m = 1 gives trees, which are not expanders".into()));
    }
    if replicas < 1 || n_grid.is_empty() {
        return Err(Error::Parameter("need at least one replica and one graph size".into()));
    }
    n_grid
        .iter()
        .map(|&n| {
            let method = if n <= EXACT_MAX_VERTICES {
                CutMethod::Exact
            } else {
                CutMethod::SpectralBound
            };
            let values: Vec<f64> = (0..replicas)
                .into_par_iter()
                .map(|r| {
                    let cfg = config.clone().with_n(n).with_seed(expansion_graph_seed(seed, n, r));
                    let g = generate(&cfg)?;
                    match method {
                        CutMethod::Exact => Ok(exact_alpha(&g, epsilon)?.alpha),
                        CutMethod::SpectralBound if !is_connected(&g) => Ok(0.0),
                        CutMethod::SpectralBound => Ok(spectral_alpha_bound(&g, epsilon)?.alpha),
                    }
                })
                .collect::<Result<_>>()?;
            let fails = values.iter().filter(|&&a| a < alpha_probe).count();
            Ok(ExpansionRow {
                n,
                replicas,
                method,
                epsilon,
                alpha_probe,
                fail_frac: fails as f64 / replicas as f64,
                min_observed: values.iter().copied().fold(f64::INFINITY, f64::min),
            })
        })
        .collect()
}
