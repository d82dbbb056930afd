//! Pólya point tree simulation: plain, percolated and b-truncated trees,
//! survival estimation, and the score and martingale trajectories.
//!
//! Every node owns a counter-based stream keyed by its position in the tree
//! (root key, then child index at each level). Children are indexed before
//! thinning, so with [`Thinning::PerEdge`] the trees at two retention
//! probabilities built from the same root key are nested.

use std::ops::ControlFlow;

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seed_stream, StreamRng};
use crate::spectral::{self, Label};
use crate::stats::{binomial_ci95_half_width, Moments};

const TAG_AGE: u64 = 0;
const TAG_STRENGTH: u64 = 1;
const TAG_CHILDREN: u64 = 2;
const TAG_CHILD: u64 = 1 << 32;
const Y_OFFSET: u64 = 1 << 31;

/// How percolation acts on Y-children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Thinning {
    /// Sample the full Poisson process and keep each point with probability π.
    /// Coupled across π; cost grows like the unthinned child count.
    PerEdge,
    /// Sample the Poisson process at intensity π·ρ directly.
    #[default]
    Intensity,
}

/// Law of the root strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RootStrength {
    /// Gamma(m + δ).
    #[default]
    Plain,
    /// Gamma(m + δ + 1), as an O node.
    SizeBiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PptParams {
    pub m: u32,
    pub delta: f64,
    pub chi: f64,
    /// Truncation factor; `None` restricts ages to `(0, 1]`.
    pub b: Option<f64>,
    pub pi: f64,
    pub thinning: Thinning,
    pub root_strength: RootStrength,
    /// Label whose eigenvector entry weighs the root in scores.
    pub root_score_label: Label,
}

impl PptParams {
    pub fn new(m: u32, delta: f64, pi: f64) -> Result<Self> {
        let p = PptParams {
            m,
            delta,
            chi: spectral::chi(m, delta),
            b: None,
            pi,
            thinning: Thinning::default(),
            root_strength: RootStrength::default(),
            root_score_label: Label::O,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_b(mut self, b: f64) -> Result<Self> {
        self.b = Some(b);
        self.validate()?;
        Ok(self)
    }

    pub fn with_pi(mut self, pi: f64) -> Result<Self> {
        self.pi = pi;
        self.validate()?;
        Ok(self)
    }

    pub fn with_thinning(mut self, thinning: Thinning) -> Self {
        self.thinning = thinning;
        self
    }

    pub fn with_root_strength(mut self, law: RootStrength) -> Self {
        self.root_strength = law;
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.m < 1 {
            v.push("m must be at least 1".to_string());
        }
        if !self.delta.is_finite() || self.delta <= -(self.m as f64) {
            v.push("delta must exceed -m".to_string());
        }
        if !(0.0..=1.0).contains(&self.pi) {
            v.push(format!("pi must lie in [0, 1] (got {})", self.pi));
        }
        if let Some(b) = self.b {
            if !(b > 1.0) || !b.is_finite() {
                v.push(format!("b must exceed 1 (got {b})"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(v.join("; ")))
        }
    }

    /// Number of potential O-children.
    pub fn older_slots(&self, label: NodeLabel) -> u32 {
        match label {
            NodeLabel::Root | NodeLabel::O => self.m,
            NodeLabel::Y => self.m - 1,
        }
    }

    pub fn strength_shape(&self, label: NodeLabel) -> f64 {
        let base = self.m as f64 + self.delta;
        match (label, self.root_strength) {
            (NodeLabel::O, _) | (NodeLabel::Root, RootStrength::SizeBiased) => base + 1.0,
            _ => base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeLabel {
    Root,
    O,
    Y,
}

impl NodeLabel {
    pub fn as_label(self, root: Label) -> Label {
        match self {
            NodeLabel::Root => root,
            NodeLabel::O => Label::O,
            NodeLabel::Y => Label::Y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PptNode {
    pub age: f64,
    pub label: NodeLabel,
    pub strength: f64,
    pub parent: Option<usize>,
    pub generation: u32,
    pub key: u64,
}

fn sample_strength(params: &PptParams, label: NodeLabel, key: u64) -> f64 {
    let shape = params.strength_shape(label);
    let mut rng = StreamRng::new(StreamRng::child_key(key, TAG_STRENGTH));
    // shape > 0 is guaranteed by delta > -m
    Gamma::new(shape, 1.0).expect("positive gamma shape").sample(&mut rng)
}

/// Root of replica `key`: age uniform on `(0, 1)`.
pub fn sample_root(params: &PptParams, key: u64) -> PptNode {
    let age = StreamRng::new(StreamRng::child_key(key, TAG_AGE)).uniform_open();
    PptNode {
        age,
        label: NodeLabel::Root,
        strength: sample_strength(params, NodeLabel::Root, key),
        parent: None,
        generation: 0,
        key,
    }
}

/// Upper end of the Y-children age window of a node at age `age`.
pub fn younger_limit(params: &PptParams, age: f64) -> f64 {
    match params.b {
        Some(b) => b * age,
        None => 1.0,
    }
}

/// Streams the retained children of `node` into `visit`, stopping early when
/// `visit` breaks. `slot` is recorded as the children's parent index.
pub fn visit_children(
    node: &PptNode,
    slot: Option<usize>,
    params: &PptParams,
    mut visit: impl FnMut(PptNode) -> ControlFlow<()>,
) -> Result<ControlFlow<()>> {
    if !(node.age > 0.0) || !node.age.is_finite() {
        return Err(Error::Structural(format!(
            "node age must be positive (got {})",
            node.age
        )));
    }
    let chi = params.chi;
    let pi = params.pi;
    let mut rng = StreamRng::new(StreamRng::child_key(node.key, TAG_CHILDREN));
    let make = |label: NodeLabel, age: f64, index: u64| {
        let key = StreamRng::child_key(node.key, TAG_CHILD + index);
        PptNode {
            age,
            label,
            strength: sample_strength(params, label, key),
            parent: slot,
            generation: node.generation + 1,
            key,
        }
    };

    for i in 0..params.older_slots(node.label) {
        let u = rng.uniform_open();
        let keep = rng.uniform() < pi;
        if keep {
            let child = make(NodeLabel::O, u.powf(1.0 / chi) * node.age, i as u64);
            if visit(child).is_break() {
                return Ok(ControlFlow::Break(()));
            }
        }
    }

    let upper = younger_limit(params, node.age);
    let rate = match params.thinning {
        Thinning::PerEdge => node.strength,
        Thinning::Intensity => pi * node.strength,
    };
    if upper <= node.age || !(rate > 0.0) {
        return Ok(ControlFlow::Continue(()));
    }
    let exponent = 1.0 / (1.0 - chi);
    let mut s = 0.0;
    let mut k: u64 = 0;
    loop {
        s += rng.exp1();
        let x = node.age * (1.0 + s / rate).powf(exponent);
        if x > upper {
            break;
        }
        let keep = match params.thinning {
            Thinning::PerEdge => rng.uniform() < pi,
            Thinning::Intensity => true,
        };
        if keep && visit(make(NodeLabel::Y, x, Y_OFFSET + k)).is_break() {
            return Ok(ControlFlow::Break(()));
        }
        k += 1;
    }
    Ok(ControlFlow::Continue(()))
}

/// [`visit_children`] without early exit.
pub fn for_each_child(
    node: &PptNode,
    slot: Option<usize>,
    params: &PptParams,
    mut f: impl FnMut(PptNode),
) -> Result<()> {
    visit_children(node, slot, params, |c| {
        f(c);
        ControlFlow::Continue(())
    })
    .map(|_| ())
}

/// All retained children of `node`.
pub fn sample_children(node: &PptNode, slot: Option<usize>, params: &PptParams) -> Result<Vec<PptNode>> {
    let mut out = Vec::new();
    for_each_child(node, slot, params, |c| out.push(c))?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub pi: f64,
    pub generations: u32,
    pub cap: usize,
    pub replicas: usize,
    pub survivals: usize,
    pub survival_frac: f64,
    pub ci95_half_width: f64,
}

impl SurvivalEstimate {
    pub fn from_counts(pi: f64, generations: u32, cap: usize, replicas: usize, survivals: usize) -> Self {
        SurvivalEstimate {
            pi,
            generations,
            cap,
            replicas,
            survivals,
            survival_frac: if replicas == 0 {
                0.0
            } else {
                survivals as f64 / replicas as f64
            },
            ci95_half_width: binomial_ci95_half_width(survivals as u64, replicas as u64),
        }
    }
}

fn check_protocol(generations: u32, cap: usize, replicas: usize) -> Result<()> {
    if generations < 1 || cap < 1 || replicas < 1 {
        return Err(Error::Parameter(
            "generations, cap and replicas must all be at least 1".into(),
        ));
    }
    Ok(())
}

/// Whether the tree rooted at `root_key` survives: it reaches generation
/// `generations` with a live particle, or some generation holds `cap` particles.
pub fn replica_survives(params: &PptParams, generations: u32, cap: usize, root_key: u64) -> Result<bool> {
    let mut frontier = vec![sample_root(params, root_key)];
    if cap <= 1 {
        return Ok(true);
    }
    let mut next = Vec::new();
    for _ in 0..generations {
        next.clear();
        for node in &frontier {
            let flow = visit_children(node, None, params, |c| {
                next.push(c);
                if next.len() >= cap {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })?;
            if flow.is_break() {
                return Ok(true);
            }
        }
        if next.is_empty() {
            return Ok(false);
        }
        std::mem::swap(&mut frontier, &mut next);
    }
    Ok(true)
}

pub fn estimate_survival(
    params: &PptParams,
    generations: u32,
    cap: usize,
    replicas: usize,
    seed: u64,
) -> Result<SurvivalEstimate> {
    params.validate()?;
    check_protocol(generations, cap, replicas)?;
    let outcomes: Vec<bool> = (0..replicas)
        .into_par_iter()
        .map(|r| replica_survives(params, generations, cap, seed_stream(seed, r as u64)))
        .collect::<Result<_>>()?;
    let survivals = outcomes.iter().filter(|&&s| s).count();
    Ok(SurvivalEstimate::from_counts(
        params.pi,
        generations,
        cap,
        replicas,
        survivals,
    ))
}

/// Per-replica state after one generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSnapshot {
    pub generation: u32,
    pub particles: usize,
    /// Σ f(age, label) / f(root), with `f(x, s) = p_s / √x`.
    pub score: Option<f64>,
    /// ρ_b^{-n} Σ h(age, label) / h(root), with `h(x, s) = u_s / √x`.
    pub martingale: Option<f64>,
    pub min_age: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryKind {
    Score,
    Martingale,
}

/// Largest generation size a trajectory replica may reach.
pub const TRAJECTORY_PARTICLE_LIMIT: usize = 50_000_000;

struct Weighting {
    vec: [f64; 2],
    root_label: Label,
    growth: f64,
}

fn replica_trajectory(
    params: &PptParams,
    generations: u32,
    root_key: u64,
    kind: TrajectoryKind,
    w: &Weighting,
) -> Result<Vec<GenerationSnapshot>> {
    let weight = |n: &PptNode| w.vec[n.label.as_label(w.root_label).index()] / n.age.sqrt();
    let root = sample_root(params, root_key);
    let norm = weight(&root);
    let mut frontier = vec![root];
    let mut next = Vec::new();
    let mut out = Vec::with_capacity(generations as usize + 1);
    let snapshot = |g: u32, nodes: &[PptNode]| {
        let total: f64 = nodes.iter().map(weight).sum::<f64>() / norm;
        let (score, martingale) = match kind {
            TrajectoryKind::Score => (Some(total), None),
            TrajectoryKind::Martingale => (None, Some(total / w.growth.powi(g as i32))),
        };
        GenerationSnapshot {
            generation: g,
            particles: nodes.len(),
            score,
            martingale,
            min_age: nodes.iter().map(|n| n.age).fold(f64::INFINITY, f64::min),
        }
    };
    out.push(snapshot(0, &frontier));
    for g in 1..=generations {
        next.clear();
        for node in &frontier {
            for_each_child(node, None, params, |c| next.push(c))?;
            if next.len() > TRAJECTORY_PARTICLE_LIMIT {
                return Err(Error::Domain(format!(
                    "generation {g} exceeded {TRAJECTORY_PARTICLE_LIMIT} particles"
                )));
            }
        }
        std::mem::swap(&mut frontier, &mut next);
        out.push(snapshot(g, &frontier));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub generation: u32,
    pub particles_mean: f64,
    pub score_mean: Option<f64>,
    pub score_se: Option<f64>,
    pub martingale_mean: Option<f64>,
    pub martingale_se: Option<f64>,
}

/// Mean and standard error of the per-replica change from generation
/// `generation - 1` to `generation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Increment {
    pub generation: u32,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub kind: TrajectoryKind,
    pub pi: f64,
    pub replicas: usize,
    /// Eigenvalue used for normalization (ρ_b for martingales, 1 for scores).
    pub growth: f64,
    pub rows: Vec<TrajectoryRow>,
    pub increments: Vec<Increment>,
}

fn run_trajectories(
    params: &PptParams,
    generations: u32,
    replicas: usize,
    seed: u64,
    kind: TrajectoryKind,
    w: Weighting,
) -> Result<TrajectoryReport> {
    if replicas < 1 {
        return Err(Error::Parameter("replicas must be at least 1".into()));
    }
    let runs: Vec<Vec<GenerationSnapshot>> = (0..replicas)
        .into_par_iter()
        .map(|r| replica_trajectory(params, generations, seed_stream(seed, r as u64), kind, &w))
        .collect::<Result<_>>()?;
    let value = |s: &GenerationSnapshot| s.score.or(s.martingale).unwrap_or(0.0);
    let g = generations as usize + 1;
    let mut particles = vec![Moments::default(); g];
    let mut values = vec![Moments::default(); g];
    let mut diffs = vec![Moments::default(); g];
    for run in &runs {
        for (n, s) in run.iter().enumerate() {
            particles[n].push(s.particles as f64);
            values[n].push(value(s));
            if n > 0 {
                diffs[n].push(value(s) - value(&run[n - 1]));
            }
        }
    }
    let rows = (0..g)
        .map(|n| {
            let (mean, se) = (Some(values[n].mean()), Some(values[n].se()));
            let (score_mean, score_se, martingale_mean, martingale_se) = match kind {
                TrajectoryKind::Score => (mean, se, None, None),
                TrajectoryKind::Martingale => (None, None, mean, se),
            };
            TrajectoryRow {
                generation: n as u32,
                particles_mean: particles[n].mean(),
                score_mean,
                score_se,
                martingale_mean,
                martingale_se,
            }
        })
        .collect();
    let increments = (1..g)
        .map(|n| Increment {
            generation: n as u32,
            mean: diffs[n].mean(),
            se: diffs[n].se(),
        })
        .collect();
    Ok(TrajectoryReport {
        kind,
        pi: params.pi,
        replicas,
        growth: w.growth,
        rows,
        increments,
    })
}

/// Score `X^(n)` per generation on the restricted tree (ages in `(0, 1]`),
/// weighted by the untruncated eigenfunction.
pub fn score_trajectory(params: &PptParams, generations: u32, replicas: usize, seed: u64) -> Result<TrajectoryReport> {
    params.validate()?;
    if params.delta <= 0.0 {
        return Err(Error::Domain("the score needs delta > 0".into()));
    }
    if params.b.is_some() {
        return Err(Error::Parameter("the score runs on the restricted tree; drop b".into()));
    }
    let p = spectral::spectral_norm(params.m, params.delta)?.p;
    let w = Weighting {
        vec: p,
        root_label: params.root_score_label,
        growth: 1.0,
    };
    run_trajectories(params, generations, replicas, seed, TrajectoryKind::Score, w)
}

/// Normalized martingale `M_b^(n)` per generation on the b-truncated tree.
pub fn martingale_trajectory(
    params: &PptParams,
    generations: u32,
    replicas: usize,
    seed: u64,
) -> Result<TrajectoryReport> {
    params.validate()?;
    let b = params
        .b
        .ok_or_else(|| Error::Parameter("the martingale needs a truncation factor b".into()))?;
    if params.delta <= 0.0 {
        return Err(Error::Domain("the martingale needs delta > 0".into()));
    }
    let t = spectral::truncated_spectral(params.m, params.delta, b)?;
    let growth = params.pi * t.r_b;
    if !(growth > 0.0) {
        return Err(Error::Domain("the martingale needs pi * r_b > 0".into()));
    }
    let w = Weighting {
        vec: t.u_b,
        root_label: params.root_score_label,
        growth,
    };
    run_trajectories(params, generations, replicas, seed, TrajectoryKind::Martingale, w)
}

/// First-generation mean of `Σ_children g(child) / g(node)` for a node of
/// label `label` at fixed `age`, where `g(x, s) = vec_s / √x`. Children with
/// age below `min_ratio * age` are left out.
///
/// Without a floor the summands have infinite variance (O-children of a node
/// contribute `U^{-1/(2χ)}`), so standard errors are unreliable.
#[allow(clippy::too_many_arguments)]
pub fn weighted_offspring_mean(
    params: &PptParams,
    label: NodeLabel,
    age: f64,
    vec: [f64; 2],
    min_ratio: f64,
    draws: usize,
    seed: u64,
) -> Result<Moments> {
    let g = |l: NodeLabel, x: f64| vec[l.as_label(Label::O).index()] / x.sqrt();
    let norm = g(label, age);
    let floor = min_ratio * age;
    let sums: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let key = seed_stream(seed, i as u64);
            let node = PptNode {
                age,
                label,
                strength: sample_strength(params, label, key),
                parent: None,
                generation: 0,
                key,
            };
            let mut total = 0.0;
            for_each_child(&node, None, params, |c| {
                if c.age >= floor {
                    total += g(c.label, c.age)
                }
            })?;
            Ok(total / norm)
        })
        .collect::<Result<_>>()?;
    Ok(sums.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn node(params: &PptParams, label: NodeLabel, age: f64, key: u64) -> PptNode {
        PptNode {
            age,
            label,
            strength: sample_strength(params, label, key),
            parent: None,
            generation: 0,
            key,
        }
    }

    #[test]
    fn pi_zero_no_children() {
        let p = PptParams::new(2, 1.0, 0.0).unwrap();
        for k in 0..200 {
            assert!(sample_children(&node(&p, NodeLabel::O, 0.01, k), None, &p)
                .unwrap()
                .is_empty());
        }
        let p = p.with_thinning(Thinning::PerEdge);
        assert!(sample_children(&node(&p, NodeLabel::O, 0.01, 9), None, &p)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn age_one_only_older_children() {
        let p = PptParams::new(3, 0.5, 1.0).unwrap();
        let c = sample_children(&node(&p, NodeLabel::O, 1.0, 5), Some(0), &p).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c
            .iter()
            .all(|c| c.label == NodeLabel::O && c.age < 1.0 && c.parent == Some(0)));
        let c = sample_children(&node(&p, NodeLabel::Y, 1.0, 5), None, &p).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn invalid_age_rejected() {
        let p = PptParams::new(2, 1.0, 1.0).unwrap();
        let mut n = node(&p, NodeLabel::O, 0.5, 1);
        n.age = 0.0;
        assert!(matches!(sample_children(&n, None, &p), Err(Error::Structural(_))));
    }

    #[test]
    fn age_ordering_and_window() {
        let p = PptParams::new(2, 1.0, 1.0).unwrap().with_b(16.0).unwrap();
        for k in 0..500 {
            let n = node(&p, if k % 2 == 0 { NodeLabel::O } else { NodeLabel::Y }, 0.3, k);
            for c in sample_children(&n, None, &p).unwrap() {
                match c.label {
                    NodeLabel::O => assert!(c.age < n.age),
                    NodeLabel::Y => assert!(c.age > n.age && c.age <= 16.0 * n.age),
                    NodeLabel::Root => unreachable!(),
                }
                assert!(c.strength > 0.0);
            }
        }
        let p = PptParams::new(2, 1.0, 1.0).unwrap();
        for k in 0..500 {
            for c in sample_children(&node(&p, NodeLabel::O, 0.01, k), None, &p).unwrap() {
                assert!(c.age <= 1.0);
            }
        }
    }

    #[test]
    fn younger_count_mean_in_truncated_tree() {
        let (m, delta, b) = (2u32, 1.0, 16.0);
        let p = PptParams::new(m, delta, 1.0).unwrap().with_b(b).unwrap();
        for (label, mean_strength) in [(NodeLabel::O, 4.0), (NodeLabel::Y, 3.0)] {
            let counts: Moments = (0..100_000u64)
                .map(|k| {
                    sample_children(&node(&p, label, 0.7, 1_000_000 + k), None, &p)
                        .unwrap()
                        .iter()
                        .filter(|c| c.label == NodeLabel::Y)
                        .count() as f64
                })
                .collect();
            let expected = mean_strength * (b.powf(0.4) - 1.0);
            assert!(
                (counts.mean() - expected).abs() < 3.0 * counts.se(),
                "{label:?}: {} vs {expected} (se {})",
                counts.mean(),
                counts.se()
            );
        }
    }

    #[test]
    fn strength_moments() {
        let p = PptParams::new(2, 1.0, 1.0).unwrap();
        for (label, shape) in [(NodeLabel::O, 4.0), (NodeLabel::Y, 3.0), (NodeLabel::Root, 3.0)] {
            let s: Moments = (0..50_000u64).map(|k| sample_strength(&p, label, k)).collect();
            assert!((s.mean() - shape).abs() < 4.0 * s.se());
            assert!((s.variance() - shape).abs() < 0.05 * shape);
        }
        let p = p.with_root_strength(RootStrength::SizeBiased);
        assert_eq!(p.strength_shape(NodeLabel::Root), 4.0);
    }

    fn younger_count_histogram(p: &PptParams, draws: u64, offset: u64) -> Vec<u64> {
        let mut hist = vec![0u64; 64];
        for k in 0..draws {
            let mut n = node(p, NodeLabel::Y, 0.05, offset + k);
            n.strength = 2.5;
            let c = sample_children(&n, None, p)
                .unwrap()
                .iter()
                .filter(|c| c.label == NodeLabel::Y)
                .count();
            hist[c.min(63)] += 1;
        }
        hist
    }

    #[test]
    fn thinning_modes_agree_in_law() {
        let base = PptParams::new(2, 1.0, 0.3).unwrap();
        let a = younger_count_histogram(&base.with_thinning(Thinning::PerEdge), 100_000, 0);
        let b = younger_count_histogram(&base.with_thinning(Thinning::Intensity), 100_000, 1 << 40);
        // two-sample chi-square over bins with enough mass
        let (mut stat, mut bins) = (0.0, 0);
        let (mut ra, mut rb) = (0u64, 0u64);
        for i in 0..64 {
            ra += a[i];
            rb += b[i];
            if ra + rb >= 40 || i == 63 {
                let e = (ra + rb) as f64 / 2.0;
                stat += (ra as f64 - e).powi(2) / e + (rb as f64 - e).powi(2) / e;
                bins += 1;
                ra = 0;
                rb = 0;
            }
        }
        let crit = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(stat < crit, "chi-square {stat} over {bins} bins (critical {crit})");
    }

    #[test]
    fn per_edge_trees_are_nested() {
        let lo = PptParams::new(2, 1.0, 0.2).unwrap().with_thinning(Thinning::PerEdge);
        let hi = lo.with_pi(0.6).unwrap();
        for k in 0..300 {
            let n = node(&lo, NodeLabel::O, 0.02, k);
            let a = sample_children(&n, None, &lo).unwrap();
            let b = sample_children(&n, None, &hi).unwrap();
            assert!(a.iter().all(|c| b.iter().any(|d| d.key == c.key && d.age == c.age)));
        }
    }

    #[test]
    fn survival_monotone_on_coupled_replicas() {
        let base = PptParams::new(2, 1.0, 0.05).unwrap().with_thinning(Thinning::PerEdge);
        let pis = [0.05, 0.1, 0.2];
        for r in 0..150u64 {
            let key = seed_stream(77, r);
            let by_pi: Vec<bool> = pis
                .iter()
                .map(|&pi| replica_survives(&base.with_pi(pi).unwrap(), 8, 300, key).unwrap())
                .collect();
            assert!(by_pi.windows(2).all(|w| w[0] <= w[1]), "pi: replica {r}");
            let p = base.with_pi(0.1).unwrap();
            let by_g: Vec<bool> = [3, 6, 9]
                .iter()
                .map(|&g| replica_survives(&p, g, 300, key).unwrap())
                .collect();
            assert!(by_g.windows(2).all(|w| w[0] >= w[1]), "G: replica {r}");
            let by_k: Vec<bool> = [50, 200, 800]
                .iter()
                .map(|&k| replica_survives(&p, 6, k, key).unwrap())
                .collect();
            assert!(by_k.windows(2).all(|w| w[0] >= w[1]), "K: replica {r}");
        }
    }

    #[test]
    fn survival_trivial_cases() {
        let p = PptParams::new(2, 1.0, 0.0).unwrap();
        assert_eq!(estimate_survival(&p, 3, 100, 200, 1).unwrap().survivals, 0);
        let p = PptParams::new(2, 1.0, 1.0).unwrap();
        let e = estimate_survival(&p, 5, 50, 200, 1).unwrap();
        assert_eq!(e.survivals, 200);
        assert!(estimate_survival(&p, 0, 50, 10, 1).is_err());
    }

    /// Expected floored weighted offspring, integrating the child intensities.
    fn floored_target(p: &PptParams, label: NodeLabel, x: f64, v: [f64; 2], eps: f64) -> f64 {
        let chi = p.chi;
        let older = p.older_slots(label) as f64 * v[0] * (1.0 - eps.powf(chi - 0.5)) * 2.0 * chi / (2.0 * chi - 1.0);
        let window = match p.b {
            Some(b) => 1.0 - b.powf(0.5 - chi),
            None => 1.0 - x.powf(chi - 0.5),
        };
        let younger = p.strength_shape(label) * (1.0 - chi) * v[1] * window / (chi - 0.5);
        p.pi * (older + younger) / v[label.as_label(Label::O).index()]
    }

    #[test]
    fn truncated_offspring_mean_matches_integral() {
        let b = 16.0;
        let t = spectral::truncated_spectral(2, 1.0, b).unwrap();
        let p = PptParams::new(2, 1.0, 0.4).unwrap().with_b(b).unwrap();
        for label in [NodeLabel::O, NodeLabel::Y] {
            // the unfloored target is π r_b
            assert!((floored_target(&p, label, 0.37, t.u_b, 0.0) - 0.4 * t.r_b).abs() < 1e-12);
            let est = weighted_offspring_mean(&p, label, 0.37, t.u_b, 1e-3, 200_000, 3).unwrap();
            let target = floored_target(&p, label, 0.37, t.u_b, 1e-3);
            assert!(
                (est.mean() - target).abs() < 3.0 * est.se(),
                "{label:?}: {} vs {target}",
                est.mean()
            );
        }
    }

    #[test]
    fn restricted_offspring_mean_matches_integral() {
        let (m, delta, pi, x) = (2u32, 1.0, 0.5, 0.2);
        let s = spectral::spectral_norm(m, delta).unwrap();
        let p = PptParams::new(m, delta, pi).unwrap();
        for label in [NodeLabel::O, NodeLabel::Y] {
            let est = weighted_offspring_mean(&p, label, x, s.p, 1e-3, 200_000, 4).unwrap();
            let target = floored_target(&p, label, x, s.p, 1e-3);
            assert!(
                (est.mean() - target).abs() < 3.0 * est.se(),
                "{label:?}: {} vs {target}",
                est.mean()
            );
        }
    }

    #[test]
    fn trajectories_start_at_one() {
        let p = PptParams::new(2, 1.0, 0.0).unwrap();
        let rep = score_trajectory(&p, 3, 50, 2).unwrap();
        assert_eq!(rep.rows[0].score_mean, Some(1.0));
        assert!(rep.rows[1..].iter().all(|r| r.score_mean == Some(0.0)));
        let p = PptParams::new(2, 1.0, 0.15).unwrap().with_b(16.0).unwrap();
        let rep = martingale_trajectory(&p, 2, 50, 2).unwrap();
        assert_eq!(rep.rows[0].martingale_mean, Some(1.0));
        assert!(score_trajectory(&PptParams::new(2, 0.0, 0.5).unwrap(), 2, 5, 1).is_err());
        assert!(martingale_trajectory(&PptParams::new(2, 1.0, 0.0).unwrap().with_b(4.0).unwrap(), 2, 5, 1).is_err());
    }
}
