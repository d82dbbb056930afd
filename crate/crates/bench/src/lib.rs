//! Shared fixtures for the criterion benches under `benches/`.

use pacrit_core::{MultiGraph, PaConfig, PptParams, Variant};

/// The reference model: variant B, m = 2, delta = 1.
pub fn reference_config(n: usize, seed: u64) -> PaConfig {
    PaConfig::new(Variant::B, 2, 1.0, n, seed)
}

pub fn reference_graph(n: usize, seed: u64) -> MultiGraph {
    pacrit_core::pa_models::generate(&reference_config(n, seed)).expect("reference config is valid")
}

/// Reference tree parameters at retention probability `pi`.
pub fn reference_tree(pi: f64) -> PptParams {
    PptParams::new(2, 1.0, pi).expect("reference parameters are valid")
}
