//! Percolation on preferential attachment graphs: graph models, bond
//! percolation sweeps, the Pólya point tree and its branching processes,
//! the offspring operator spectrum, the spine walk and expansion checks.

// `!(x > a)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod quad;
pub mod rng;
pub mod stats;

pub mod elbow;
pub mod expander;
pub mod pa_models;
pub mod percolation;
pub mod ppt;
pub mod spectral;
pub mod spine;

pub mod harness;

pub use error::{Error, Result};
pub use expander::{CutMethod, CutReport, ExpansionRow};
pub use harness::{Artifact, Command, ExperimentSpec, Format};
pub use pa_models::{GraphHeader, MultiGraph, PaConfig, Variant};
pub use percolation::{SweepRow, SweepTable};
pub use ppt::{PptParams, RootStrength, SurvivalEstimate, Thinning};
pub use rng::{seed_stream, StreamRng, RNG_ALGORITHM};
pub use spectral::{KernelConstants, Label, SpectralNorm, TruncatedSpectral};
pub use stats::Moments;
