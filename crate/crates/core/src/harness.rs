//! Experiment specifications, validation, orchestration and serialization.
//!
//! Every artifact is a pure function of its [`ExperimentSpec`]: replicas run
//! on a rayon pool but are collected in index order and reduced sequentially,
//! so the thread count never changes a byte of output. The thread count and
//! output path are therefore left out of the embedded provenance.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::elbow;
use crate::error::{Error, Result};
use crate::expander::{self, ExpansionRow};
use crate::pa_models::{self, GraphHeader, PaConfig, Variant};
use crate::percolation::{self, SweepTable};
use crate::ppt::{self, PptParams, RootStrength, Thinning, TrajectoryReport};
use crate::rng::RNG_ALGORITHM;
use crate::spectral::{self, ResidualMethod};
use crate::spine;

pub use crate::rng::seed_stream;

pub const ARTIFACT_VERSION: &str = concat!("pacrit ", env!("CARGO_PKG_VERSION"));
pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "PACRIT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    /// Graph text format (`generate` only).
    Text,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            _ => Err(Error::Parameter(format!("unknown format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    Generate {
        variant: Variant,
        m: u32,
        delta: f64,
        n: usize,
    },
    Sweep {
        variant: Variant,
        m: u32,
        delta: f64,
        n: usize,
        pis: Vec<f64>,
        replicas: usize,
    },
    PptSurvival {
        m: u32,
        delta: f64,
        pi: f64,
        b: Option<f64>,
        generations: u32,
        cap: usize,
        replicas: usize,
        thinning: Thinning,
        root_strength: RootStrength,
    },
    Elbow {
        m: u32,
        delta: f64,
        pi: f64,
        /// Age cut; defaults to half the critical age.
        h: Option<f64>,
        generations: u32,
        cap: usize,
        replicas: usize,
        draws: usize,
    },
    Spectral {
        m: u32,
        delta: f64,
        b: Option<f64>,
        /// Power-iteration grid sizes; empty skips the numerical study.
        grid: Vec<usize>,
        x_min: f64,
        x_max: f64,
        test_ages: Vec<f64>,
    },
    Threshold {
        m: u32,
        delta: f64,
    },
    Spine {
        m: u32,
        delta: f64,
        b: f64,
        steps: usize,
        budget: usize,
    },
    Expander {
        variant: Variant,
        m: u32,
        delta: f64,
        epsilon: f64,
        alpha_probe: f64,
        n_grid: Vec<usize>,
        replicas: usize,
    },
    Scores {
        m: u32,
        delta: f64,
        pi: f64,
        /// Adds the martingale on the b-truncated tree.
        b: Option<f64>,
        generations: u32,
        replicas: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Sweep { .. } => "sweep",
            Command::PptSurvival { .. } => "ppt-survival",
            Command::Elbow { .. } => "elbow",
            Command::Spectral { .. } => "spectral",
            Command::Threshold { .. } => "threshold",
            Command::Spine { .. } => "spine",
            Command::Expander { .. } => "expander",
            Command::Scores { .. } => "scores",
        }
    }

    pub fn default_format(&self) -> Format {
        match self {
            Command::Generate { .. } => Format::Text,
            Command::Sweep { .. } | Command::Expander { .. } | Command::Scores { .. } => Format::Csv,
            Command::Spectral { grid, .. } if !grid.is_empty() => Format::Csv,
            _ => Format::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(flatten)]
    pub command: Command,
    pub seed: u64,
    pub format: Format,
    #[serde(skip)]
    pub output: Option<PathBuf>,
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl ExperimentSpec {
    pub fn new(command: Command, seed: u64) -> Self {
        let format = command.default_format();
        ExperimentSpec {
            command,
            seed,
            format,
            output: None,
            threads: None,
        }
    }

    pub fn with_format(mut self, format: Format) -> Self {
        self.format = format;
        self
    }

    pub fn with_output(mut self, path: impl Into<PathBuf>) -> Self {
        self.output = Some(path.into());
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }
}

fn model_violations(v: &mut Vec<String>, m: u32, delta: f64) {
    if m < 1 {
        v.push("m must be at least 1".into());
    }
    if !delta.is_finite() || delta <= -(m as f64) {
        v.push("delta must exceed -m".into());
    }
}

fn pi_violations(v: &mut Vec<String>, pi: f64) {
    if !(0.0..=1.0).contains(&pi) {
        v.push(format!("pi must lie in [0, 1] (got {pi})"));
    }
}

fn b_violations(v: &mut Vec<String>, b: Option<f64>) {
    if let Some(b) = b {
        if !(b > 1.0) || !b.is_finite() {
            v.push(format!("b must exceed 1 (got {b})"));
        }
    }
}

fn at_least_one(v: &mut Vec<String>, name: &str, x: usize) {
    if x < 1 {
        v.push(format!("{name} must be at least 1"));
    }
}

/// Every constraint breach in `spec`; empty when the spec is runnable.
pub fn validate(spec: &ExperimentSpec) -> Vec<String> {
    let mut v = Vec::new();
    if spec.format == Format::Text && !matches!(spec.command, Command::Generate { .. }) {
        v.push("text format is only available for generate".into());
    }
    if spec.threads == Some(0) {
        v.push("threads must be at least 1".into());
    }
    match &spec.command {
        Command::Generate { variant, m, delta, n } => {
            v.extend(PaConfig::new(*variant, *m, *delta, *n, spec.seed).violations());
        }
        Command::Sweep {
            variant,
            m,
            delta,
            n,
            pis,
            replicas,
        } => {
            v.extend(PaConfig::new(*variant, *m, *delta, *n, spec.seed).violations());
            if let Err(Error::Parameter(msg)) = percolation::validate_grid(pis) {
                v.push(msg);
            }
            at_least_one(&mut v, "replicas", *replicas);
        }
        Command::PptSurvival {
            m,
            delta,
            pi,
            b,
            generations,
            cap,
            replicas,
            ..
        } => {
            model_violations(&mut v, *m, *delta);
            pi_violations(&mut v, *pi);
            b_violations(&mut v, *b);
            at_least_one(&mut v, "generations", *generations as usize);
            at_least_one(&mut v, "cap", *cap);
            at_least_one(&mut v, "replicas", *replicas);
        }
        Command::Elbow {
            m,
            delta,
            pi,
            h,
            generations,
            cap,
            replicas,
            draws,
        } => {
            model_violations(&mut v, *m, *delta);
            pi_violations(&mut v, *pi);
            if *delta > 0.0 {
                v.push("the elbow process needs delta <= 0".into());
            }
            if *m < 2 {
                v.push("the elbow process needs m >= 2".into());
            }
            if let Some(h) = h {
                if !(*h > 0.0 && *h < 1.0) {
                    v.push(format!("h must lie in (0, 1) (got {h})"));
                }
            } else if !(*pi > 0.0) {
                v.push("pi must be positive to choose h".into());
            }
            at_least_one(&mut v, "generations", *generations as usize);
            at_least_one(&mut v, "cap", *cap);
            at_least_one(&mut v, "replicas", *replicas);
            at_least_one(&mut v, "draws", *draws);
        }
        Command::Spectral {
            m,
            delta,
            b,
            grid,
            x_min,
            x_max,
            test_ages,
        } => {
            model_violations(&mut v, *m, *delta);
            b_violations(&mut v, *b);
            if !grid.is_empty() {
                if b.is_none() {
                    v.push("the power-iteration grid needs b".into());
                }
                if *delta <= 0.0 {
                    v.push("the power-iteration grid needs delta > 0".into());
                }
                if grid.iter().any(|&n| n < 2) {
                    v.push("grid sizes must be at least 2".into());
                }
                if !(*x_min > 0.0 && x_max > x_min) {
                    v.push("need 0 < x_min < x_max".into());
                }
            }
            if test_ages.iter().any(|&x| !(x > 0.0)) {
                v.push("test ages must be positive".into());
            }
        }
        Command::Threshold { m, delta } => model_violations(&mut v, *m, *delta),
        Command::Spine {
            m, delta, b, budget, ..
        } => {
            model_violations(&mut v, *m, *delta);
            b_violations(&mut v, Some(*b));
            at_least_one(&mut v, "budget", *budget);
        }
        Command::Expander {
            variant,
            m,
            delta,
            epsilon,
            alpha_probe,
            n_grid,
            replicas,
        } => {
            v.extend(PaConfig::new(*variant, *m, *delta, 2, spec.seed).violations());
            if *m < 2 {
                v.push("expansion needs m >= 2 (m = 1 gives trees)".into());
            }
            if !(0.0..=0.5).contains(epsilon) {
                v.push(format!("epsilon must lie in [0, 1/2] (got {epsilon})"));
            }
            if !(*alpha_probe >= 0.0) {
                v.push("alpha_probe must be nonnegative".into());
            }
            if n_grid.is_empty() {
                v.push("n grid is empty".into());
            }
            if n_grid.iter().any(|&n| n < 2) {
                v.push("graph sizes must be at least 2".into());
            }
            at_least_one(&mut v, "replicas", *replicas);
        }
        Command::Scores {
            m,
            delta,
            pi,
            b,
            generations,
            replicas,
        } => {
            model_violations(&mut v, *m, *delta);
            pi_violations(&mut v, *pi);
            b_violations(&mut v, *b);
            if *delta <= 0.0 {
                v.push("scores need delta > 0".into());
            }
            at_least_one(&mut v, "generations", *generations as usize);
            at_least_one(&mut v, "replicas", *replicas);
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub artifact: String,
    pub schema: u32,
    pub rng_algorithm: String,
    pub spec: ExperimentSpec,
}

impl Provenance {
    pub fn of(spec: &ExperimentSpec) -> Self {
        Provenance {
            artifact: ARTIFACT_VERSION.to_string(),
            schema: SCHEMA_VERSION,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            spec: spec.clone(),
        }
    }
}

/// A CSV-serializable record with a fixed column list.
pub trait Record: Serialize {
    const HEADER: &'static [&'static str];
}

/// Serializes `records`. CSV output starts with a `# <provenance JSON>` line
/// when provenance is given, then the header, even for no records. JSON
/// output is the bare array, or `{"provenance": .., "records": [..]}`.
/// Writes to `path` when given and returns the bytes either way.
pub fn emit<T: Record>(
    records: &[T],
    format: Format,
    path: Option<&Path>,
    provenance: Option<&Provenance>,
) -> Result<Vec<u8>> {
    let bytes = match format {
        Format::Csv | Format::Text => csv_bytes(records, provenance)?,
        Format::Json => {
            #[derive(Serialize)]
            struct Wrapped<'a, T> {
                provenance: &'a Provenance,
                records: &'a [T],
            }
            let mut out = match provenance {
                Some(p) => serde_json::to_vec_pretty(&Wrapped { provenance: p, records })?,
                None => serde_json::to_vec_pretty(records)?,
            };
            out.push(b'\n');
            out
        }
    };
    if let Some(path) = path {
        write_file(path, &bytes)?;
    }
    Ok(bytes)
}

fn provenance_line(p: &Provenance) -> Result<Vec<u8>> {
    let mut line = b"# ".to_vec();
    line.extend(serde_json::to_vec(p)?);
    line.push(b'\n');
    Ok(line)
}

fn csv_bytes<T: Record>(records: &[T], provenance: Option<&Provenance>) -> Result<Vec<u8>> {
    let mut out = match provenance {
        Some(p) => provenance_line(p)?,
        None => Vec::new(),
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(T::HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    out.extend(w.into_inner().map_err(|e| Error::Io(e.into_error()))?);
    Ok(out)
}

fn json_bytes<T: Serialize>(result: &T, provenance: &Provenance) -> Result<Vec<u8>> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        provenance: &'a Provenance,
        result: &'a T,
    }
    let mut out = serde_json::to_vec_pretty(&Doc { provenance, result })?;
    out.push(b'\n');
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub pi: f64,
    pub replicas: usize,
    pub c1_mean: f64,
    pub c1_sd: f64,
    pub c2_mean: f64,
    pub c2_sd: f64,
    pub n: usize,
    pub m: u32,
    pub delta: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl Record for SweepCsvRow {
    const HEADER: &'static [&'static str] = &[
        "pi", "replicas", "c1_mean", "c1_sd", "c2_mean", "c2_sd", "n", "m", "delta", "variant", "seed",
    ];
}

pub fn sweep_rows(t: &SweepTable) -> Vec<SweepCsvRow> {
    t.rows
        .iter()
        .map(|r| SweepCsvRow {
            pi: r.pi,
            replicas: t.replicas,
            c1_mean: r.c1.mean(),
            c1_sd: r.c1.sd(),
            c2_mean: r.c2.mean(),
            c2_sd: r.c2.sd(),
            n: t.config.n,
            m: t.config.m,
            delta: t.config.delta,
            variant: t.config.variant,
            seed: t.seed,
        })
        .collect()
}

impl Record for ExpansionRow {
    const HEADER: &'static [&'static str] = &[
        "n",
        "replicas",
        "method",
        "epsilon",
        "alpha_probe",
        "fail_frac",
        "min_observed",
    ];
}

impl Record for ppt::TrajectoryRow {
    const HEADER: &'static [&'static str] = &[
        "generation",
        "particles_mean",
        "score_mean",
        "score_se",
        "martingale_mean",
        "martingale_se",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineStepRow {
    pub step: usize,
    pub label: spectral::Label,
    pub log_age: f64,
}

impl Record for SpineStepRow {
    const HEADER: &'static [&'static str] = &["step", "label", "log_age"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRow {
    pub u: u32,
    pub v: u32,
}

impl Record for EdgeRow {
    const HEADER: &'static [&'static str] = &["u", "v"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub m: u32,
    pub delta: f64,
    pub chi: f64,
    pub pi_c: f64,
    /// `None` (infinite) for `delta <= 0`.
    pub r: Option<f64>,
    pub lambda_m: f64,
}

impl Record for ThresholdRecord {
    const HEADER: &'static [&'static str] = &["m", "delta", "chi", "pi_c", "r", "lambda_m"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub m: u32,
    pub delta: f64,
    pub b: Option<f64>,
    pub thinning: Thinning,
    pub root_strength: RootStrength,
    pub pi: f64,
    pub pi_c: f64,
    pub generations: u32,
    pub cap: usize,
    pub replicas: usize,
    pub survivals: usize,
    pub survival_frac: f64,
    pub ci95_half_width: f64,
}

impl Record for SurvivalRecord {
    const HEADER: &'static [&'static str] = &[
        "m",
        "delta",
        "b",
        "thinning",
        "root_strength",
        "pi",
        "pi_c",
        "generations",
        "cap",
        "replicas",
        "survivals",
        "survival_frac",
        "ci95_half_width",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowRecord {
    pub m: u32,
    pub delta: f64,
    pub pi: f64,
    pub log_h_critical: f64,
    pub h: f64,
    pub mean_closed_form: f64,
    pub offspring_mean: f64,
    pub offspring_se: f64,
    pub draws: usize,
    pub generations: u32,
    pub cap: usize,
    pub replicas: usize,
    pub survivals: usize,
    pub survival_frac: f64,
    pub ci95_half_width: f64,
}

impl Record for ElbowRecord {
    const HEADER: &'static [&'static str] = &[
        "m",
        "delta",
        "pi",
        "log_h_critical",
        "h",
        "mean_closed_form",
        "offspring_mean",
        "offspring_se",
        "draws",
        "generations",
        "cap",
        "replicas",
        "survivals",
        "survival_frac",
        "ci95_half_width",
    ];
}

impl Record for spectral::RefinementRow {
    const HEADER: &'static [&'static str] = &["n", "x_min", "x_max", "estimate", "iterations", "r_b", "rel_gap"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub report: spectral::SpectralReport,
    pub residuals: Vec<spectral::ResidualReport>,
    pub refinement: Vec<spectral::RefinementRow>,
    /// `(weight exponent, limit)` of large finite sections, when `b` is set.
    pub finite_section_limit: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresResult {
    pub score: TrajectoryReport,
    pub martingale: Option<TrajectoryReport>,
}

/// A produced artifact: its format and bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub format: Format,
    pub bytes: Vec<u8>,
}

fn unsupported(spec: &ExperimentSpec) -> Error {
    Error::Parameter(format!(
        "format {:?} is not available for {}",
        spec.format,
        spec.command.name()
    ))
}

fn tabular<T: Record + Serialize>(
    spec: &ExperimentSpec,
    prov: &Provenance,
    rows: &[T],
    json: &impl Serialize,
) -> Result<Vec<u8>> {
    match spec.format {
        Format::Csv => csv_bytes(rows, Some(prov)),
        Format::Json => json_bytes(json, prov),
        Format::Text => Err(unsupported(spec)),
    }
}

/// Runs `spec` on the current rayon pool and returns the artifact bytes,
/// also writing them to `spec.output` when set.
pub fn run(spec: &ExperimentSpec) -> Result<Artifact> {
    let violations = validate(spec);
    if !violations.is_empty() {
        return Err(Error::Parameter(violations.join("; ")));
    }
    let prov = Provenance::of(spec);
    let seed = spec.seed;
    let bytes = match &spec.command {
        Command::Generate { variant, m, delta, n } => {
            let cfg = PaConfig::new(*variant, *m, *delta, *n, seed);
            let g = pa_models::generate(&cfg)?;
            match spec.format {
                Format::Text => {
                    let mut out = provenance_line(&prov)?;
                    pa_models::write_graph(&mut out, &GraphHeader::from(&cfg), &g)?;
                    out
                }
                Format::Csv => {
                    let rows: Vec<EdgeRow> = g.edges.iter().map(|&(u, v)| EdgeRow { u: u + 1, v: v + 1 }).collect();
                    csv_bytes(&rows, Some(&prov))?
                }
                Format::Json => {
                    #[derive(Serialize)]
                    struct GraphDoc {
                        n: usize,
                        edges: Vec<(u32, u32)>,
                        degree_histogram: Vec<(u32, usize)>,
                    }
                    let doc = GraphDoc {
                        n: g.n_vertices,
                        edges: g.edges.iter().map(|&(u, v)| (u + 1, v + 1)).collect(),
                        degree_histogram: pa_models::degree_histogram(&g).into_iter().collect(),
                    };
                    json_bytes(&doc, &prov)?
                }
            }
        }
        Command::Sweep {
            variant,
            m,
            delta,
            n,
            pis,
            replicas,
        } => {
            let cfg = PaConfig::new(*variant, *m, *delta, *n, seed);
            let table = percolation::sweep(&cfg, pis, *replicas, seed)?;
            tabular(spec, &prov, &sweep_rows(&table), &table)?
        }
        Command::PptSurvival {
            m,
            delta,
            pi,
            b,
            generations,
            cap,
            replicas,
            thinning,
            root_strength,
        } => {
            let mut params = PptParams::new(*m, *delta, *pi)?
                .with_thinning(*thinning)
                .with_root_strength(*root_strength);
            if let Some(b) = b {
                params = params.with_b(*b)?;
            }
            let e = ppt::estimate_survival(&params, *generations, *cap, *replicas, seed)?;
            let rec = SurvivalRecord {
                m: *m,
                delta: *delta,
                b: *b,
                thinning: *thinning,
                root_strength: *root_strength,
                pi: e.pi,
                pi_c: spectral::pi_c(*m, *delta)?,
                generations: e.generations,
                cap: e.cap,
                replicas: e.replicas,
                survivals: e.survivals,
                survival_frac: e.survival_frac,
                ci95_half_width: e.ci95_half_width,
            };
            tabular(spec, &prov, std::slice::from_ref(&rec), &rec)?
        }
        Command::Elbow {
            m,
            delta,
            pi,
            h,
            generations,
            cap,
            replicas,
            draws,
        } => {
            let (log_h_critical, h) = match h {
                Some(h) => {
                    let crit = if *pi > 0.0 {
                        elbow::choose_elbow_threshold(*pi, *m, *delta)?.log_h_critical
                    } else {
                        f64::NEG_INFINITY
                    };
                    (crit, *h)
                }
                None => {
                    let t = elbow::choose_elbow_threshold(*pi, *m, *delta)?;
                    if !(t.h_cut > 0.0) {
                        return Err(Error::Domain(format!(
                            "the critical age e^{} underflows; pass h explicitly",
                            t.log_h_critical
                        )));
                    }
                    (t.log_h_critical, t.h_cut)
                }
            };
            let off = elbow::offspring_moments(*pi, h, *m, *delta, *draws, crate::rng::mix64(seed))?;
            let e = elbow::simulate_elbow_bp(*pi, h, *m, *delta, *generations, *cap, *replicas, seed)?;
            let rec = ElbowRecord {
                m: *m,
                delta: *delta,
                pi: *pi,
                log_h_critical,
                h,
                mean_closed_form: elbow::elbow_bp_mean(*pi, h, *m, *delta)?,
                offspring_mean: off.mean(),
                offspring_se: off.se(),
                draws: *draws,
                generations: *generations,
                cap: *cap,
                replicas: *replicas,
                survivals: e.survivals,
                survival_frac: e.survival_frac,
                ci95_half_width: e.ci95_half_width,
            };
            tabular(spec, &prov, std::slice::from_ref(&rec), &rec)?
        }
        Command::Spectral {
            m,
            delta,
            b,
            grid,
            x_min,
            x_max,
            test_ages,
        } => {
            let report = spectral::report(*m, *delta, *b)?;
            let mut residuals = Vec::new();
            if *delta > 0.0 && !test_ages.is_empty() {
                let mut bs = vec![None];
                if b.is_some() {
                    bs.insert(0, *b);
                }
                for bb in bs {
                    for method in [ResidualMethod::ClosedForm, ResidualMethod::Quadrature] {
                        residuals.push(spectral::eigen_residual(*m, *delta, bb, test_ages, method)?);
                    }
                }
            }
            let (refinement, limit) = match b {
                Some(b) if !grid.is_empty() => (
                    spectral::refinement_study(*m, *delta, *b, *x_min, *x_max, grid)?,
                    Some(spectral::finite_section_limit(*m, *delta, *b)?),
                ),
                _ => (Vec::new(), None),
            };
            let result = SpectralResult {
                report,
                residuals,
                refinement,
                finite_section_limit: limit,
            };
            tabular(spec, &prov, &result.refinement, &result)?
        }
        Command::Threshold { m, delta } => {
            let report = spectral::report(*m, *delta, None)?;
            let rec = ThresholdRecord {
                m: *m,
                delta: *delta,
                chi: report.constants.chi,
                pi_c: report.pi_c,
                r: report.r.is_finite().then_some(report.r),
                lambda_m: report.lambda_m,
            };
            tabular(spec, &prov, std::slice::from_ref(&rec), &report)?
        }
        Command::Spine {
            m,
            delta,
            b,
            steps,
            budget,
        } => match spec.format {
            Format::Json => json_bytes(
                &spine::empirical_vs_analytic_report(*m, *delta, *b, *budget, seed)?,
                &prov,
            )?,
            Format::Csv => {
                let t = spine::simulate_spine(*m, *delta, *b, *steps, seed)?;
                let rows: Vec<SpineStepRow> = t
                    .labels
                    .iter()
                    .zip(&t.log_ages)
                    .enumerate()
                    .map(|(step, (&label, &log_age))| SpineStepRow { step, label, log_age })
                    .collect();
                csv_bytes(&rows, Some(&prov))?
            }
            Format::Text => return Err(unsupported(spec)),
        },
        Command::Expander {
            variant,
            m,
            delta,
            epsilon,
            alpha_probe,
            n_grid,
            replicas,
        } => {
            let cfg = PaConfig::new(*variant, *m, *delta, 2, seed);
            let rows = expander::expansion_experiment(&cfg, *epsilon, *alpha_probe, n_grid, *replicas, seed)?;
            tabular(spec, &prov, &rows, &rows)?
        }
        Command::Scores {
            m,
            delta,
            pi,
            b,
            generations,
            replicas,
        } => {
            let params = PptParams::new(*m, *delta, *pi)?;
            let score = ppt::score_trajectory(&params, *generations, *replicas, seed)?;
            let martingale = match b {
                Some(b) if *pi > 0.0 => Some(ppt::martingale_trajectory(
                    &params.with_b(*b)?,
                    *generations,
                    *replicas,
                    crate::rng::mix64(seed),
                )?),
                _ => None,
            };
            let mut rows = score.rows.clone();
            if let Some(mt) = &martingale {
                for (row, mrow) in rows.iter_mut().zip(&mt.rows) {
                    row.martingale_mean = mrow.martingale_mean;
                    row.martingale_se = mrow.martingale_se;
                }
            }
            let result = ScoresResult { score, martingale };
            tabular(spec, &prov, &rows, &result)?
        }
    };
    if let Some(path) = &spec.output {
        write_file(path, &bytes)?;
    }
    Ok(Artifact {
        format: spec.format,
        bytes,
    })
}

/// Worker count from [`THREADS_ENV`], else the machine's parallelism.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `spec` on a dedicated pool of `spec.threads` (or [`default_threads`]) workers.
pub fn run_in_pool(spec: &ExperimentSpec) -> Result<Artifact> {
    let threads = spec.threads.unwrap_or_else(default_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    pool.install(|| run(spec))
}
