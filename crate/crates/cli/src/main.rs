use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pacrit_core::harness::{self, Command, ExperimentSpec, Format, THREADS_ENV};
use pacrit_core::{RootStrength, Thinning, Variant};

#[derive(Parser, Debug)]
#[command(
    name = "pacrit",
    version,
    about = "Percolation experiments on preferential attachment graphs"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug)]
struct Global {
    /// Base seed; every replica stream is derived from it.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output format (each subcommand has its own default).
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Write the artifact here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Worker threads. Never changes the output bytes.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Csv,
    Json,
    Text,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum VariantArg {
    A,
    B,
    D,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::A => Variant::A,
            VariantArg::B => Variant::B,
            VariantArg::D => Variant::D,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ThinningArg {
    PerEdge,
    Intensity,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RootArg {
    Plain,
    SizeBiased,
}

#[derive(Args, Debug)]
struct Model {
    #[arg(long, default_value_t = 2)]
    m: u32,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    delta: f64,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Generate one PA graph (text: header `n m delta variant seed`, then 1-indexed edges).
    Generate {
        #[arg(long, value_enum, default_value = "b")]
        variant: VariantArg,
        #[command(flatten)]
        model: Model,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Coupled bond-percolation sweep over a pi grid.
    Sweep {
        #[arg(long, value_enum, default_value = "b")]
        variant: VariantArg,
        #[command(flatten)]
        model: Model,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Comma-separated retention probabilities.
        #[arg(long, value_delimiter = ',', required = true)]
        pis: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        replicas: usize,
    },
    /// Survival fraction of the percolated Polya point tree.
    PptSurvival {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        pi: f64,
        /// Truncate child ages at b times the parent age.
        #[arg(long)]
        b: Option<f64>,
        #[arg(long, default_value_t = 30)]
        generations: u32,
        /// Population counted as survival.
        #[arg(long, default_value_t = 10_000)]
        cap: usize,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
        #[arg(long, value_enum, default_value = "intensity")]
        thinning: ThinningArg,
        #[arg(long, value_enum, default_value = "plain")]
        root_strength: RootArg,
    },
    /// Single-type elbow branching process (delta <= 0).
    Elbow {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        pi: f64,
        /// Age cut; defaults to half the critical age.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, default_value_t = 30)]
        generations: u32,
        #[arg(long, default_value_t = 10_000)]
        cap: usize,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
        /// Offspring draws for the empirical mean.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Offspring operator spectrum, eigenfunction residuals and power iteration.
    Spectral {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        b: Option<f64>,
        /// Comma-separated power-iteration grid sizes (needs --b).
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 1e-6)]
        x_min: f64,
        #[arg(long, default_value_t = 1.0)]
        x_max: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.1,1,10")]
        test_ages: Vec<f64>,
    },
    /// Critical percolation threshold pi_c.
    Threshold {
        #[command(flatten)]
        model: Model,
    },
    /// Spine Markov chain: JSON closed-form checks, or a CSV trajectory.
    Spine {
        #[command(flatten)]
        model: Model,
        #[arg(long, default_value_t = 16.0)]
        b: f64,
        /// Trajectory length for CSV output.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Sample budget for the JSON checks.
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
    },
    /// Large-set edge expansion of PA graphs.
    Expander {
        #[arg(long, value_enum, default_value = "b")]
        variant: VariantArg,
        #[command(flatten)]
        model: Model,
        #[arg(long, default_value_t = 0.25)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha_probe: f64,
        #[arg(long, value_delimiter = ',', default_value = "10,12,14,16,18,20")]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        replicas: usize,
    },
    /// Per-generation score and martingale means on the percolated tree.
    Scores {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        pi: f64,
        /// Also track the martingale on the b-truncated tree.
        #[arg(long)]
        b: Option<f64>,
        #[arg(long, default_value_t = 10)]
        generations: u32,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
    },
}

fn command(sub: Sub) -> Command {
    match sub {
        Sub::Generate { variant, model, n } => Command::Generate {
            variant: variant.into(),
            m: model.m,
            delta: model.delta,
            n,
        },
        Sub::Sweep {
            variant,
            model,
            n,
            pis,
            replicas,
        } => Command::Sweep {
            variant: variant.into(),
            m: model.m,
            delta: model.delta,
            n,
            pis,
            replicas,
        },
        Sub::PptSurvival {
            model,
            pi,
            b,
            generations,
            cap,
            replicas,
            thinning,
            root_strength,
        } => Command::PptSurvival {
            m: model.m,
            delta: model.delta,
            pi,
            b,
            generations,
            cap,
            replicas,
            thinning: match thinning {
                ThinningArg::PerEdge => Thinning::PerEdge,
                ThinningArg::Intensity => Thinning::Intensity,
            },
            root_strength: match root_strength {
                RootArg::Plain => RootStrength::Plain,
                RootArg::SizeBiased => RootStrength::SizeBiased,
            },
        },
        Sub::Elbow {
            model,
            pi,
            h,
            generations,
            cap,
            replicas,
            draws,
        } => Command::Elbow {
            m: model.m,
            delta: model.delta,
            pi,
            h,
            generations,
            cap,
            replicas,
            draws,
        },
        Sub::Spectral {
            model,
            b,
            grid,
            x_min,
            x_max,
            test_ages,
        } => Command::Spectral {
            m: model.m,
            delta: model.delta,
            b,
            grid,
            x_min,
            x_max,
            test_ages,
        },
        Sub::Threshold { model } => Command::Threshold {
            m: model.m,
            delta: model.delta,
        },
        Sub::Spine {
            model,
            b,
            steps,
            budget,
        } => Command::Spine {
            m: model.m,
            delta: model.delta,
            b,
            steps,
            budget,
        },
        Sub::Expander {
            variant,
            model,
            epsilon,
            alpha_probe,
            n_grid,
            replicas,
        } => Command::Expander {
            variant: variant.into(),
            m: model.m,
            delta: model.delta,
            epsilon,
            alpha_probe,
            n_grid,
            replicas,
        },
        Sub::Scores {
            model,
            pi,
            b,
            generations,
            replicas,
        } => Command::Scores {
            m: model.m,
            delta: model.delta,
            pi,
            b,
            generations,
            replicas,
        },
    }
}

fn spec_from(cli: Cli) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(command(cli.command), cli.global.seed);
    if let Some(f) = cli.global.format {
        spec = spec.with_format(match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
            FormatArg::Text => Format::Text,
        });
    }
    if let Some(p) = cli.global.output {
        spec = spec.with_output(p);
    }
    if let Some(t) = cli.global.threads {
        spec = spec.with_threads(t);
    }
    spec
}

fn run(spec: &ExperimentSpec) -> anyhow::Result<()> {
    let violations = harness::validate(spec);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("error: {v}");
        }
        bail!("{} invalid parameter(s)", violations.len());
    }
    let artifact = harness::run_in_pool(spec).with_context(|| format!("{} failed", spec.command.name()))?;
    if spec.output.is_none() {
        let mut out = std::io::stdout().lock();
        out.write_all(&artifact.bytes)?;
        out.flush()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let spec = spec_from(Cli::parse());
    match run(&spec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
