use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use streampca::harness::Variant;
use streampca::UpdateRule;

use crate::settings::RunSettings;

#[derive(Debug, Parser)]
#[command(
    name = "streampca",
    version,
    about = "Streaming PCA with distributed Krasulina/Oja updates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte-Carlo experiment and write the aggregate trace.
    Run(Box<RunArgs>),
    /// Print the step-size and mini-batch plan for a problem.
    Plan(PlanArgs),
    /// Write a synthetic dataset drawn from a known covariance.
    Synth(SynthArgs),
    /// Evaluate the expected-error bound and the epoch ladder.
    Bound(BoundArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Krasulina,
    Oja,
}

impl From<Algo> for UpdateRule {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Krasulina => UpdateRule::Krasulina,
            Algo::Oja => UpdateRule::Oja,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Single,
    Dk,
    Dmk,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Single => Variant::Single,
            VariantArg::Dk => Variant::Dk,
            VariantArg::Dmk => Variant::Dmk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetName {
    Fig1a,
    Fig1b,
    Eigengap,
    Dims,
    Normbound,
    Mnist,
    Higgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML file with flat keys (see README); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Experiment grid to start from.
    #[arg(long, value_enum)]
    pub preset: Option<PresetName>,
    /// Divides the preset's sample count T.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Total samples T arriving at the system.
    #[arg(long)]
    pub samples: Option<u64>,
    /// Network-wide mini-batch B.
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub local_batch: Option<usize>,
    /// Samples discarded per iteration.
    #[arg(long)]
    pub mu: Option<u64>,
    /// Step-size constant c in c/(L+t).
    #[arg(long)]
    pub step_c: Option<f64>,
    /// Step-size offset L in c/(L+t).
    #[arg(long = "step-L")]
    pub step_l: Option<f64>,
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Trace CSV path; the manifest is written next to it.
    #[arg(long, default_value = "trace.csv")]
    pub out: PathBuf,
    /// Worker threads for trials; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Dataset file (CSV or IDX) instead of synthetic data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub eigengap: Option<f64>,
    /// Draw u ~ U(-a, a) instead of Gaussian samples.
    #[arg(long)]
    pub half_range: Option<f64>,
    /// Rescale the bounded spectrum so that ||x|| <= r.
    #[arg(long)]
    pub norm_bound: Option<f64>,
    /// Seed of the random eigenbasis.
    #[arg(long)]
    pub spec_seed: Option<u64>,
    /// Approximate number of logarithmically spaced trace points.
    #[arg(long)]
    pub trace_points: Option<usize>,
    /// Streaming rate R_s (samples/s); with the other two rates sets mu.
    #[arg(long)]
    pub rate_stream: Option<f64>,
    /// Per-node processing rate R_p (samples/s).
    #[arg(long)]
    pub rate_process: Option<f64>,
    /// Network summation rate R_c (sums/s).
    #[arg(long)]
    pub rate_comm: Option<f64>,
}

impl RunArgs {
    /// Settings given explicitly on the command line.
    pub fn overrides(&self) -> RunSettings {
        RunSettings {
            rule: self.algo.map(Into::into),
            variant: self.variant.map(Into::into),
            nodes: self.nodes,
            local_batch: self.local_batch,
            minibatch: self.minibatch,
            mu: self.mu,
            c: self.step_c,
            l: self.step_l,
            total_samples: self.samples,
            trials: self.trials,
            seed: self.seed,
            trace_points: self.trace_points,
            normalize: None,
            data: self.data.clone(),
            dim: self.dim,
            lambda1: self.lambda1,
            eigengap: self.eigengap,
            half_range: self.half_range,
            norm_bound: self.norm_bound,
            spec_seed: self.spec_seed,
            rate_stream: self.rate_stream,
            rate_process: self.rate_process,
            rate_comm: self.rate_comm,
        }
    }
}

/// Problem constants shared by `plan` and `bound`.
#[derive(Debug, Args)]
pub struct ProblemArgs {
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.2)]
    pub eigengap: f64,
    /// Almost-sure norm bound r on the samples.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Single-sample variance sigma^2.
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Failure probability.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Total samples T.
    #[arg(long)]
    pub samples: u64,
    /// c0 = 2c(lambda1 - lambda2); must exceed 2.
    #[arg(long)]
    pub c0: f64,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub local_batch: Option<usize>,
    /// Network-wide mini-batch B (defaults to nodes x local batch, else 1).
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub mu: u64,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// c0 = 2c(lambda1 - lambda2); must exceed 2.
    #[arg(long, conflicts_with = "step_c", required_unless_present = "step_c")]
    pub c0: Option<f64>,
    /// Step-size constant c.
    #[arg(long)]
    pub step_c: Option<f64>,
    /// Step-size offset L; defaults to the main lower bound.
    #[arg(long = "step-L")]
    pub step_l: Option<f64>,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Divides sigma^2 by N (distributed setting).
    #[arg(long, default_value_t = 1)]
    pub nodes: usize,
    /// Iteration counts at which to evaluate the bound.
    #[arg(long, value_delimiter = ',')]
    pub at: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.2)]
    pub eigengap: f64,
    /// Draw u ~ U(-a, a) instead of Gaussian samples.
    #[arg(long)]
    pub half_range: Option<f64>,
    /// Number of rows n.
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the random eigenbasis (defaults to --seed).
    #[arg(long)]
    pub spec_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}
