use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ibner::model::LatentSource;
use ibner::Mode;

use crate::error::{CliError, Result};
use crate::run_config::RunConfigFile;

#[derive(Debug, Parser)]
#[command(
    name = "ibner",
    version,
    about = "Span-based NER with an information bottleneck and auxiliary VAEs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the VAEs (if any), train jointly, and write checkpoints and loss logs.
    Train(RunArgs),
    /// Score a checkpoint on a corpus with exact-match F1.
    Eval(EvalArgs),
    /// Greedy-decode every gold entity from its reconstruction posterior mean.
    Reconstruct(CheckpointArgs),
    /// Dump posterior means of gold entities as TSV.
    ExportPosteriors(ExportArgs),
    /// Train one model per (beta, gamma) cell and compare dev F1.
    Grid(GridArgs),
    /// Write the synthetic toy corpus and its synonym dictionary.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Dev corpus for checkpoint selection. Defaults to the training corpus.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Synonym dictionary (`surface<TAB>synonym` lines).
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl RunArgs {
    /// Config file values overridden by flags, validated.
    pub fn resolve(&self) -> Result<RunConfigFile> {
        let mut c = match &self.config {
            Some(p) => RunConfigFile::load(p)?,
            None => RunConfigFile::default(),
        };
        let m = &mut c.model;
        if let Some(v) = self.mode {
            m.mode = v;
        }
        if let Some(v) = self.beta {
            m.beta = v;
        }
        if let Some(v) = self.gamma {
            m.gamma = v;
        }
        if let Some(v) = self.seed {
            m.seed = v;
        }
        if let Some(v) = self.threshold {
            m.threshold = v;
        }
        for (slot, flag) in [
            (&mut c.out, &self.out),
            (&mut c.train, &self.corpus),
            (&mut c.dev, &self.dev),
            (&mut c.dict, &self.dict),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        c.model
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory; results are only printed when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    /// Probability above which a span is assigned a type. Defaults to the checkpoint's setting.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    #[arg(long, default_value = "z1")]
    pub source: LatentSource,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated beta values.
    #[arg(long, value_delimiter = ',')]
    pub betas: Vec<f64>,
    /// Comma-separated gamma values.
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub sentences: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}
