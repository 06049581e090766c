use std::path::PathBuf;

use avgen_core::conditioner::ConditioningMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "avgen", version, about = "Score-based speech enhancement with layer-aggregated conditioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Experiment configuration (JSON); defaults are used for missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed relevant to the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training steps (train) or reverse-solver steps (enhance).
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Corrector steps per solver step.
    #[arg(long, global = true)]
    pub corrector: Option<usize>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<ConditioningMode>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

fn parse_mode(s: &str) -> Result<ConditioningMode, String> {
    s.parse().map_err(|e: avgen_core::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise a paired corpus.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a score network on the train split of a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint path; the log and summary are written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Compute per-item gradients on all cores.
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Enhance one file, or every test file of a corpus.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        /// Noisy input WAV (single-file mode).
        #[arg(long, requires = "output", conflicts_with = "corpus")]
        input: Option<PathBuf>,
        /// Embedding file for `--input`; required unless the mode is audio_only.
        #[arg(long)]
        emb: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Corpus whose test split is enhanced into `--out-dir`.
        #[arg(long, requires = "out_dir")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score enhanced files against the clean references of a corpus.
    Evaluate {
        /// Corpus providing clean references and mixing SNRs.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Directory of `<id>.wav` estimates.
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Corpus split to score.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[command(flatten)]
        common: Common,
    },
    /// Run an oracle suite and emit a JSON report.
    Diagnose {
        kind: DiagnoseKind,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Render a log-magnitude spectrogram as a binary PGM image.
    PlotSpec {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the effective configuration and its hash.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiagnoseKind {
    Kernel,
    Gradcheck,
    SamplerOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}
