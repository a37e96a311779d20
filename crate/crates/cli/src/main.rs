mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use perslm::config::ExperimentConfig;

/// Personalised LSTM language models: pretraining, transfer, evaluation and
/// a Kneser-Ney baseline.
#[derive(Parser, Debug)]
#[command(name = "perslm", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Experiment config of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set lr=0.2`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Output directory
    #[arg(long, env = "PERSLM_OUT", default_value = "out", global = true)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a vocabulary from sentence files and scripts
    BuildVocab {
        #[arg(long = "corpus")]
        corpora: Vec<PathBuf>,
        #[arg(long = "script")]
        scripts: Vec<PathBuf>,
    },
    /// Train a general model from scratch
    Pretrain {
        #[arg(long)]
        vocab: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "sentence-completion")]
        task: perslm::models::Task,
        /// Checkpoint file name inside the output directory
        #[arg(long, default_value = "general.ckpt")]
        name: String,
    },
    /// Personalise a general checkpoint under one transfer scheme
    Finetune {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Convert the checkpoint to the configured precision if they differ
        #[arg(long)]
        cast: bool,
    },
    /// Complete sentences or reply to messages, one input per line
    Generate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        max_len: Option<usize>,
        /// Sample at this temperature instead of decoding greedily
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Perplexity of a checkpoint on a dataset
    EvalPpl {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Style cross entropy of generated text against target corpora
    EvalStyle {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        /// `label=path` of a target corpus; repeatable
        #[arg(long = "target", value_parser = labelled, required = true)]
        targets: Vec<(String, PathBuf)>,
    },
    /// Pairwise style cross entropy between corpora
    SimilarityMatrix {
        #[arg(long)]
        vocab: PathBuf,
        /// `label=path` of a corpus; at least two
        #[arg(long = "corpus", value_parser = labelled, required = true)]
        corpora: Vec<(String, PathBuf)>,
    },
    /// Persona validation perplexity against personal data size
    SizeSweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
    },
    /// Style of generated outputs across fine-tuning epochs
    StyleConvergence {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Test inputs, one per line
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long = "target", value_parser = labelled, required = true)]
        targets: Vec<(String, PathBuf)>,
        #[arg(long, value_delimiter = ',', default_value = "0,10,20,40")]
        probe_epochs: Vec<usize>,
        /// Sample at this temperature instead of decoding greedily
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Estimate a modified Kneser-Ney model and write it in ARPA form
    NgramTrain {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
    },
    /// Perplexity of an ARPA model on a sentence file
    NgramPpl {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
}

/// Sentence files for sentence completion, TAB-separated scripts for
/// message-reply.
#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Held-out data; by default a seeded fraction of `--data`
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Keep only pairs replied by this speaker
    #[arg(long)]
    speaker: Option<String>,
}

#[derive(Args, Debug)]
struct SchemeArgs {
    #[arg(long, value_enum, default_value = "surplus")]
    scheme: SchemeName,
    /// Frozen LSTM layers for `fixed-n`
    #[arg(long)]
    fixed_n: Option<usize>,
    #[arg(long)]
    surplus_kind: Option<perslm::netcore::SurplusKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeName {
    Relearn,
    Surplus,
    FixedN,
}

fn labelled(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => Ok((label.to_string(), path.into())),
        _ => Err(format!("expected label=path, got {s:?}")),
    }
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for kv in &global.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| perslm::Error::Config(format!("override {kv:?} is not key=value")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = global.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = global.epochs {
        cfg.train.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Arguments as given, minus the output directory, so that manifests of
/// identical runs into different directories agree.
fn recorded_args() -> Vec<String> {
    let mut out = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--out" {
            args.next();
        } else if !a.starts_with("--out=") {
            out.push(a);
        }
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use perslm::Error;
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(Error::Training { .. }) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out = output::OutputDir::create(&cli.global.out)?;
    let name = commands::run(&cli.command, &cfg, out, &recorded_args())?;
    eprintln!("{name}: outputs in {}", cli.global.out.display());
    Ok(())
}
