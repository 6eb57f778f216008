mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "emotech", version, about = "Multimodal (speech + text) emotion recognition")]
struct Cli {
    /// Worker threads for feature extraction and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a small synthetic corpus with class-distinct audio and transcripts.
    Synth(SynthArgs),
    /// Extract MFCC features and token ids for every record into the cache.
    Features(FeaturesArgs),
    /// Balance class counts with augmented copies.
    Augment(AugmentArgs),
    /// k-fold cross-validated training.
    Train(TrainArgs),
    /// Metrics of a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Class probabilities for one recording and its transcript.
    Predict(PredictArgs),
    /// Parameter breakdown of the network.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Utterances per class.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    per_class: u64,
    #[arg(long, default_value_t = 1.0)]
    min_secs: f64,
    #[arg(long, default_value_t = 2.0)]
    max_secs: f64,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Cache directory; `EMOTECH_CACHE_DIR` or `<manifest dir>/.emotech-cache` otherwise.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for synthetic WAVs, the combined manifest and provenance.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-class target count (default: size of the largest class).
    #[arg(long)]
    target: Option<usize>,
    /// Synonym table (`word<TAB>syn,syn`); `lexicon.tsv` next to the manifest is used if present.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Fraction of words touched by text operators.
    #[arg(long, default_value_t = 0.1)]
    text_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(2..))]
    folds: u64,
    /// Upper bound on epochs per fold; early stopping may end a fold sooner.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Fold over original recordings only; augmented copies follow their source.
    #[arg(long)]
    split_before_augment: bool,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    /// Run the modality × augmentation grid instead of a single fused model.
    #[arg(long)]
    ablation: bool,
    /// Use this vocabulary instead of building one from the manifest.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to `vocab.tsv` next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Also write `eval.json` and `confusion.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    wav: PathBuf,
    #[arg(long, default_value = "")]
    transcript: String,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Report a trained model instead of a freshly built one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 2843, value_parser = clap::value_parser!(u64).range(2..))]
    vocab_size: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Features(a) => commands::features(a),
        Command::Augment(a) => commands::augment(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
