use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coattn::data::{load_corpus, CorpusFormat};
use coattn::error::ErrorClass;
use coattn::run::{read_summary, run_train, LoadedModel, RunConfig};
use coattn::{Error, Result};

/// Environment variable that overrides the output directory of `train`.
const OUTPUT_DIR_ENV: &str = "COATTN_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "coattn",
    version,
    about = "Source-dependent essay scoring with a co-attention network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate on a corpus, writing checkpoints, a log and a summary.
    Train(TrainArgs),
    /// Print the integer score of one essay.
    Score(InferArgs),
    /// Print per-sentence attention weights of one essay.
    Attend(InferArgs),
    /// QWK of a checkpoint on a corpus, or a paired t-test of two summaries.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<String>,
    #[arg(long)]
    corpus_format: Option<String>,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    article: Option<String>,
    #[arg(long)]
    embeddings: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long)]
    score_min: Option<String>,
    #[arg(long)]
    score_max: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    /// `f32` or `f64`.
    #[arg(long)]
    precision: Option<String>,
    /// Disable gradient-norm clipping.
    #[arg(long)]
    no_clip: bool,
    /// Freeze the embedding table.
    #[arg(long)]
    freeze_embeddings: bool,
    /// Any other run setting, e.g. `--set lstm_hidden=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            config.set("output_dir", &dir)?;
        }
        let flags = [
            ("corpus", &self.corpus),
            ("corpus_format", &self.corpus_format),
            ("prompt", &self.prompt),
            ("article", &self.article),
            ("embeddings", &self.embeddings),
            ("output_dir", &self.output_dir),
            ("score_min", &self.score_min),
            ("score_max", &self.score_max),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("folds", &self.folds),
            ("precision", &self.precision),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        if self.no_clip {
            config.set("clip_norm", "none")?;
        }
        if self.freeze_embeddings {
            config.set("trainable_embeddings", "false")?;
        }
        for pair in &self.overrides {
            config.apply_override(pair)?;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Plain-text essay.
    #[arg(long)]
    essay: PathBuf,
    /// Plain-text source article.
    #[arg(long)]
    article: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, requires_all = ["corpus", "article"], conflicts_with = "summary")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "canonical_tsv")]
    corpus_format: String,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    article: Option<PathBuf>,
    /// Summary file of the system under test.
    #[arg(long, requires = "against")]
    summary: Option<PathBuf>,
    /// Summary file of the system to compare against.
    #[arg(long)]
    against: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn train(args: &TrainArgs) -> Result<()> {
    let config = args.resolve()?;
    let summary = run_train(&config, |line| eprintln!("{line}"))?;
    println!("mean_qwk\t{:.6}", summary.mean_qwk);
    println!(
        "summary\t{}",
        config.output_dir.join(coattn::run::SUMMARY_FILE).display()
    );
    Ok(())
}

fn score(args: &InferArgs) -> Result<()> {
    let model = LoadedModel::load(&args.checkpoint)?;
    println!("{}", model.score(&read_text(&args.essay)?, &read_text(&args.article)?)?);
    Ok(())
}

fn attend(args: &InferArgs) -> Result<()> {
    let model = LoadedModel::load(&args.checkpoint)?;
    for row in model.attention(&read_text(&args.essay)?, &read_text(&args.article)?)? {
        println!("{row}");
    }
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    if let (Some(checkpoint), Some(corpus), Some(article)) = (&args.checkpoint, &args.corpus, &args.article) {
        let model = LoadedModel::load(checkpoint)?;
        let format: CorpusFormat = args.corpus_format.parse()?;
        let records = load_corpus(corpus, format, args.prompt.as_deref(), Some(model.scale()))?;
        println!("essays\t{}", records.len());
        println!("qwk\t{:.6}", model.qwk(&records, &read_text(article)?)?);
        return Ok(());
    }
    if let (Some(summary), Some(against)) = (&args.summary, &args.against) {
        let (a, b) = (read_summary(summary)?, read_summary(against)?);
        let s = a.compare(&b, args.alpha)?;
        let t = s.t.map_or_else(|| "inf".to_string(), |t| format!("{t:.6}"));
        let flag = s.flag.map_or("-".to_string(), |f| f.to_string());
        println!(
            "system={}\tagainst={}\tmean={:.6}\tagainst_mean={:.6}\tt={t}\tp={:.6}\tdf={}\tflag={flag}\tsignificant={}",
            a.system, s.against, a.mean_qwk, b.mean_qwk, s.p, s.df, s.significant
        );
        return Ok(());
    }
    Err(Error::Usage(
        "evaluate needs --checkpoint with --corpus and --article, or --summary with --against".into(),
    ))
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Attend(a) => attend(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coattn: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
