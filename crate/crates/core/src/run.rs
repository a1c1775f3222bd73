//! Run configuration and the command pipelines behind the `coattn` binary.
//!
//! A run file is flat `key = value` text; `#` starts a comment.
//!
//! ```text
//! corpus = data/prompt3.tsv
//! article = data/prompt3_article.txt
//! score_min = 0
//! score_max = 3
//! seed = 7
//! ```

use std::cell::RefCell;
use std::fmt::{self, Write as _};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::str::FromStr;

use crate::data::{encode_document, load_corpus, CorpusFormat, EssayRecord, ScoreScale};
use crate::error::{Error, Result};
use crate::evaluation::{attention_report, cross_validate, qwk, AttentionRow, CvSummary, NeuralTrainer};
use crate::model::ModelConfig;
use crate::tensor::Float;
use crate::training::{
    checkpoint_dtype, load_checkpoint, predict_scores, save_checkpoint, set_config_field, Example, TrainConfig,
    TrainedModel,
};

/// Element type used for training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(Error::Config(format!("precision must be f32 or f64, got `{other}`"))),
        }
    }
}

/// Everything a training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub corpus_format: CorpusFormat,
    pub prompt: Option<String>,
    pub article: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub score_min: Option<i64>,
    pub score_max: Option<i64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: usize,
    pub precision: Precision,
    /// Name recorded in the summary file.
    pub system: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            corpus_format: CorpusFormat::default(),
            prompt: None,
            article: None,
            embeddings: None,
            output_dir: PathBuf::from("runs"),
            score_min: None,
            score_max: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            folds: 5,
            precision: Precision::default(),
            system: "co-attention".into(),
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{value}` is not a valid {key}")))
}

impl RunConfig {
    /// Reads a run file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::default();
        config.apply_text(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(config)
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_class(&e))))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt = &mut self.train.optimizer;
        match key {
            "corpus" => self.corpus = Some(value.into()),
            "corpus_format" => self.corpus_format = value.parse()?,
            "prompt" => self.prompt = Some(value.into()),
            "article" => self.article = Some(value.into()),
            "embeddings" => self.embeddings = (!value.is_empty()).then(|| value.into()),
            "output_dir" => self.output_dir = value.into(),
            "score_min" => self.score_min = Some(parse(key, value)?),
            "score_max" => self.score_max = Some(parse(key, value)?),
            "seed" => self.train.seed = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "learning_rate" => opt.learning_rate = parse(key, value)?,
            "momentum" => opt.momentum = parse(key, value)?,
            "decay" => opt.decay = parse(key, value)?,
            "epsilon" => opt.epsilon = parse(key, value)?,
            "clip_norm" => {
                opt.clip_norm = match value {
                    "none" | "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "precision" => self.precision = value.parse()?,
            "system" => self.system = value.into(),
            other => set_config_field(&mut self.model, other, value)?,
        }
        Ok(())
    }

    /// Score range, once both ends are set.
    pub fn scale(&self) -> Result<ScoreScale> {
        match (self.score_min, self.score_max) {
            (Some(lo), Some(hi)) => {
                ScoreScale::new(lo, hi).map_err(|_| Error::Config(format!("score range [{lo}, {hi}] is empty")))
            }
            _ => Err(Error::Config("score_min and score_max are required".into())),
        }
    }

    /// Checks that a training run can start: required keys, existing
    /// input files and consistent settings.
    pub fn validate(&self) -> Result<()> {
        let corpus = self
            .corpus
            .as_ref()
            .ok_or_else(|| Error::Config("corpus is required".into()))?;
        let article = self
            .article
            .as_ref()
            .ok_or_else(|| Error::Config("article is required".into()))?;
        for path in [Some(corpus), Some(article), self.embeddings.as_ref()]
            .into_iter()
            .flatten()
        {
            if !path.is_file() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        self.scale()?;
        self.model.validate()?;
        if self.train.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.folds < 3 {
            return Err(Error::Config(format!("folds must be at least 3, got {}", self.folds)));
        }
        let opt = &self.train.optimizer;
        if !(opt.learning_rate >= 0.0 && (0.0..1.0).contains(&opt.momentum) && (0.0..1.0).contains(&opt.decay)) {
            return Err(Error::Config("learning_rate, momentum or decay out of range".into()));
        }
        if opt.epsilon.is_nan() || opt.epsilon <= 0.0 || opt.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(Error::Config("epsilon and clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// The resolved configuration as a run file.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let num = |v: Option<i64>| v.map(|v| v.to_string()).unwrap_or_default();
        let opt = &self.train.optimizer;
        let entries = [
            ("corpus", path(&self.corpus)),
            ("corpus_format", self.corpus_format.to_string()),
            ("prompt", self.prompt.clone().unwrap_or_default()),
            ("article", path(&self.article)),
            ("embeddings", path(&self.embeddings)),
            ("output_dir", self.output_dir.display().to_string()),
            ("score_min", num(self.score_min)),
            ("score_max", num(self.score_max)),
            ("seed", self.train.seed.to_string()),
            ("epochs", self.train.epochs.to_string()),
            ("batch_size", self.train.batch_size.to_string()),
            ("folds", self.folds.to_string()),
            ("learning_rate", opt.learning_rate.to_string()),
            ("momentum", opt.momentum.to_string()),
            ("decay", opt.decay.to_string()),
            ("epsilon", opt.epsilon.to_string()),
            ("clip_norm", opt.clip_norm.map_or("none".into(), |c| c.to_string())),
            ("precision", self.precision.to_string()),
            ("system", self.system.clone()),
        ];
        for (k, v) in entries {
            if !v.is_empty() {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        let m = &self.model;
        let model = [
            ("embed_dim", m.embed_dim.to_string()),
            ("conv_kernel", m.conv_kernel.to_string()),
            ("conv_filters", m.conv_filters.to_string()),
            ("lstm_hidden", m.lstm_hidden.to_string()),
            ("modeling_hidden", m.modeling_hidden.to_string()),
            ("dropout_rate", m.dropout_rate.to_string()),
            ("vocab_size", m.vocab_size.to_string()),
            ("max_sentences", m.max_sentences.to_string()),
            ("max_tokens", m.max_tokens.to_string()),
            ("conv_activation", m.conv_activation.to_string()),
            ("trainable_embeddings", m.trainable_embeddings.to_string()),
        ];
        for (k, v) in model {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn strip_class(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("config error: ").map(str::to_string).unwrap_or(s)
}

/// File names written into the output directory by [`run_train`].
pub const SUMMARY_FILE: &str = "summary.json";
pub const LOG_FILE: &str = "train.log";
pub const RESOLVED_CONFIG_FILE: &str = "run.conf";

pub fn checkpoint_file_name(fold: usize) -> String {
    format!("fold{fold}.ckpt")
}

/// Appends lines to the training log and forwards them to `echo`. The
/// first write failure is kept and reported when the run finishes.
struct LogSink {
    file: File,
    path: PathBuf,
    failed: Option<io::Error>,
    echo: Box<dyn FnMut(&str)>,
}

impl LogSink {
    fn line(&mut self, line: &str) {
        if self.failed.is_none() {
            if let Err(e) = writeln!(self.file, "{line}") {
                self.failed = Some(e);
            }
        }
        (self.echo)(line);
    }

    fn check(&mut self) -> Result<()> {
        match self.failed.take() {
            Some(e) => Err(Error::io(&self.path, e)),
            None => Ok(()),
        }
    }
}

/// Cross-validates the network as configured, writing one checkpoint per
/// fold, an append-only log and the summary file into `output_dir`.
/// `echo` sees every log line.
pub fn run_train(config: &RunConfig, echo: impl FnMut(&str) + 'static) -> Result<CvSummary> {
    config.validate()?;
    match config.precision {
        Precision::F32 => train_as::<f32>(config, Box::new(echo)),
        Precision::F64 => train_as::<f64>(config, Box::new(echo)),
    }
}

fn train_as<T: Float>(config: &RunConfig, echo: Box<dyn FnMut(&str)>) -> Result<CvSummary> {
    let scale = config.scale()?;
    let corpus = config.corpus.as_deref().expect("validated");
    let article_path = config.article.as_deref().expect("validated");
    let records = load_corpus(corpus, config.corpus_format, config.prompt.as_deref(), Some(scale))?;
    let article = fs::read_to_string(article_path).map_err(|e| Error::io(article_path, e))?;

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let conf_path = out.join(RESOLVED_CONFIG_FILE);
    fs::write(&conf_path, config.to_text()).map_err(|e| Error::io(&conf_path, e))?;
    let log_path = out.join(LOG_FILE);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let sink = Rc::new(RefCell::new(LogSink {
        file,
        path: log_path,
        failed: None,
        echo,
    }));
    sink.borrow_mut().line(&format!(
        "run\tsystem={}\tessays={}\tfolds={}\tseed={}\tprecision={}",
        config.system,
        records.len(),
        config.folds,
        config.train.seed,
        config.precision
    ));

    let mut trainer = NeuralTrainer::<T>::new(config.model.clone(), config.train, article, scale);
    trainer.embeddings = config.embeddings.clone();
    let epoch_sink = Rc::clone(&sink);
    trainer.on_epoch = Some(Box::new(move |fold, record| {
        epoch_sink.borrow_mut().line(&format!("fold={fold}\t{record}"));
    }));
    let summary = cross_validate(
        &config.system,
        &records,
        &scale,
        &mut trainer,
        config.folds,
        config.train.seed,
        |result, model| {
            let path = out.join(checkpoint_file_name(result.fold));
            save_checkpoint(model, &path)?;
            let mut sink = sink.borrow_mut();
            sink.line(&result.to_string());
            sink.check()
        },
    )?;
    let mut sink = sink.borrow_mut();
    sink.line(&format!("mean_qwk={:.6}", summary.mean_qwk));
    sink.check()?;
    let summary_path = out.join(SUMMARY_FILE);
    fs::write(&summary_path, summary.to_json()).map_err(|e| Error::io(&summary_path, e))?;
    Ok(summary)
}

/// A checkpoint loaded at whichever precision it was saved in.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedModel {
    F32(TrainedModel<f32>),
    F64(TrainedModel<f64>),
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        match checkpoint_dtype(path)?.as_str() {
            "f64" => Ok(Self::F64(load_checkpoint(path)?)),
            _ => Ok(Self::F32(load_checkpoint(path)?)),
        }
    }

    pub fn scale(&self) -> ScoreScale {
        match self {
            Self::F32(m) => m.scale,
            Self::F64(m) => m.scale,
        }
    }

    /// Integer score of one essay in the prompt's range.
    pub fn score(&self, essay: &str, article: &str) -> Result<i64> {
        match self {
            Self::F32(m) => score_with(m, essay, article),
            Self::F64(m) => score_with(m, essay, article),
        }
    }

    /// Integer scores of many essays against one article.
    pub fn score_all(&self, essays: &[EssayRecord], article: &str) -> Result<Vec<i64>> {
        match self {
            Self::F32(m) => score_all_with(m, essays, article),
            Self::F64(m) => score_all_with(m, essays, article),
        }
    }

    pub fn attention(&self, essay: &str, article: &str) -> Result<Vec<AttentionRow>> {
        match self {
            Self::F32(m) => attention_report(m, essay, article),
            Self::F64(m) => attention_report(m, essay, article),
        }
    }

    /// QWK of the model's scores against the records' gold scores.
    pub fn qwk(&self, essays: &[EssayRecord], article: &str) -> Result<f64> {
        let predicted = self.score_all(essays, article)?;
        let gold: Vec<i64> = essays.iter().map(|r| r.gold_score).collect();
        let scale = self.scale();
        qwk(&gold, &predicted, scale.min(), scale.max())
    }
}

fn score_with<T: Float>(m: &TrainedModel<T>, essay: &str, article: &str) -> Result<i64> {
    let config = &m.model.config;
    let essay = encode_document(essay, &m.vocab, config)?;
    let article = encode_document(article, &m.vocab, config)?;
    let y = m.model.predict(&essay, &article)?;
    m.scale.unscale(y.to_f64_lossy())
}

fn score_all_with<T: Float>(m: &TrainedModel<T>, essays: &[EssayRecord], article: &str) -> Result<Vec<i64>> {
    let config = &m.model.config;
    let article = encode_document(article, &m.vocab, config)?;
    let examples = essays
        .iter()
        .map(|r| {
            Ok(Example {
                doc: encode_document(&r.text, &m.vocab, config)?,
                gold: r.gold_score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    predict_scores(&m.model, &examples, &article, &m.scale)
}

/// Reads a summary file written by [`run_train`].
pub fn read_summary(path: &Path) -> Result<CvSummary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}
