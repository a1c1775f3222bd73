use std::fmt;
use std::marker::PhantomData;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{paired_t_test, qwk, TTestFlag};
use crate::data::{encode_document, load_embeddings, make_folds, EssayRecord, ScoreScale, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{CoAttentionModel, ModelConfig, ModelParams};
use crate::tensor::Float;
use crate::training::{
    fit_with_selection, predict_scores, EpochRecord, Example, TrainConfig, TrainReport, TrainedModel,
};

/// Something that can be trained on one fold and then score essays.
pub trait FoldTrainer {
    type Model;

    fn fit(&mut self, fold: usize, train: &[EssayRecord], dev: &[EssayRecord]) -> Result<(Self::Model, TrainReport)>;

    fn predict(&self, model: &Self::Model, essays: &[EssayRecord]) -> Result<Vec<i64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub best_epoch: Option<usize>,
    pub best_dev_qwk: Option<f64>,
    pub test_qwk: f64,
}

impl fmt::Display for FoldResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        write!(
            f,
            "fold={}\ttrain={}\tdev={}\ttest={}\tbest_epoch={}\tbest_dev_qwk={}\ttest_qwk={:.6}",
            self.fold,
            self.train_size,
            self.dev_size,
            self.test_size,
            opt(self.best_epoch.map(|e| e.to_string())),
            opt(self.best_dev_qwk.map(|q| format!("{q:.6}"))),
            self.test_qwk
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub against: String,
    /// `None` when the differences have zero variance and `t` is infinite.
    pub t: Option<f64>,
    pub p: f64,
    pub df: usize,
    pub flag: Option<TTestFlag>,
    pub significant: bool,
}

/// Machine-readable outcome of a cross-validation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub system: String,
    pub folds: Vec<FoldResult>,
    pub per_fold_qwk: Vec<f64>,
    pub mean_qwk: f64,
    pub significance: Vec<Significance>,
}

impl CvSummary {
    /// Paired t-test of this run's per-fold QWKs against another run's.
    pub fn compare(&self, other: &CvSummary, alpha: f64) -> Result<Significance> {
        let t = paired_t_test(&self.per_fold_qwk, &other.per_fold_qwk)?;
        Ok(Significance {
            against: other.system.clone(),
            t: t.t.is_finite().then_some(t.t),
            p: t.p,
            df: t.df,
            flag: t.flag,
            significant: t.p < alpha,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary is plain data");
        s.push('\n');
        s
    }
}

/// Runs one train/dev/test cycle per fold and averages the test QWKs.
/// `on_fold` receives each fold's trained model as soon as it is ready.
pub fn cross_validate<F: FoldTrainer>(
    system: &str,
    records: &[EssayRecord],
    scale: &ScoreScale,
    trainer: &mut F,
    n_folds: usize,
    seed: u64,
    mut on_fold: impl FnMut(&FoldResult, &F::Model) -> Result<()>,
) -> Result<CvSummary> {
    let folds = make_folds(records.len(), n_folds, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let mut results = Vec::with_capacity(n_folds);
    for (k, split) in folds.iter().enumerate() {
        let wrap = |e: Error| Error::Fold {
            fold: k,
            source: Box::new(e),
        };
        let (train, dev, test) = (pick(&split.train), pick(&split.dev), pick(&split.test));
        let (model, report) = trainer.fit(k, &train, &dev).map_err(wrap)?;
        let predicted = trainer.predict(&model, &test).map_err(wrap)?;
        let gold: Vec<i64> = test.iter().map(|r| r.gold_score).collect();
        let test_qwk = qwk(&gold, &predicted, scale.min(), scale.max()).map_err(wrap)?;
        let result = FoldResult {
            fold: k,
            train_size: train.len(),
            dev_size: dev.len(),
            test_size: test.len(),
            best_epoch: report.best_epoch,
            best_dev_qwk: report.best_dev_qwk,
            test_qwk,
        };
        on_fold(&result, &model).map_err(wrap)?;
        results.push(result);
    }
    let per_fold_qwk: Vec<f64> = results.iter().map(|r| r.test_qwk).collect();
    let mean_qwk = per_fold_qwk.iter().sum::<f64>() / per_fold_qwk.len() as f64;
    Ok(CvSummary {
        system: system.to_string(),
        folds: results,
        per_fold_qwk,
        mean_qwk,
        significance: Vec::new(),
    })
}

/// Derives an independent seed for `(fold, stream)` from a run seed.
pub fn derive_seed(seed: u64, fold: usize, stream: u64) -> u64 {
    // SplitMix64 finalizer over the combined inputs.
    let mut z = seed
        .wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-epoch callback receiving `(fold, record)`.
pub type EpochHook = Box<dyn FnMut(usize, &EpochRecord)>;

/// The co-attention network as a [`FoldTrainer`]. Each fold gets its own
/// vocabulary (training essays plus the article), initialization and
/// training stream.
pub struct NeuralTrainer<T> {
    pub config: ModelConfig,
    pub train: TrainConfig,
    pub article: String,
    pub scale: ScoreScale,
    pub embeddings: Option<PathBuf>,
    /// Called with `(fold, record)` after every epoch.
    pub on_epoch: Option<EpochHook>,
    _float: PhantomData<T>,
}

impl<T: Float> NeuralTrainer<T> {
    pub fn new(config: ModelConfig, train: TrainConfig, article: String, scale: ScoreScale) -> Self {
        Self {
            config,
            train,
            article,
            scale,
            embeddings: None,
            on_epoch: None,
            _float: PhantomData,
        }
    }

    fn examples(&self, vocab: &Vocabulary, records: &[EssayRecord]) -> Result<Vec<Example>> {
        records
            .iter()
            .map(|r| {
                Ok(Example {
                    doc: encode_document(&r.text, vocab, &self.config).map_err(|e| match e {
                        Error::Degenerate(m) => Error::Degenerate(format!("essay {}: {m}", r.essay_id)),
                        other => other,
                    })?,
                    gold: r.gold_score,
                })
            })
            .collect()
    }
}

impl<T: Float> FoldTrainer for NeuralTrainer<T> {
    type Model = TrainedModel<T>;

    fn fit(
        &mut self,
        fold: usize,
        train: &[EssayRecord],
        dev: &[EssayRecord],
    ) -> Result<(TrainedModel<T>, TrainReport)> {
        let texts = train.iter().map(|r| r.text.as_str()).chain([self.article.as_str()]);
        let vocab = Vocabulary::build(texts, self.config.vocab_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.train.seed, fold, 0));
        let pretrained = match &self.embeddings {
            Some(path) => {
                let loaded = load_embeddings::<T, _>(path, &vocab, self.config.embed_dim, &mut rng)?;
                let mut table = crate::data::random_embeddings(self.config.vocab_size, self.config.embed_dim, &mut rng);
                let width = self.config.embed_dim * vocab.len();
                table.data_mut()[..width].copy_from_slice(loaded.matrix.data());
                Some(table)
            }
            None => None,
        };
        let params = ModelParams::init(&self.config, pretrained, &mut rng)?;
        let mut model = CoAttentionModel::new(self.config.clone(), params)?;
        let article = encode_document(&self.article, &vocab, &self.config)?;
        let (train_ex, dev_ex) = (self.examples(&vocab, train)?, self.examples(&vocab, dev)?);
        let config = TrainConfig {
            seed: derive_seed(self.train.seed, fold, 1),
            ..self.train
        };
        let on_epoch = &mut self.on_epoch;
        let report = fit_with_selection(&mut model, &train_ex, &dev_ex, &article, &self.scale, &config, |r| {
            if let Some(cb) = on_epoch.as_mut() {
                cb(fold, r);
            }
        })?;
        Ok((
            TrainedModel {
                model,
                vocab,
                scale: self.scale,
            },
            report,
        ))
    }

    fn predict(&self, trained: &TrainedModel<T>, essays: &[EssayRecord]) -> Result<Vec<i64>> {
        let article = encode_document(&self.article, &trained.vocab, &trained.model.config)?;
        let examples = self.examples(&trained.vocab, essays)?;
        predict_scores(&trained.model, &examples, &article, &trained.scale)
    }
}
