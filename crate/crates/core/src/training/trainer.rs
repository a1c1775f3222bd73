use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::optim::{rmsprop_step, OptimizerState, RmsPropConfig};
use crate::data::{EncodedDocument, ScoreScale};
use crate::error::{Error, Result};
use crate::evaluation::qwk;
use crate::model::{co_attend, encode, CoAttentionModel, ModelParams};
use crate::tensor::{Float, Tape, Tensor, Var};

/// An encoded essay with its integer gold score.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub doc: EncodedDocument,
    pub gold: i64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: RmsPropConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 100,
            seed: 0,
            optimizer: RmsPropConfig::default(),
        }
    }
}

/// Mean squared error over plain values.
pub fn mse(predictions: &[f64], golds: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != golds.len() {
        return Err(Error::Validation(format!(
            "mse needs equal nonempty lengths, got {} and {}",
            predictions.len(),
            golds.len()
        )));
    }
    let sum: f64 = predictions.iter().zip(golds).map(|(y, g)| (y - g).powi(2)).sum();
    Ok(sum / predictions.len() as f64)
}

/// `(1/N)·Σ (y_i − y'_i)²` recorded on the tape; `predictions` is `[N]`.
pub fn mse_loss<T: Float>(tape: &Tape<T>, predictions: Var, golds: &[T]) -> Result<Var> {
    let n = tape.shape(predictions).iter().product::<usize>();
    if golds.is_empty() || n != golds.len() {
        return Err(Error::Validation(format!(
            "mse needs equal nonempty lengths, got {n} and {}",
            golds.len()
        )));
    }
    let target = tape.constant(Tensor::new(&tape.shape(predictions), golds.to_vec())?);
    let diff = tape.sub(predictions, target)?;
    tape.mean(tape.mul(diff, diff)?)
}

/// One optimizer step on a minibatch. The article is encoded once on the
/// batch tape, so it shares a single dropout draw across the batch.
pub fn train_batch<T: Float>(
    model: &mut CoAttentionModel<T>,
    batch: &[&Example],
    article: &EncodedDocument,
    scale: &ScoreScale,
    state: &mut OptimizerState<T>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let tape = Tape::new();
    let vars = model.register(&tape);
    let dropout = model.config.dropout_rate > 0.0;
    let a = encode(&tape, &vars, article, &model.config, dropout.then_some(&mut *rng))?;
    let mut ys = Vec::with_capacity(batch.len());
    let mut golds = Vec::with_capacity(batch.len());
    for ex in batch {
        let e = encode(&tape, &vars, &ex.doc, &model.config, dropout.then_some(&mut *rng))?;
        ys.push(co_attend(&tape, &vars, e.hidden, a.hidden)?.y);
        golds.push(T::from_f64_lossy(scale.scale(ex.gold)?));
    }
    let preds = tape.concat(&ys, 0)?;
    let loss = mse_loss(&tape, preds, &golds)?;
    let value = tape.scalar(loss).to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    let grads = tape.backward(loss)?;
    let flat: Vec<Vec<T>> = vars
        .ordered()
        .into_iter()
        .zip(model.params.named())
        .map(|(v, (_, t))| grads.get_or_zeros(v, t.len()))
        .collect();
    rmsprop_step(&mut model.params, &flat, state)?;
    Ok(value)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean loss over all examples of the epoch.
    pub mean_loss: f64,
    pub batch_losses: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

/// Shuffles `train` with `rng`, then steps through minibatches of at most
/// `batch_size`.
pub fn train_epoch<T: Float>(
    model: &mut CoAttentionModel<T>,
    train: &[Example],
    article: &EncodedDocument,
    scale: &ScoreScale,
    batch_size: usize,
    state: &mut OptimizerState<T>,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    if train.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<&Example> = train.iter().collect();
    order.shuffle(rng);
    let mut stats = EpochStats {
        mean_loss: 0.0,
        batch_losses: Vec::new(),
        batch_sizes: Vec::new(),
    };
    for (b, batch) in order.chunks(batch_size).enumerate() {
        let loss = train_batch(model, batch, article, scale, state, rng).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("batch {b}: {m}")),
            other => other,
        })?;
        stats.mean_loss += loss * batch.len() as f64;
        stats.batch_losses.push(loss);
        stats.batch_sizes.push(batch.len());
    }
    stats.mean_loss /= train.len() as f64;
    Ok(stats)
}

/// Eval-mode integer predictions.
pub fn predict_scores<T: Float>(
    model: &CoAttentionModel<T>,
    examples: &[Example],
    article: &EncodedDocument,
    scale: &ScoreScale,
) -> Result<Vec<i64>> {
    let docs: Vec<EncodedDocument> = examples.iter().map(|e| e.doc.clone()).collect();
    model
        .predict_batch(&docs, article)?
        .into_iter()
        .map(|y| scale.unscale(y.to_f64_lossy()))
        .collect()
}

/// QWK of eval-mode predictions against the gold scores.
pub fn evaluate_qwk<T: Float>(
    model: &CoAttentionModel<T>,
    examples: &[Example],
    article: &EncodedDocument,
    scale: &ScoreScale,
) -> Result<f64> {
    let predicted = predict_scores(model, examples, article, scale)?;
    let gold: Vec<i64> = examples.iter().map(|e| e.gold).collect();
    qwk(&gold, &predicted, scale.min(), scale.max())
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_qwk: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={}\ttrain_loss={:.6}\tdev_qwk={:.6}",
            self.epoch, self.train_loss, self.dev_qwk
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_dev_qwk: Option<f64>,
}

impl TrainReport {
    /// Index of the highest dev QWK, earliest on ties.
    pub fn select_best(dev_qwks: &[f64]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &q) in dev_qwks.iter().enumerate() {
            if best.is_none_or(|b| q > dev_qwks[b]) {
                best = Some(i);
            }
        }
        best
    }
}

/// A failed run keeps whatever epochs completed.
#[derive(Debug, thiserror::Error)]
#[error("training stopped after {} epoch(s): {source}", report.epochs.len())]
pub struct FitFailure {
    pub report: Box<TrainReport>,
    #[source]
    pub source: Error,
}

impl From<FitFailure> for Error {
    fn from(f: FitFailure) -> Self {
        f.source
    }
}

/// Trains for `config.epochs`, scoring the dev set after each epoch, and
/// leaves `model` holding the parameters of the best dev-QWK epoch.
/// `on_epoch` sees each record as it is produced.
pub fn fit_with_selection<T: Float>(
    model: &mut CoAttentionModel<T>,
    train: &[Example],
    dev: &[Example],
    article: &EncodedDocument,
    scale: &ScoreScale,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> std::result::Result<TrainReport, FitFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptimizerState::new(config.optimizer, &model.params);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, ModelParams<T>)> = None;
    for epoch in 0..config.epochs {
        let step = train_epoch(model, train, article, scale, config.batch_size, &mut state, &mut rng)
            .and_then(|stats| Ok((stats, evaluate_qwk(model, dev, article, scale)?)));
        let (stats, dev_qwk) = match step {
            Ok(v) => v,
            Err(source) => {
                if let Some((_, params)) = best {
                    model.params = params;
                }
                return Err(FitFailure {
                    report: Box::new(report),
                    source,
                });
            }
        };
        let record = EpochRecord {
            epoch,
            train_loss: stats.mean_loss,
            dev_qwk,
        };
        on_epoch(&record);
        report.epochs.push(record);
        if best.as_ref().is_none_or(|(q, _)| dev_qwk > *q) {
            best = Some((dev_qwk, model.params.clone()));
            report.best_epoch = Some(epoch);
            report.best_dev_qwk = Some(dev_qwk);
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(report)
}
