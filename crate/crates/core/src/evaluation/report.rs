use std::fmt;

use serde::Serialize;

use crate::data::encode_document;
use crate::error::Result;
use crate::tensor::Float;
use crate::training::TrainedModel;

/// One essay sentence and the article-to-essay attention it received.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionRow {
    /// 1-based position in the essay.
    pub index: usize,
    pub sentence: String,
    pub weight: f64,
}

impl fmt::Display for AttentionRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{:.5}", self.index, self.sentence, self.weight)
    }
}

/// Per-sentence weights of the article-to-essay attention `a_ae`, in
/// document order. These are taken to be the sentence "attention scores"
/// one would show a reader; the weights sum to 1 over the real sentences.
pub fn attention_report<T: Float>(trained: &TrainedModel<T>, essay: &str, article: &str) -> Result<Vec<AttentionRow>> {
    let config = &trained.model.config;
    let essay = encode_document(essay, &trained.vocab, config)?;
    let article = encode_document(article, &trained.vocab, config)?;
    let weights = trained.model.essay_attention(&essay, &article)?;
    Ok(essay
        .sentence_texts()
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (s, w))| AttentionRow {
            index: i + 1,
            sentence: s.clone(),
            weight: w.to_f64_lossy(),
        })
        .collect())
}
