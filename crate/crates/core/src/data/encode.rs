use super::text::{split_sentences, tokenize};
use super::vocab::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// A document as a padded `max_sentences × max_tokens` id grid.
///
/// Sentences are right-padded with `PAD` and truncated at `max_tokens`;
/// documents are truncated at `max_sentences`. A sentence shorter than the
/// convolution kernel keeps exactly one valid window (its padding counts as
/// content for that window only).
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDocument {
    max_sentences: usize,
    max_tokens: usize,
    kernel: usize,
    ids: Vec<u32>,
    lengths: Vec<usize>,
    sentences: Vec<String>,
}

impl EncodedDocument {
    /// Builds a document directly from per-sentence id lists.
    pub fn from_ids(sentence_ids: &[Vec<u32>], config: &ModelConfig) -> Result<Self> {
        let texts = sentence_ids.iter().map(|s| format!("{s:?}")).collect();
        Self::from_parts(sentence_ids, texts, config)
    }

    fn from_parts(sentence_ids: &[Vec<u32>], texts: Vec<String>, config: &ModelConfig) -> Result<Self> {
        let (s_max, w_max) = (config.max_sentences, config.max_tokens);
        let mut ids = vec![PAD_ID; s_max * w_max];
        let mut lengths = Vec::new();
        let mut kept_texts = Vec::new();
        for (sent, text) in sentence_ids
            .iter()
            .zip(texts)
            .filter(|(s, _)| !s.is_empty())
            .take(s_max)
        {
            let row = lengths.len();
            let n = sent.len().min(w_max);
            if let Some(&bad) = sent[..n].iter().find(|&&id| id as usize >= config.vocab_size) {
                return Err(Error::Encoding(format!(
                    "token id {bad} out of range for vocabulary of {}",
                    config.vocab_size
                )));
            }
            ids[row * w_max..row * w_max + n].copy_from_slice(&sent[..n]);
            lengths.push(n);
            kept_texts.push(text);
        }
        if lengths.is_empty() {
            return Err(Error::Degenerate("document has no tokens".into()));
        }
        Ok(Self {
            max_sentences: s_max,
            max_tokens: w_max,
            kernel: config.conv_kernel,
            ids,
            lengths,
            sentences: kept_texts,
        })
    }

    pub fn max_sentences(&self) -> usize {
        self.max_sentences
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    /// Number of real (unpadded) sentences.
    pub fn num_sentences(&self) -> usize {
        self.lengths.len()
    }

    /// Real token count per real sentence.
    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Original text of each real sentence.
    pub fn sentence_texts(&self) -> &[String] {
        &self.sentences
    }

    /// Full padded id grid, row-major `max_sentences × max_tokens`.
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Padded id row of sentence `s`.
    pub fn row(&self, s: usize) -> &[u32] {
        &self.ids[s * self.max_tokens..(s + 1) * self.max_tokens]
    }

    pub fn sentence_mask(&self) -> Vec<bool> {
        (0..self.max_sentences).map(|s| s < self.num_sentences()).collect()
    }

    pub fn token_mask(&self) -> Vec<bool> {
        (0..self.max_sentences)
            .flat_map(|s| {
                let n = self.lengths.get(s).copied().unwrap_or(0);
                (0..self.max_tokens).map(move |w| w < n)
            })
            .collect()
    }

    /// Number of valid convolution windows of real sentence `s`.
    pub fn valid_windows(&self, s: usize) -> usize {
        self.lengths[s].max(self.kernel) - self.kernel + 1
    }

    /// Window validity, row-major `max_sentences × (max_tokens − kernel + 1)`.
    pub fn window_mask(&self) -> Vec<bool> {
        let per = self.max_tokens - self.kernel + 1;
        (0..self.max_sentences)
            .flat_map(|s| {
                let valid = if s < self.num_sentences() {
                    self.valid_windows(s)
                } else {
                    0
                };
                (0..per).map(move |p| p < valid)
            })
            .collect()
    }

    /// Decodes the unmasked ids of every sentence back to tokens.
    pub fn decode(&self, vocab: &Vocabulary) -> Vec<Vec<String>> {
        (0..self.num_sentences())
            .map(|s| {
                self.row(s)[..self.lengths[s]]
                    .iter()
                    .map(|&id| vocab.token(id).unwrap_or("<?>").to_string())
                    .collect()
            })
            .collect()
    }
}

/// Splits, tokenizes, looks up and pads `text`.
pub fn encode_document(text: &str, vocab: &Vocabulary, config: &ModelConfig) -> Result<EncodedDocument> {
    if vocab.len() > config.vocab_size {
        return Err(Error::Encoding(format!(
            "vocabulary has {} entries but the model holds {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let sentences = split_sentences(text);
    let ids: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| tokenize(s).iter().map(|t| vocab.id(t)).collect())
        .collect();
    EncodedDocument::from_parts(&ids, sentences, config)
}
