use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Nonlinearity applied after the word-level convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConvActivation {
    #[default]
    Relu,
    Tanh,
}

impl fmt::Display for ConvActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvActivation::Relu => "relu",
            ConvActivation::Tanh => "tanh",
        })
    }
}

impl FromStr for ConvActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::Config(format!("unknown conv activation `{other}`"))),
        }
    }
}

/// Network dimensions and regularization. Defaults follow the published
/// hyper-parameter table (50-d embeddings, kernel 5, 100 filters, 100 hidden
/// units in both LSTMs, dropout 0.5, 4000-word vocabulary).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub conv_kernel: usize,
    pub conv_filters: usize,
    pub lstm_hidden: usize,
    pub modeling_hidden: usize,
    pub dropout_rate: f64,
    pub vocab_size: usize,
    pub max_sentences: usize,
    pub max_tokens: usize,
    pub conv_activation: ConvActivation,
    pub trainable_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 50,
            conv_kernel: 5,
            conv_filters: 100,
            lstm_hidden: 100,
            modeling_hidden: 100,
            dropout_rate: 0.5,
            vocab_size: 4000,
            max_sentences: 100,
            max_tokens: 50,
            conv_activation: ConvActivation::Relu,
            trainable_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("conv_kernel", self.conv_kernel),
            ("conv_filters", self.conv_filters),
            ("lstm_hidden", self.lstm_hidden),
            ("modeling_hidden", self.modeling_hidden),
            ("max_sentences", self.max_sentences),
            ("max_tokens", self.max_tokens),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_size < 3 {
            return Err(Error::Config(
                "vocab_size must leave room for PAD, UNK and one word".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.max_tokens < self.conv_kernel {
            return Err(Error::Config(format!(
                "max_tokens {} is shorter than the convolution kernel {}",
                self.max_tokens, self.conv_kernel
            )));
        }
        Ok(())
    }

    /// Convolution windows per padded sentence.
    pub fn windows_per_sentence(&self) -> usize {
        self.max_tokens - self.conv_kernel + 1
    }
}
