//! Line-oriented checkpoint files.
//!
//! ```text
//! coattn-checkpoint 1
//! dtype f32
//! config embed_dim 50
//! ...
//! scale 0 3
//! vocab 4
//! <pad>
//! <unk>
//! ...
//! param conv.bias 100
//! 0 0 0 ...
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{ScoreScale, Vocabulary};
use crate::error::{CheckpointError, Error, Result};
use crate::model::{expected_shapes, CoAttentionModel, ModelConfig, ModelParams};
use crate::tensor::{Float, Tensor};

pub const CHECKPOINT_MAGIC: &str = "coattn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to score new essays.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel<T> {
    pub model: CoAttentionModel<T>,
    pub vocab: Vocabulary,
    pub scale: ScoreScale,
}

fn config_entries(c: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("embed_dim", c.embed_dim.to_string()),
        ("conv_kernel", c.conv_kernel.to_string()),
        ("conv_filters", c.conv_filters.to_string()),
        ("lstm_hidden", c.lstm_hidden.to_string()),
        ("modeling_hidden", c.modeling_hidden.to_string()),
        ("dropout_rate", c.dropout_rate.to_string()),
        ("vocab_size", c.vocab_size.to_string()),
        ("max_sentences", c.max_sentences.to_string()),
        ("max_tokens", c.max_tokens.to_string()),
        ("conv_activation", c.conv_activation.to_string()),
        ("trainable_embeddings", c.trainable_embeddings.to_string()),
    ]
}

/// Sets one [`ModelConfig`] field from its textual form.
pub fn set_config_field(c: &mut ModelConfig, key: &str, value: &str) -> Result<()> {
    fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("`{value}` is not a valid {key}")))
    }
    match key {
        "embed_dim" => c.embed_dim = num(key, value)?,
        "conv_kernel" => c.conv_kernel = num(key, value)?,
        "conv_filters" => c.conv_filters = num(key, value)?,
        "lstm_hidden" => c.lstm_hidden = num(key, value)?,
        "modeling_hidden" => c.modeling_hidden = num(key, value)?,
        "dropout_rate" => c.dropout_rate = num(key, value)?,
        "vocab_size" => c.vocab_size = num(key, value)?,
        "max_sentences" => c.max_sentences = num(key, value)?,
        "max_tokens" => c.max_tokens = num(key, value)?,
        "conv_activation" => c.conv_activation = value.parse()?,
        "trainable_embeddings" => c.trainable_embeddings = num(key, value)?,
        other => return Err(Error::Config(format!("unknown model setting `{other}`"))),
    }
    Ok(())
}

/// Renders a checkpoint to text.
pub fn checkpoint_to_string<T: Float>(trained: &TrainedModel<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
    let _ = writeln!(out, "dtype {}", T::NAME);
    for (k, v) in config_entries(&trained.model.config) {
        let _ = writeln!(out, "config {k} {v}");
    }
    let _ = writeln!(out, "scale {} {}", trained.scale.min(), trained.scale.max());
    let _ = writeln!(out, "vocab {}", trained.vocab.len());
    for t in trained.vocab.tokens() {
        let _ = writeln!(out, "{t}");
    }
    for (name, t) in trained.model.params.named() {
        let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "param {name} {}", dims.join("x"));
        let values: Vec<String> = t.data().iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
    out.push_str("end\n");
    out
}

pub fn save_checkpoint<T: Float>(trained: &TrainedModel<T>, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(trained)).map_err(|e| Error::io(path, e))
}

/// Element type recorded in a checkpoint file (`"f32"` or `"f64"`).
pub fn checkpoint_dtype(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&text);
    r.header()?;
    r.dtype()
}

pub fn load_checkpoint<T: Float>(path: &Path) -> Result<TrainedModel<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}

pub fn checkpoint_from_str<T: Float>(text: &str) -> Result<TrainedModel<T>> {
    let mut r = Reader::new(text);
    r.header()?;
    let dtype = r.dtype()?;
    if dtype != T::NAME {
        return Err(CheckpointError::Precision {
            found: dtype,
            expected: T::NAME.into(),
        }
        .into());
    }

    let mut config = ModelConfig::default();
    let mut line = r.next("scale")?;
    while let Some(rest) = line.1.strip_prefix("config ") {
        let (key, value) = rest
            .split_once(' ')
            .ok_or_else(|| r.malformed(line.0, "config line needs a key and value"))?;
        set_config_field(&mut config, key, value).map_err(|e| r.malformed(line.0, &e.to_string()))?;
        line = r.next("scale")?;
    }
    config.validate().map_err(|e| r.malformed(line.0, &e.to_string()))?;

    let scale = match line.1.split(' ').collect::<Vec<_>>()[..] {
        ["scale", lo, hi] => {
            let lo = lo.parse().map_err(|_| r.malformed(line.0, "bad scale minimum"))?;
            let hi = hi.parse().map_err(|_| r.malformed(line.0, "bad scale maximum"))?;
            ScoreScale::new(lo, hi).map_err(|e| r.malformed(line.0, &e.to_string()))?
        }
        _ => return Err(r.malformed(line.0, "expected `scale <min> <max>`")),
    };

    let (ln, vline) = r.next("vocab")?;
    let n: usize = vline
        .strip_prefix("vocab ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| r.malformed(ln, "expected `vocab <count>`"))?;
    let mut tokens = Vec::with_capacity(n);
    for _ in 0..n {
        tokens.push(r.next("vocabulary token")?.1.to_string());
    }
    let vocab = Vocabulary::from_tokens(tokens).map_err(|e| r.malformed(ln, &e.to_string()))?;
    if vocab.len() > config.vocab_size {
        return Err(r.malformed(ln, "vocabulary is larger than the embedding table"));
    }

    let mut params = ModelParams::<T>::zeros(&config);
    let mut values = Vec::new();
    for (name, expected) in expected_shapes(&config) {
        let (ln, head) = r.next(&format!("parameter {name}"))?;
        let parts: Vec<&str> = head.split(' ').collect();
        let ["param", found_name, dims] = parts[..] else {
            return Err(r.malformed(ln, "expected `param <name> <shape>`"));
        };
        if found_name != name {
            return Err(r.malformed(ln, &format!("expected parameter `{name}`, found `{found_name}`")));
        }
        let shape: Vec<usize> = dims
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| r.malformed(ln, &format!("bad shape `{dims}`")))?;
        if shape != expected {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: shape,
                expected,
            }
            .into());
        }
        let (vl, body) = r.next(&format!("values of {name}"))?;
        let data: Vec<T> = body
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| T::parse_value(s).ok_or_else(|| r.malformed(vl, &format!("`{s}` is not a number"))))
            .collect::<Result<_>>()?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            let msg = format!("{name} has {} values, shape needs {numel}", data.len());
            return Err(if r.at_end() {
                CheckpointError::Truncated(msg).into()
            } else {
                r.malformed(vl, &msg)
            });
        }
        values.push((name, Tensor::new(&shape, data)?));
    }
    params.assign(values)?;
    let (ln, tail) = r.next("end marker")?;
    if tail != "end" {
        return Err(r.malformed(ln, "expected `end`"));
    }
    Ok(TrainedModel {
        model: CoAttentionModel::new(config, params)?,
        vocab,
        scale,
    })
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    remaining: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            remaining: text.lines().count(),
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.lines.next() {
            Some((i, l)) => {
                self.remaining -= 1;
                Ok((i + 1, l))
            }
            None => Err(CheckpointError::Truncated(format!("file ends before {what}")).into()),
        }
    }

    fn at_end(&self) -> bool {
        self.remaining == 0
    }

    fn malformed(&self, line: usize, message: &str) -> Error {
        CheckpointError::Malformed {
            line,
            message: message.to_string(),
        }
        .into()
    }

    fn header(&mut self) -> Result<()> {
        let (ln, head) = self.next("header")?;
        let (magic, version) = head.split_once(' ').unwrap_or((head, ""));
        if magic != CHECKPOINT_MAGIC {
            return Err(self.malformed(ln, "not a checkpoint file"));
        }
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(CheckpointError::Version {
                found: version.to_string(),
                expected: CHECKPOINT_VERSION,
            }
            .into());
        }
        Ok(())
    }

    fn dtype(&mut self) -> Result<String> {
        let (ln, line) = self.next("dtype")?;
        match line.strip_prefix("dtype ") {
            Some(d @ ("f32" | "f64")) => Ok(d.to_string()),
            _ => Err(self.malformed(ln, "expected `dtype f32` or `dtype f64`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained<T: Float>() -> TrainedModel<T> {
        let config = ModelConfig {
            embed_dim: 3,
            conv_kernel: 2,
            conv_filters: 3,
            lstm_hidden: 2,
            modeling_hidden: 2,
            vocab_size: 6,
            max_sentences: 3,
            max_tokens: 4,
            ..Default::default()
        };
        let params = ModelParams::init(&config, None, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        TrainedModel {
            model: CoAttentionModel::new(config, params).unwrap(),
            vocab: Vocabulary::build(["the cat sat."], 6).unwrap(),
            scale: ScoreScale::new(0, 3).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let t = trained::<f32>();
        let back: TrainedModel<f32> = checkpoint_from_str(&checkpoint_to_string(&t)).unwrap();
        assert_eq!(back, t);
        let t = trained::<f64>();
        let back: TrainedModel<f64> = checkpoint_from_str(&checkpoint_to_string(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn distinct_load_errors() {
        let text = checkpoint_to_string(&trained::<f32>());
        let err = |s: &str| checkpoint_from_str::<f32>(s).unwrap_err();

        assert!(matches!(err(""), Error::Checkpoint(CheckpointError::Truncated(_))));
        let half = &text[..text.len() / 2];
        assert!(matches!(err(half), Error::Checkpoint(CheckpointError::Truncated(_))));
        assert!(matches!(
            err(&text.replacen("coattn-checkpoint 1", "coattn-checkpoint 7", 1)),
            Error::Checkpoint(CheckpointError::Version { .. })
        ));
        assert!(matches!(
            err(&text.replacen("param conv.bias 3", "param conv.bias 4", 1)),
            Error::Checkpoint(CheckpointError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            checkpoint_from_str::<f64>(&text).unwrap_err(),
            Error::Checkpoint(CheckpointError::Precision { .. })
        ));
        assert!(matches!(
            err(&text.replacen("end\n", "", 1)),
            Error::Checkpoint(CheckpointError::Truncated(_))
        ));
    }
}
