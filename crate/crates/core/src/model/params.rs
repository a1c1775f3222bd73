use rand::Rng;

use super::ModelConfig;
use crate::data::random_embeddings;
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{Float, Tensor};

/// Gate weights of one LSTM. Each `w_*` is `(hidden + input) × hidden` and
/// multiplies the row vector `[h_{t−1} ; x_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub w_f: Tensor<T>,
    pub w_i: Tensor<T>,
    pub w_c: Tensor<T>,
    pub w_o: Tensor<T>,
    pub b_f: Tensor<T>,
    pub b_i: Tensor<T>,
    pub b_c: Tensor<T>,
    pub b_o: Tensor<T>,
}

impl<T: Float> LstmParams<T> {
    fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden + input, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_f: w(),
            w_i: w(),
            w_c: w(),
            w_o: w(),
            b_f: b(),
            b_i: b(),
            b_c: b(),
            b_o: b(),
        }
    }

    fn glorot<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for w in [&mut p.w_f, &mut p.w_i, &mut p.w_c, &mut p.w_o] {
            fill_glorot(w, hidden + input, hidden, rng);
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_f.shape()[0] - self.hidden_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_f.shape()[1]
    }

    fn named(&self) -> [(&'static str, &Tensor<T>); 8] {
        [
            ("w_f", &self.w_f),
            ("w_i", &self.w_i),
            ("w_c", &self.w_c),
            ("w_o", &self.w_o),
            ("b_f", &self.b_f),
            ("b_i", &self.b_i),
            ("b_c", &self.b_c),
            ("b_o", &self.b_o),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 8] {
        [
            ("w_f", &mut self.w_f),
            ("w_i", &mut self.w_i),
            ("w_c", &mut self.w_c),
            ("w_o", &mut self.w_o),
            ("b_f", &mut self.b_f),
            ("b_i", &mut self.b_i),
            ("b_c", &mut self.b_c),
            ("b_o", &mut self.b_o),
        ]
    }
}

/// Every learned tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// `vocab × embed_dim`
    pub embedding: Tensor<T>,
    /// `(kernel · embed_dim) × filters`
    pub conv_weight: Tensor<T>,
    pub conv_bias: Tensor<T>,
    /// `filters × filters`
    pub pool_weight: Tensor<T>,
    pub pool_bias: Tensor<T>,
    /// `filters`; scores each window's attention vector.
    pub pool_context: Tensor<T>,
    pub sentence_lstm: LstmParams<T>,
    /// `3 · lstm_hidden`, applied to `[he ; ha ; he ∘ ha]`.
    pub sim_weight: Tensor<T>,
    /// Scalar.
    pub sim_bias: Tensor<T>,
    pub modeling_lstm: LstmParams<T>,
    /// `modeling_hidden`
    pub out_weight: Tensor<T>,
    /// Scalar.
    pub out_bias: Tensor<T>,
}

fn fill_glorot<T: Float, R: Rng>(t: &mut Tensor<T>, fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in t.data_mut() {
        *v = T::from_f64_lossy(rng.gen_range(-limit..=limit));
    }
}

/// Parameter names in checkpoint order, with their shapes under `config`.
pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    ModelParams::<f64>::zeros(config)
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect()
}

impl<T: Float> ModelParams<T> {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let (d_l, k, d_c, d_h, d_m) = (
            config.embed_dim,
            config.conv_kernel,
            config.conv_filters,
            config.lstm_hidden,
            config.modeling_hidden,
        );
        let mut p = Self {
            embedding: Tensor::zeros(&[config.vocab_size, d_l]),
            conv_weight: Tensor::zeros(&[k * d_l, d_c]),
            conv_bias: Tensor::zeros(&[d_c]),
            pool_weight: Tensor::zeros(&[d_c, d_c]),
            pool_bias: Tensor::zeros(&[d_c]),
            pool_context: Tensor::zeros(&[d_c]),
            sentence_lstm: LstmParams::zeros(d_c, d_h),
            sim_weight: Tensor::zeros(&[3 * d_h]),
            sim_bias: Tensor::zeros(&[1]),
            modeling_lstm: LstmParams::zeros(4 * d_h, d_m),
            out_weight: Tensor::zeros(&[d_m]),
            out_bias: Tensor::zeros(&[1]),
        };
        p.set_trainable(config.trainable_embeddings);
        p
    }

    /// Glorot-uniform weights, zero biases. The embedding table comes from
    /// `pretrained` when given, otherwise uniform in `[−0.05, 0.05]` with a
    /// zero PAD row.
    pub fn init<R: Rng>(config: &ModelConfig, pretrained: Option<Tensor<T>>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        p.embedding = match pretrained {
            Some(e) if e.shape() == p.embedding.shape() => e,
            Some(e) => return Err(Error::dimension("pretrained embedding", e.shape(), p.embedding.shape())),
            None => random_embeddings(config.vocab_size, config.embed_dim, rng),
        };
        let (d_l, k, d_c, d_h, d_m) = (
            config.embed_dim,
            config.conv_kernel,
            config.conv_filters,
            config.lstm_hidden,
            config.modeling_hidden,
        );
        fill_glorot(&mut p.conv_weight, k * d_l, d_c, rng);
        fill_glorot(&mut p.pool_weight, d_c, d_c, rng);
        fill_glorot(&mut p.pool_context, d_c, 1, rng);
        p.sentence_lstm = LstmParams::glorot(d_c, d_h, rng);
        fill_glorot(&mut p.sim_weight, 3 * d_h, 1, rng);
        p.modeling_lstm = LstmParams::glorot(4 * d_h, d_m, rng);
        fill_glorot(&mut p.out_weight, d_m, 1, rng);
        p.set_trainable(config.trainable_embeddings);
        Ok(p)
    }

    /// Marks every tensor as differentiable, except the embedding table
    /// when `trainable_embeddings` is false.
    pub fn set_trainable(&mut self, trainable_embeddings: bool) {
        for (name, t) in self.named_mut() {
            t.set_requires_grad(name != "embedding" || trainable_embeddings);
        }
    }

    /// `(name, tensor)` pairs in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("embedding".into(), &self.embedding),
            ("conv.weight".into(), &self.conv_weight),
            ("conv.bias".into(), &self.conv_bias),
            ("pool.weight".into(), &self.pool_weight),
            ("pool.bias".into(), &self.pool_bias),
            ("pool.context".into(), &self.pool_context),
        ];
        out.extend(
            self.sentence_lstm
                .named()
                .map(|(n, t)| (format!("sentence_lstm.{n}"), t)),
        );
        out.push(("sim.weight".into(), &self.sim_weight));
        out.push(("sim.bias".into(), &self.sim_bias));
        out.extend(
            self.modeling_lstm
                .named()
                .map(|(n, t)| (format!("modeling_lstm.{n}"), t)),
        );
        out.push(("out.weight".into(), &self.out_weight));
        out.push(("out.bias".into(), &self.out_bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![
            ("embedding".into(), &mut self.embedding),
            ("conv.weight".into(), &mut self.conv_weight),
            ("conv.bias".into(), &mut self.conv_bias),
            ("pool.weight".into(), &mut self.pool_weight),
            ("pool.bias".into(), &mut self.pool_bias),
            ("pool.context".into(), &mut self.pool_context),
        ];
        out.extend(
            self.sentence_lstm
                .named_mut()
                .map(|(n, t)| (format!("sentence_lstm.{n}"), t)),
        );
        out.push(("sim.weight".into(), &mut self.sim_weight));
        out.push(("sim.bias".into(), &mut self.sim_bias));
        out.extend(
            self.modeling_lstm
                .named_mut()
                .map(|(n, t)| (format!("modeling_lstm.{n}"), t)),
        );
        out.push(("out.weight".into(), &mut self.out_weight));
        out.push(("out.bias".into(), &mut self.out_bias));
        out
    }

    /// Replaces tensors by name; every name must be known and every shape
    /// must match the current one.
    pub fn assign(&mut self, values: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut slots = self.named_mut();
        for (name, value) in values {
            let slot = slots
                .iter_mut()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| CheckpointError::Malformed {
                    line: 0,
                    message: format!("unknown parameter `{name}`"),
                })?;
            if slot.1.shape() != value.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    found: value.shape().to_vec(),
                    expected: slot.1.shape().to_vec(),
                }
                .into());
            }
            let rg = slot.1.requires_grad();
            *slot.1 = value.with_requires_grad(rg);
        }
        Ok(())
    }

    pub fn num_values(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_mut() {
            t.zero_grad();
        }
    }

    pub fn cast<U: Float>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros_like_shapes(self);
        for ((_, dst), (_, src)) in out.named_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
        out
    }

    fn zeros_like_shapes<S: Float>(other: &ModelParams<S>) -> Self {
        let z = |t: &Tensor<S>| Tensor::zeros(t.shape());
        let l = |p: &LstmParams<S>| LstmParams {
            w_f: z(&p.w_f),
            w_i: z(&p.w_i),
            w_c: z(&p.w_c),
            w_o: z(&p.w_o),
            b_f: z(&p.b_f),
            b_i: z(&p.b_i),
            b_c: z(&p.b_c),
            b_o: z(&p.b_o),
        };
        Self {
            embedding: z(&other.embedding),
            conv_weight: z(&other.conv_weight),
            conv_bias: z(&other.conv_bias),
            pool_weight: z(&other.pool_weight),
            pool_bias: z(&other.pool_bias),
            pool_context: z(&other.pool_context),
            sentence_lstm: l(&other.sentence_lstm),
            sim_weight: z(&other.sim_weight),
            sim_bias: z(&other.sim_bias),
            modeling_lstm: l(&other.modeling_lstm),
            out_weight: z(&other.out_weight),
            out_bias: z(&other.out_bias),
        }
    }
}
