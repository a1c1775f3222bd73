//! Whole-network forward pass over an (essay, article) pair.
//!
//! Computation runs over each document's real sentences only; padded rows
//! of the id grid never enter the tape. Within a document, sentences share a
//! token width equal to the longest one (at least the kernel), and windows
//! past a sentence's end are masked out of attention pooling.

use rand_chacha::ChaCha8Rng;

use super::layers::{
    article_to_essay, attention_pool, conv_sentence, document_width, embed_lookup, essay_to_article, fuse,
    lstm_forward, similarity_matrix, LstmVars, ParamVars,
};
use super::{ModelConfig, ModelParams};
use crate::data::EncodedDocument;
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

/// Tape handles for one document pushed through the shared encoder.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    /// `[S, W, d_L]`
    pub embedded: Var,
    /// `[S, W − k + 1, d_C]`
    pub conv: Var,
    /// `[S, W − k + 1]`, zero at windows past the sentence end.
    pub pool_weights: Var,
    /// `[S, d_C]`
    pub pooled: Var,
    /// `[S, d_H]`
    pub hidden: Var,
}

/// Tape handles for everything downstream of the two encoders.
#[derive(Clone, Copy, Debug)]
pub struct CoAttentionVars {
    /// `[S_e, S_a]`
    pub sim: Var,
    /// `[S_e, S_a]`
    pub a_ea: Var,
    /// `[S_e, d_H]`
    pub attended_article: Var,
    /// `[S_e]`
    pub a_ae: Var,
    /// `[1, d_H]`
    pub essay_summary: Var,
    /// `[S_e, d_H]`
    pub tiled_essay: Var,
    /// `[S_e, 4 d_H]`
    pub fused: Var,
    /// `[1, d_M]`
    pub final_state: Var,
    /// `[1]`
    pub y: Var,
}

/// Window validity for [`encode`]'s trimmed layout: `[S, W − k + 1]`.
pub fn trimmed_window_mask(doc: &EncodedDocument) -> Vec<bool> {
    let per = document_width(doc) - doc.kernel() + 1;
    (0..doc.num_sentences())
        .flat_map(|s| {
            let valid = doc.valid_windows(s);
            (0..per).map(move |p| p < valid)
        })
        .collect()
}

/// Embedding, convolution, attention pooling and the sentence LSTM. With
/// `rng` set, dropout is applied after the embedding lookup.
pub fn encode<T: Float>(
    tape: &Tape<T>,
    vars: &ParamVars,
    doc: &EncodedDocument,
    config: &ModelConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<EncoderVars> {
    let dropout = rng.map(|r| (config.dropout_rate, r));
    let embedded = embed_lookup(tape, doc, vars.embedding, dropout)?;
    let conv = conv_sentence(
        tape,
        embedded,
        vars.conv_weight,
        vars.conv_bias,
        config.conv_kernel,
        config.conv_activation,
    )?;
    let (pooled, pool_weights) = attention_pool(
        tape,
        conv,
        &trimmed_window_mask(doc),
        vars.pool_weight,
        vars.pool_bias,
        vars.pool_context,
    )?;
    let hidden = lstm_forward(tape, pooled, &vars.sentence_lstm, None, None)?;
    Ok(EncoderVars {
        embedded,
        conv,
        pool_weights,
        pooled,
        hidden,
    })
}

/// Co-attention, fusion, the modeling LSTM and the sigmoid output head.
pub fn co_attend<T: Float>(tape: &Tape<T>, vars: &ParamVars, h_e: Var, h_a: Var) -> Result<CoAttentionVars> {
    let (n_e, n_a) = (tape.shape(h_e)[0], tape.shape(h_a)[0]);
    let (essay_mask, article_mask) = (vec![true; n_e], vec![true; n_a]);
    let sim = similarity_matrix(tape, h_e, h_a, vars.sim_weight, vars.sim_bias)?;
    let (a_ea, attended_article) = essay_to_article(tape, sim, h_a, &article_mask)?;
    let (a_ae, essay_summary, tiled_essay) = article_to_essay(tape, sim, h_e, &essay_mask, &article_mask)?;
    let fused = fuse(tape, h_e, attended_article, tiled_essay)?;
    let states = lstm_forward(tape, fused, &vars.modeling_lstm, None, None)?;
    let final_state = tape.slice(states, 0, n_e - 1, 1)?;
    let d_m = tape.shape(final_state)[1];
    let w = tape.reshape(vars.out_weight, &[d_m, 1])?;
    let b = tape.reshape(vars.out_bias, &[1, 1])?;
    let logit = tape.add(tape.matmul(final_state, w)?, b)?;
    let y = tape.reshape(tape.sigmoid(logit)?, &[1])?;
    Ok(CoAttentionVars {
        sim,
        a_ea,
        attended_article,
        a_ae,
        essay_summary,
        tiled_essay,
        fused,
        final_state,
        y,
    })
}

/// Every intermediate activation of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub essay_embedded: Tensor<T>,
    pub article_embedded: Tensor<T>,
    pub essay_conv: Tensor<T>,
    pub article_conv: Tensor<T>,
    pub essay_pool_weights: Tensor<T>,
    pub article_pool_weights: Tensor<T>,
    pub essay_pooled: Tensor<T>,
    pub article_pooled: Tensor<T>,
    pub essay_hidden: Tensor<T>,
    pub article_hidden: Tensor<T>,
    pub sim: Tensor<T>,
    pub a_ea: Tensor<T>,
    pub attended_article: Tensor<T>,
    pub a_ae: Tensor<T>,
    /// `[d_H]`
    pub essay_summary: Tensor<T>,
    pub tiled_essay: Tensor<T>,
    pub fused: Tensor<T>,
    /// `[d_M]`
    pub final_state: Tensor<T>,
    pub y: T,
}

fn flatten<T: Float>(tape: &Tape<T>, v: Var) -> Result<Tensor<T>> {
    let t = tape.value(v);
    let n = t.len();
    t.reshaped(&[n])
}

/// Network parameters together with the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct CoAttentionModel<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Float> CoAttentionModel<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let expected = super::expected_shapes(&config);
        for ((name, shape), (_, t)) in expected.iter().zip(params.named()) {
            if t.shape() != shape.as_slice() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    found: t.shape().to_vec(),
                    expected: shape.clone(),
                }
                .into());
            }
        }
        Ok(Self { config, params })
    }

    /// Records the parameters on `tape`.
    pub fn register(&self, tape: &Tape<T>) -> ParamVars {
        ParamVars::register(tape, &self.params)
    }

    /// Full forward pass. `rng` switches on training-mode dropout.
    pub fn forward_full(
        &self,
        essay: &EncodedDocument,
        article: &EncodedDocument,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardTrace<T>> {
        let tape = Tape::new();
        let vars = self.register(&tape);
        let e = encode(&tape, &vars, essay, &self.config, rng.as_deref_mut())?;
        let a = encode(&tape, &vars, article, &self.config, rng)?;
        let c = co_attend(&tape, &vars, e.hidden, a.hidden)?;
        let y = tape.scalar(c.y);
        if !y.is_finite() {
            return Err(Error::Numeric(format!("prediction is {y}")));
        }
        Ok(ForwardTrace {
            essay_embedded: tape.value(e.embedded),
            article_embedded: tape.value(a.embedded),
            essay_conv: tape.value(e.conv),
            article_conv: tape.value(a.conv),
            essay_pool_weights: tape.value(e.pool_weights),
            article_pool_weights: tape.value(a.pool_weights),
            essay_pooled: tape.value(e.pooled),
            article_pooled: tape.value(a.pooled),
            essay_hidden: tape.value(e.hidden),
            article_hidden: tape.value(a.hidden),
            sim: tape.value(c.sim),
            a_ea: tape.value(c.a_ea),
            attended_article: tape.value(c.attended_article),
            a_ae: tape.value(c.a_ae),
            essay_summary: flatten(&tape, c.essay_summary)?,
            tiled_essay: tape.value(c.tiled_essay),
            fused: tape.value(c.fused),
            final_state: flatten(&tape, c.final_state)?,
            y,
        })
    }

    /// Eval-mode prediction in `(0, 1)`.
    pub fn predict(&self, essay: &EncodedDocument, article: &EncodedDocument) -> Result<T> {
        Ok(self.predict_batch(std::slice::from_ref(essay), article)?[0])
    }

    /// Eval-mode predictions for many essays against one article. The
    /// article is encoded once; each essay then runs on its own small tape.
    pub fn predict_batch(&self, essays: &[EncodedDocument], article: &EncodedDocument) -> Result<Vec<T>> {
        let h_a = self.encode_article(article)?;
        essays
            .iter()
            .map(|essay| {
                let tape = Tape::new();
                let vars = self.register(&tape);
                let e = encode(&tape, &vars, essay, &self.config, None)?;
                let a = tape.constant(h_a.clone());
                let c = co_attend(&tape, &vars, e.hidden, a)?;
                let y = tape.scalar(c.y);
                if y.is_finite() {
                    Ok(y)
                } else {
                    Err(Error::Numeric(format!("prediction is {y}")))
                }
            })
            .collect()
    }

    /// Eval-mode article-to-essay attention over the essay's real sentences.
    pub fn essay_attention(&self, essay: &EncodedDocument, article: &EncodedDocument) -> Result<Vec<T>> {
        Ok(self.forward_full(essay, article, None)?.a_ae.into_data())
    }

    /// Eval-mode sentence states `H` of a document.
    pub fn encode_article(&self, article: &EncodedDocument) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let vars = self.register(&tape);
        let a = encode(&tape, &vars, article, &self.config, None)?;
        Ok(tape.value(a.hidden))
    }
}

impl ParamVars {
    /// Rebuilds handles from vars given in [`ModelParams::named`] order.
    pub fn from_ordered(v: &[Var], config: &ModelConfig) -> Result<Self> {
        if v.len() != 26 {
            return Err(Error::Usage(format!("expected 26 parameter vars, got {}", v.len())));
        }
        let lstm = |s: &[Var], input, hidden| LstmVars {
            w_f: s[0],
            w_i: s[1],
            w_c: s[2],
            w_o: s[3],
            b_f: s[4],
            b_i: s[5],
            b_c: s[6],
            b_o: s[7],
            input,
            hidden,
        };
        Ok(Self {
            embedding: v[0],
            conv_weight: v[1],
            conv_bias: v[2],
            pool_weight: v[3],
            pool_bias: v[4],
            pool_context: v[5],
            sentence_lstm: lstm(&v[6..14], config.conv_filters, config.lstm_hidden),
            sim_weight: v[14],
            sim_bias: v[15],
            modeling_lstm: lstm(&v[16..24], 4 * config.lstm_hidden, config.modeling_hidden),
            out_weight: v[24],
            out_bias: v[25],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};

    fn small_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            conv_kernel: 2,
            conv_filters: 5,
            lstm_hidden: 3,
            modeling_hidden: 3,
            vocab_size: 12,
            max_sentences: 6,
            max_tokens: 6,
            ..Default::default()
        }
    }

    fn random_doc(rng: &mut ChaCha8Rng, sentences: usize, config: &ModelConfig) -> EncodedDocument {
        let ids: Vec<Vec<u32>> = (0..sentences)
            .map(|_| {
                let n = rng.gen_range(1..=config.max_tokens);
                (0..n).map(|_| rng.gen_range(2..config.vocab_size as u32)).collect()
            })
            .collect();
        EncodedDocument::from_ids(&ids, config).unwrap()
    }

    fn model<T: Float>(config: &ModelConfig, seed: u64) -> CoAttentionModel<T> {
        let params = ModelParams::init(config, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        CoAttentionModel::new(config.clone(), params).unwrap()
    }

    #[test]
    fn zero_params_predict_half() {
        let cfg = small_config();
        let m = CoAttentionModel::new(cfg.clone(), ModelParams::<f32>::zeros(&cfg)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (e, a) = (random_doc(&mut rng, 3, &cfg), random_doc(&mut rng, 2, &cfg));
        assert_eq!(m.predict(&e, &a).unwrap(), 0.5);
    }

    #[test]
    fn default_shape_chain() {
        let cfg = ModelConfig {
            vocab_size: 30,
            max_sentences: 12,
            max_tokens: 12,
            ..Default::default()
        };
        let m = model::<f32>(&cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let (s_e, s_a) = (rng.gen_range(1..=10), rng.gen_range(1..=10));
            let (e, a) = (random_doc(&mut rng, s_e, &cfg), random_doc(&mut rng, s_a, &cfg));
            let t = m.forward_full(&e, &a, None).unwrap();
            let w = document_width(&e);
            assert_eq!(t.essay_embedded.shape(), &[s_e, w, 50]);
            assert_eq!(t.essay_conv.shape(), &[s_e, w - 4, 100]);
            assert_eq!(t.essay_pooled.shape(), &[s_e, 100]);
            assert_eq!(t.essay_hidden.shape(), &[s_e, 100]);
            assert_eq!(t.article_hidden.shape(), &[s_a, 100]);
            assert_eq!(t.sim.shape(), &[s_e, s_a]);
            assert_eq!(t.fused.shape(), &[s_e, 400]);
            assert_eq!(t.final_state.shape(), &[100]);
            assert!(t.y > 0.0 && t.y < 1.0);
        }
    }

    #[test]
    fn encoder_is_shared() {
        let cfg = small_config();
        let m = model::<f64>(&cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let doc = random_doc(&mut rng, 3, &cfg);
        let t = m.forward_full(&doc, &doc, None).unwrap();
        assert_eq!(t.essay_hidden, t.article_hidden);
    }

    #[test]
    fn article_order_does_not_move_essay_attention() {
        let cfg = small_config();
        let m = model::<f64>(&cfg, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let essay = random_doc(&mut rng, 4, &cfg);
        let ids: Vec<Vec<u32>> = (0..3).map(|_| (0..4).map(|_| rng.gen_range(2..12)).collect()).collect();
        let article = EncodedDocument::from_ids(&ids, &cfg).unwrap();
        let base = m.forward_full(&essay, &article, None).unwrap();

        // Feed the article's sentence states in a different order directly:
        // the LSTM is order-sensitive, so permute H_a itself.
        let tape = Tape::<f64>::new();
        let vars = m.register(&tape);
        let h_e = tape.constant(base.essay_hidden.clone());
        let ha = &base.article_hidden;
        let permuted: Vec<Vec<f64>> = [2, 0, 1].iter().map(|&r| ha.row(r).to_vec()).collect();
        let h_a = tape.constant(Tensor::from_rows(&permuted).unwrap());
        let c = co_attend(&tape, &vars, h_e, h_a).unwrap();
        assert_eq!(tape.value(c.a_ae).data(), base.a_ae.data());
        let sim = tape.value(c.sim);
        for r in 0..4 {
            assert_eq!(sim.at(&[r, 0]), base.sim.at(&[r, 2]));
        }
    }

    #[test]
    fn eval_is_deterministic_and_batch_matches_single() {
        let cfg = small_config();
        let m = model::<f32>(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let article = random_doc(&mut rng, 3, &cfg);
        let essays: Vec<_> = (1..5).map(|s| random_doc(&mut rng, s, &cfg)).collect();
        let a = m.forward_full(&essays[0], &article, None).unwrap();
        let b = m.forward_full(&essays[0], &article, None).unwrap();
        assert_eq!(a, b);
        let batch = m.predict_batch(&essays, &article).unwrap();
        for (e, y) in essays.iter().zip(&batch) {
            assert_eq!(m.forward_full(e, &article, None).unwrap().y.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn dropout_changes_training_forward_only() {
        let cfg = small_config();
        let m = model::<f64>(&cfg, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (e, a) = (random_doc(&mut rng, 2, &cfg), random_doc(&mut rng, 2, &cfg));
        let eval = m.forward_full(&e, &a, None).unwrap();
        let train = m.forward_full(&e, &a, Some(&mut rng)).unwrap();
        assert_ne!(eval.essay_embedded, train.essay_embedded);
        for (x, z) in train.essay_embedded.data().iter().zip(eval.essay_embedded.data()) {
            assert!(*x == 0.0 || (x - 2.0 * z).abs() < 1e-15);
        }
    }

    #[test]
    fn end_to_end_gradients() {
        let cfg = small_config();
        // Glorot-scale weights leave many gradients near 1e-9, below what
        // central differences resolve; use O(1) values instead. A step of
        // 1e-4 keeps rounding noise under the tolerance for the smallest
        // surviving coordinates.
        let mut m = model::<f64>(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (_, t) in m.params.named_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let (e, a) = (random_doc(&mut rng, 2, &cfg), random_doc(&mut rng, 2, &cfg));
        let inputs: Vec<Tensor<f64>> = m.params.named().into_iter().map(|(_, t)| t.clone()).collect();
        let report = grad_check(
            |tape, v| {
                let vars = ParamVars::from_ordered(v, &cfg)?;
                let he = encode(tape, &vars, &e, &cfg, None)?;
                let ha = encode(tape, &vars, &a, &cfg, None)?;
                Ok(co_attend(tape, &vars, he.hidden, ha.hidden)?.y)
            },
            &inputs,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
