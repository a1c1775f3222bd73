//! Differentiable building blocks of the network. Each function records its
//! work on a [`Tape`] and returns the resulting [`Var`]s.
//!
//! Row-vector convention throughout: a sentence representation is a row,
//! and weights multiply from the right.

use rand::Rng;

use super::{ConvActivation, LstmParams, ModelParams};
use crate::data::{EncodedDocument, PAD_ID};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

/// Tape handles of one LSTM's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_f: Var,
    pub w_i: Var,
    pub w_c: Var,
    pub w_o: Var,
    pub b_f: Var,
    pub b_i: Var,
    pub b_c: Var,
    pub b_o: Var,
    pub input: usize,
    pub hidden: usize,
}

impl LstmVars {
    pub fn register<T: Float>(tape: &Tape<T>, p: &LstmParams<T>) -> Self {
        Self {
            w_f: tape.leaf(p.w_f.clone()),
            w_i: tape.leaf(p.w_i.clone()),
            w_c: tape.leaf(p.w_c.clone()),
            w_o: tape.leaf(p.w_o.clone()),
            b_f: tape.leaf(p.b_f.clone()),
            b_i: tape.leaf(p.b_i.clone()),
            b_c: tape.leaf(p.b_c.clone()),
            b_o: tape.leaf(p.b_o.clone()),
            input: p.input_size(),
            hidden: p.hidden_size(),
        }
    }

    fn all(&self) -> [Var; 8] {
        [
            self.w_f, self.w_i, self.w_c, self.w_o, self.b_f, self.b_i, self.b_c, self.b_o,
        ]
    }
}

/// Tape handles of every model parameter, in [`ModelParams::named`] order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub embedding: Var,
    pub conv_weight: Var,
    pub conv_bias: Var,
    pub pool_weight: Var,
    pub pool_bias: Var,
    pub pool_context: Var,
    pub sentence_lstm: LstmVars,
    pub sim_weight: Var,
    pub sim_bias: Var,
    pub modeling_lstm: LstmVars,
    pub out_weight: Var,
    pub out_bias: Var,
}

impl ParamVars {
    pub fn register<T: Float>(tape: &Tape<T>, p: &ModelParams<T>) -> Self {
        Self {
            embedding: tape.leaf(p.embedding.clone()),
            conv_weight: tape.leaf(p.conv_weight.clone()),
            conv_bias: tape.leaf(p.conv_bias.clone()),
            pool_weight: tape.leaf(p.pool_weight.clone()),
            pool_bias: tape.leaf(p.pool_bias.clone()),
            pool_context: tape.leaf(p.pool_context.clone()),
            sentence_lstm: LstmVars::register(tape, &p.sentence_lstm),
            sim_weight: tape.leaf(p.sim_weight.clone()),
            sim_bias: tape.leaf(p.sim_bias.clone()),
            modeling_lstm: LstmVars::register(tape, &p.modeling_lstm),
            out_weight: tape.leaf(p.out_weight.clone()),
            out_bias: tape.leaf(p.out_bias.clone()),
        }
    }

    /// Vars in the same order as [`ModelParams::named`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut v = vec![
            self.embedding,
            self.conv_weight,
            self.conv_bias,
            self.pool_weight,
            self.pool_bias,
            self.pool_context,
        ];
        v.extend(self.sentence_lstm.all());
        v.extend([self.sim_weight, self.sim_bias]);
        v.extend(self.modeling_lstm.all());
        v.extend([self.out_weight, self.out_bias]);
        v
    }
}

/// Adds a bias vector `[n]` to every row of `x: [m, n]`.
pub fn add_bias<T: Float>(tape: &Tape<T>, x: Var, bias: Var) -> Result<Var> {
    let shape = tape.shape(x);
    let n = *shape.last().expect("rank >= 1");
    let rows = shape.iter().product::<usize>() / n;
    let flat = if shape.len() == 2 {
        x
    } else {
        tape.reshape(x, &[rows, n])?
    };
    let b = tape.reshape(bias, &[1, n])?;
    let b = tape.expand(b, &[rows, n])?;
    let out = tape.add(flat, b)?;
    if shape.len() == 2 {
        Ok(out)
    } else {
        tape.reshape(out, &shape)
    }
}

/// Inverted dropout: keeps each element with probability `1 − rate` and
/// rescales survivors by `1 / (1 − rate)`.
pub fn dropout<T: Float, R: Rng>(tape: &Tape<T>, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.shape(x);
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let numel = shape.iter().product();
    let mask: Vec<T> = (0..numel)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(&shape, mask)?);
    tape.mul(x, mask)
}

/// Width (token positions) used for a document's real sentences: the longest
/// sentence, but never less than the kernel.
pub fn document_width(doc: &EncodedDocument) -> usize {
    doc.lengths().iter().copied().max().unwrap_or(0).max(doc.kernel())
}

/// Embedding lookup over the real sentences of `doc`: `[S, W, d_L]`.
///
/// Padded positions are all-zero whatever the table holds. With `dropout`
/// set, inverted dropout is applied to the result.
pub fn embed_lookup<T: Float, R: Rng>(
    tape: &Tape<T>,
    doc: &EncodedDocument,
    embedding: Var,
    dropout_rate: Option<(f64, &mut R)>,
) -> Result<Var> {
    let table = tape.shape(embedding);
    let (vocab, dim) = (table[0], table[1]);
    let (s, w) = (doc.num_sentences(), document_width(doc));
    let mut rows = Vec::with_capacity(s * w);
    for (si, &len) in doc.lengths().iter().enumerate() {
        let ids = doc.row(si);
        let real = len.min(w);
        for &id in &ids[..real] {
            if id as usize >= vocab {
                return Err(Error::Encoding(format!(
                    "token id {id} out of range for {vocab} embeddings"
                )));
            }
            rows.push((id != PAD_ID).then_some(id as usize));
        }
        rows.extend(std::iter::repeat_n(None, w - real));
    }
    let flat = tape.gather_rows(embedding, &rows)?;
    let flat = match dropout_rate {
        Some((rate, rng)) => dropout(tape, flat, rate, rng)?,
        None => flat,
    };
    tape.reshape(flat, &[s, w, dim])
}

/// 1-D convolution over the token axis: `[S, W, d_L] → [S, W − k + 1, d_C]`.
pub fn conv_sentence<T: Float>(
    tape: &Tape<T>,
    embedded: Var,
    weight: Var,
    bias: Var,
    kernel: usize,
    activation: ConvActivation,
) -> Result<Var> {
    let shape = tape.shape(embedded);
    let &[s, w, d] = shape.as_slice() else {
        return Err(Error::Usage(format!("conv input must be 3-D, got {shape:?}")));
    };
    if w < kernel {
        return Err(Error::dimension("conv_sentence", &shape, &[kernel]));
    }
    let p = w - kernel + 1;
    let flat = tape.reshape(embedded, &[s * w, d])?;
    let mut rows = Vec::with_capacity(s * p * kernel);
    for si in 0..s {
        for start in 0..p {
            rows.extend((0..kernel).map(|j| Some(si * w + start + j)));
        }
    }
    let windows = tape.gather_rows(flat, &rows)?;
    let windows = tape.reshape(windows, &[s * p, kernel * d])?;
    let pre = add_bias(tape, tape.matmul(windows, weight)?, bias)?;
    let act = match activation {
        ConvActivation::Relu => tape.relu(pre)?,
        ConvActivation::Tanh => tape.tanh(pre)?,
    };
    let filters = tape.shape(act)[1];
    tape.reshape(act, &[s, p, filters])
}

/// Attention pooling over convolution windows.
///
/// `m_i = tanh(p_i U_m + b_m)`, `v = softmax(m_i · u_v)` over valid windows,
/// `s = Σ v_i p_i`. Returns `(pooled [S, d_C], weights [S, P])`.
pub fn attention_pool<T: Float>(
    tape: &Tape<T>,
    conv: Var,
    window_mask: &[bool],
    weight: Var,
    bias: Var,
    context: Var,
) -> Result<(Var, Var)> {
    let shape = tape.shape(conv);
    let &[s, p, d] = shape.as_slice() else {
        return Err(Error::Usage(format!("pool input must be 3-D, got {shape:?}")));
    };
    let flat = tape.reshape(conv, &[s * p, d])?;
    let m = tape.tanh(add_bias(tape, tape.matmul(flat, weight)?, bias)?)?;
    let ctx = tape.reshape(context, &[d, 1])?;
    let logits = tape.reshape(tape.matmul(m, ctx)?, &[s, p])?;
    let weights = tape.softmax_masked(logits, window_mask)?;
    let w3 = tape.reshape(weights, &[s, 1, p])?;
    let pooled = tape.reshape(tape.matmul(w3, conv)?, &[s, d])?;
    Ok((pooled, weights))
}

/// Runs an LSTM over the rows of `x: [S, d_in]` and returns all hidden
/// states `[S, hidden]`. Zero initial state unless `h0`/`c0` are given
/// (each `[1, hidden]`).
pub fn lstm_forward<T: Float>(tape: &Tape<T>, x: Var, p: &LstmVars, h0: Option<Var>, c0: Option<Var>) -> Result<Var> {
    let shape = tape.shape(x);
    let &[steps, d_in] = shape.as_slice() else {
        return Err(Error::Usage(format!("lstm input must be 2-D, got {shape:?}")));
    };
    if d_in != p.input {
        return Err(Error::dimension(
            "lstm_forward",
            &shape,
            &[p.hidden + p.input, p.hidden],
        ));
    }
    let h = p.hidden;
    // Gate order f, i, c, o, fused into one (h + d_in) × 4h matrix.
    let w_all = tape.concat(&[p.w_f, p.w_i, p.w_c, p.w_o], 1)?;
    let b_all = tape.concat(&[p.b_f, p.b_i, p.b_c, p.b_o], 0)?;
    let w_h = tape.slice(w_all, 0, 0, h)?;
    let w_x = tape.slice(w_all, 0, h, d_in)?;
    let x_proj = add_bias(tape, tape.matmul(x, w_x)?, b_all)?;

    let mut h_prev = match h0 {
        Some(v) => v,
        None => tape.constant(Tensor::zeros(&[1, h])),
    };
    let mut c_prev = match c0 {
        Some(v) => v,
        None => tape.constant(Tensor::zeros(&[1, h])),
    };
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let z = tape.add(tape.slice(x_proj, 0, t, 1)?, tape.matmul(h_prev, w_h)?)?;
        let f = tape.sigmoid(tape.slice(z, 1, 0, h)?)?;
        let i = tape.sigmoid(tape.slice(z, 1, h, h)?)?;
        let c_hat = tape.tanh(tape.slice(z, 1, 2 * h, h)?)?;
        let o = tape.sigmoid(tape.slice(z, 1, 3 * h, h)?)?;
        let c = tape.add(tape.mul(f, c_prev)?, tape.mul(i, c_hat)?)?;
        let h_t = tape.mul(o, tape.tanh(c)?)?;
        outputs.push(h_t);
        h_prev = h_t;
        c_prev = c;
    }
    tape.concat(&outputs, 0)
}

/// `Sim[t, j] = w · [he_t ; ha_j ; he_t ∘ ha_j] + b`: `[S_e, S_a]`.
pub fn similarity_matrix<T: Float>(tape: &Tape<T>, h_e: Var, h_a: Var, weight: Var, bias: Var) -> Result<Var> {
    let (se, sa) = (tape.shape(h_e), tape.shape(h_a));
    if se.len() != 2 || sa.len() != 2 || se[1] != sa[1] {
        return Err(Error::dimension("similarity_matrix", &se, &sa));
    }
    let (n_e, n_a, d) = (se[0], sa[0], se[1]);
    let w = tape.reshape(weight, &[3 * d, 1])?;
    let w_e = tape.slice(w, 0, 0, d)?;
    let w_a = tape.slice(w, 0, d, d)?;
    let w_x = tape.reshape(tape.slice(w, 0, 2 * d, d)?, &[1, d])?;

    let from_essay = tape.expand(tape.matmul(h_e, w_e)?, &[n_e, n_a])?;
    let from_article = tape.transpose(tape.matmul(h_a, w_a)?)?;
    let from_article = tape.expand(from_article, &[n_e, n_a])?;
    let weighted_e = tape.mul(h_e, tape.expand(w_x, &[n_e, d])?)?;
    let cross = tape.matmul(weighted_e, tape.transpose(h_a)?)?;
    let b = tape.expand(tape.reshape(bias, &[1, 1])?, &[n_e, n_a])?;
    tape.add(tape.add(tape.add(from_essay, from_article)?, cross)?, b)
}

/// Essay-to-article attention: row-wise softmax of `sim` over unmasked
/// article sentences, and the attended article `a_ea · H_a`.
pub fn essay_to_article<T: Float>(tape: &Tape<T>, sim: Var, h_a: Var, article_mask: &[bool]) -> Result<(Var, Var)> {
    let shape = tape.shape(sim);
    let (n_e, n_a) = (shape[0], shape[1]);
    if article_mask.len() != n_a {
        return Err(Error::dimension("essay_to_article", &shape, &[article_mask.len()]));
    }
    if !article_mask.iter().any(|&m| m) {
        return Err(Error::Degenerate("article has no unmasked sentence".into()));
    }
    let mask: Vec<bool> = (0..n_e).flat_map(|_| article_mask.iter().copied()).collect();
    let a_ea = tape.softmax_masked(sim, &mask)?;
    let attended = tape.matmul(a_ea, h_a)?;
    Ok((a_ea, attended))
}

/// Article-to-essay attention: per essay sentence the best similarity over
/// unmasked article sentences, softmax over unmasked essay sentences.
/// Returns `(a_ae [S_e], summary [1, d], tiled [S_e, d])`.
pub fn article_to_essay<T: Float>(
    tape: &Tape<T>,
    sim: Var,
    h_e: Var,
    essay_mask: &[bool],
    article_mask: &[bool],
) -> Result<(Var, Var, Var)> {
    let shape = tape.shape(sim);
    let (n_e, n_a) = (shape[0], shape[1]);
    if essay_mask.len() != n_e || article_mask.len() != n_a {
        return Err(Error::dimension(
            "article_to_essay",
            &shape,
            &[essay_mask.len(), article_mask.len()],
        ));
    }
    if !essay_mask.iter().any(|&m| m) {
        return Err(Error::Degenerate("essay has no unmasked sentence".into()));
    }
    if !article_mask.iter().any(|&m| m) {
        return Err(Error::Degenerate("article has no unmasked sentence".into()));
    }
    let pair_mask: Vec<bool> = (0..n_e).flat_map(|_| article_mask.iter().copied()).collect();
    let best = tape.max_masked(sim, &pair_mask)?;
    let best = tape.reshape(best, &[n_e])?;
    let a_ae = tape.softmax_masked(best, essay_mask)?;
    let summary = tape.matmul(tape.reshape(a_ae, &[1, n_e])?, h_e)?;
    let d = tape.shape(h_e)[1];
    let tiled = tape.expand(summary, &[n_e, d])?;
    Ok((a_ae, summary, tiled))
}

/// `G = [H_e ; H̃_a ; H_e ∘ H̃_a ; H_e ∘ H̃_e]` along the feature axis.
pub fn fuse<T: Float>(tape: &Tape<T>, h_e: Var, attended_article: Var, tiled_essay: Var) -> Result<Var> {
    let se = tape.shape(h_e);
    for other in [attended_article, tiled_essay] {
        let so = tape.shape(other);
        if so != se {
            return Err(Error::dimension("fuse", &se, &so));
        }
    }
    let essay_article = tape.mul(h_e, attended_article)?;
    let essay_essay = tape.mul(h_e, tiled_essay)?;
    tape.concat(&[h_e, attended_article, essay_article, essay_essay], 1)
}
