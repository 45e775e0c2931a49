//! Pre-norm transformer encoder with learned absolute positions, a masked
//! language modeling head tied to the token embeddings, and a single weight
//! vector for replaced-token detection.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::textproc::{Vocab, CLS, PAD, SEP};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Additive score for padded key positions.
pub const MASK_SCORE: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    /// Standard deviation of the normal weight initialization.
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 256,
            max_len: 64,
            dropout_p: 0.1,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.max_len == 0 {
            return bad(format!("encoder dimensions must be positive: {self:?}"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} must lie in [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_g: T,
    pub ln1_b: T,
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
    pub ln2_g: T,
    pub ln2_b: T,
    pub ff1_w: T,
    pub ff1_b: T,
    pub ff2_w: T,
    pub ff2_b: T,
}

/// Every encoder tensor, generic so that the same layout holds values,
/// tape variables or optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<T> {
    pub tok_emb: T,
    pub pos_emb: T,
    pub layers: Vec<LayerWeights<T>>,
    pub lnf_g: T,
    pub lnf_b: T,
    pub mlm_bias: T,
    pub rtd_w: T,
}

pub type EncoderParams = EncoderWeights<Tensor>;
pub type EncoderVars = EncoderWeights<Var>;

impl<T> LayerWeights<T> {
    fn fields(&self) -> [(&'static str, &T); 16] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("ff1_w", &self.ff1_w),
            ("ff1_b", &self.ff1_b),
            ("ff2_w", &self.ff2_w),
            ("ff2_b", &self.ff2_b),
        ]
    }

    fn fields_mut(&mut self) -> [&mut T; 16] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.ff1_w,
            &mut self.ff1_b,
            &mut self.ff2_w,
            &mut self.ff2_b,
        ]
    }

    fn from_iter(it: &mut impl Iterator<Item = T>) -> Option<LayerWeights<T>> {
        Some(LayerWeights {
            ln1_g: it.next()?,
            ln1_b: it.next()?,
            wq: it.next()?,
            bq: it.next()?,
            wk: it.next()?,
            bk: it.next()?,
            wv: it.next()?,
            bv: it.next()?,
            wo: it.next()?,
            bo: it.next()?,
            ln2_g: it.next()?,
            ln2_b: it.next()?,
            ff1_w: it.next()?,
            ff1_b: it.next()?,
            ff2_w: it.next()?,
            ff2_b: it.next()?,
        })
    }
}

impl<T> EncoderWeights<T> {
    /// All tensors with stable dotted names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(
                layer
                    .fields()
                    .into_iter()
                    .map(|(n, t)| (format!("layer{i}.{n}"), t)),
            );
        }
        out.push(("lnf_g".to_string(), &self.lnf_g));
        out.push(("lnf_b".to_string(), &self.lnf_b));
        out.push(("mlm_bias".to_string(), &self.mlm_bias));
        out.push(("rtd_w".to_string(), &self.rtd_w));
        out
    }

    pub fn values(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable references in the same order as [`EncoderWeights::named`].
    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.fields_mut());
        }
        out.extend([
            &mut self.lnf_g,
            &mut self.lnf_b,
            &mut self.mlm_bias,
            &mut self.rtd_w,
        ]);
        out
    }

    /// Rebuilds from values in [`EncoderWeights::named`] order.
    pub fn from_values(
        n_layers: usize,
        values: impl IntoIterator<Item = T>,
    ) -> Option<EncoderWeights<T>> {
        let mut it = values.into_iter();
        let tok_emb = it.next()?;
        let pos_emb = it.next()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layers.push(LayerWeights::from_iter(&mut it)?);
        }
        let w = EncoderWeights {
            tok_emb,
            pos_emb,
            layers,
            lnf_g: it.next()?,
            lnf_b: it.next()?,
            mlm_bias: it.next()?,
            rtd_w: it.next()?,
        };
        it.next().is_none().then_some(w)
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> EncoderWeights<U> {
        let n_layers = self.layers.len();
        let mapped: Vec<U> = self.named().into_iter().map(|(n, t)| f(&n, t)).collect();
        EncoderWeights::from_values(n_layers, mapped).expect("same layout")
    }
}

impl EncoderParams {
    /// Random initialization: normal weights, unit layer-norm gains, zero
    /// biases.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
        cfg.validate()?;
        let mut rng = rng::derive(seed, &[rng::stream::INIT]);
        let (d, f, std) = (cfg.d_model, cfg.d_ff, cfg.init_std);
        let normal = |shape: &[usize], rng: &mut Rng| Tensor::randn(shape.to_vec(), std, rng);
        let tok_emb = normal(&[cfg.vocab_size, d], &mut rng);
        let pos_emb = normal(&[cfg.max_len, d], &mut rng);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                ln1_g: Tensor::ones([d]),
                ln1_b: Tensor::zeros([d]),
                wq: normal(&[d, d], &mut rng),
                bq: Tensor::zeros([d]),
                wk: normal(&[d, d], &mut rng),
                bk: Tensor::zeros([d]),
                wv: normal(&[d, d], &mut rng),
                bv: Tensor::zeros([d]),
                wo: normal(&[d, d], &mut rng),
                bo: Tensor::zeros([d]),
                ln2_g: Tensor::ones([d]),
                ln2_b: Tensor::zeros([d]),
                ff1_w: normal(&[d, f], &mut rng),
                ff1_b: Tensor::zeros([f]),
                ff2_w: normal(&[f, d], &mut rng),
                ff2_b: Tensor::zeros([d]),
            })
            .collect();
        let rtd_w = normal(&[d], &mut rng);
        Ok(EncoderWeights {
            tok_emb,
            pos_emb,
            layers,
            lnf_g: Tensor::ones([d]),
            lnf_b: Tensor::zeros([d]),
            mlm_bias: Tensor::zeros([cfg.vocab_size]),
            rtd_w,
        })
    }

    /// Checks every tensor against the shapes implied by `cfg`.
    pub fn check_shapes(&self, cfg: &EncoderConfig) -> Result<()> {
        let expected = EncoderParams::init(
            &EncoderConfig {
                init_std: 0.0,
                ..cfg.clone()
            },
            0,
        )?;
        if self.layers.len() != cfg.n_layers {
            return Err(Error::Config(format!(
                "parameters have {} layers, configuration {}",
                self.layers.len(),
                cfg.n_layers
            )));
        }
        for ((name, have), want) in self.named().into_iter().zip(expected.values()) {
            if have.shape() != want.shape() {
                return Err(Error::Config(format!(
                    "{name} has shape {:?}, expected {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
            if !have.is_finite() {
                return Err(Error::Config(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderVars {
        self.map(|_, t| tape.param(t.clone()))
    }

    pub fn bind_constant(&self, tape: &mut Tape) -> EncoderVars {
        self.map(|_, t| tape.constant(t.clone()))
    }

    pub fn num_parameters(&self) -> usize {
        self.values().iter().map(|t| t.len()).sum()
    }
}

/// Padded batch of id sequences, each starting with `[CLS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Row-major `[batch, len]`.
    pub ids: Vec<u32>,
    /// True at real (non-pad) positions.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl Batch {
    /// Pads sequences to the longest one. Sequences must already carry
    /// `[CLS]` at position 0.
    pub fn from_ids(seqs: &[Vec<u32>]) -> Batch {
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            ids.extend_from_slice(s);
            mask.extend(std::iter::repeat_n(true, s.len()));
            ids.extend(std::iter::repeat_n(PAD, len - s.len()));
            mask.extend(std::iter::repeat_n(false, len - s.len()));
        }
        Batch {
            ids,
            mask,
            batch: seqs.len(),
            len,
        }
    }

    /// Explicit ids and mask for a single sequence.
    pub fn single(ids: &[u32], mask: &[bool]) -> Result<Batch> {
        if ids.len() != mask.len() {
            return Err(Error::Input("ids and pad mask differ in length".into()));
        }
        Ok(Batch {
            ids: ids.to_vec(),
            mask: mask.to_vec(),
            batch: 1,
            len: ids.len(),
        })
    }

    /// Positions `b * len + t` holding real content tokens (not `[CLS]`, not
    /// padding).
    pub fn content_positions(&self) -> Vec<usize> {
        (0..self.batch * self.len)
            .filter(|&i| self.mask[i] && i % self.len != 0)
            .collect()
    }

    pub fn cls_positions(&self) -> Vec<usize> {
        (0..self.batch).map(|b| b * self.len).collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.mask
            .chunks(self.len.max(1))
            .map(|m| m.iter().filter(|&&x| x).count())
            .collect()
    }
}

/// `[CLS] tokens...`
pub fn with_cls<S: AsRef<str>>(vocab: &Vocab, tokens: &[S]) -> Vec<u32> {
    std::iter::once(CLS).chain(vocab.encode(tokens)).collect()
}

/// `[CLS] a... [SEP] b...`
pub fn with_cls_pair<S: AsRef<str>>(vocab: &Vocab, a: &[S], b: &[S]) -> Vec<u32> {
    let mut ids = with_cls(vocab, a);
    ids.push(SEP);
    ids.extend(vocab.encode(b));
    ids
}

/// Forward pass results. `hidden` is `[batch * len, d_model]` after the
/// final layer norm; `layers[0]` is the embedding output, `layers[i]` the
/// residual stream after block `i`, and the last entry equals `hidden`.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub hidden: Var,
    pub layers: Vec<Var>,
}

fn attention_mask(batch: &Batch, n_heads: usize) -> Tensor {
    let t = batch.len;
    let mut data = Vec::with_capacity(batch.batch * n_heads * t * t);
    for b in 0..batch.batch {
        let keys = &batch.mask[b * t..(b + 1) * t];
        for _ in 0..n_heads * t {
            data.extend(keys.iter().map(|&real| if real { 0.0 } else { MASK_SCORE }));
        }
    }
    Tensor::new([batch.batch * n_heads, t, t], data).expect("mask shape")
}

/// Linear layer `x · w + b` on a `[rows, in]` input.
fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Runs the encoder over `batch`. Dropout is active iff `dropout_rng` is
/// given.
pub fn forward(
    tape: &mut Tape,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
    batch: &Batch,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<EncoderOutput> {
    let (bsz, t, d, h) = (batch.batch, batch.len, cfg.d_model, cfg.n_heads);
    if t > cfg.max_len {
        return Err(Error::Input(format!(
            "sequence length {t} exceeds max_len {}",
            cfg.max_len
        )));
    }
    if bsz == 0 || t == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if let Some(&bad) = batch.ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
        return Err(Error::Input(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let p = cfg.dropout_p;
    let train = dropout_rng.is_some();
    let mut drop = |tape: &mut Tape, x: Var| -> Result<Var> {
        match dropout_rng.as_deref_mut() {
            Some(rng) => tape.dropout(x, p, rng, train),
            None => Ok(x),
        }
    };

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mask = tape.constant(attention_mask(batch, h));
    let positions: Vec<u32> = (0..bsz).flat_map(|_| 0..t as u32).collect();

    let tok = tape.embedding_gather(vars.tok_emb, &batch.ids)?;
    let pos = tape.embedding_gather(vars.pos_emb, &positions)?;
    let x = tape.add(tok, pos)?;
    let mut x = drop(tape, x)?;
    let mut layers = vec![x];

    let split = |tape: &mut Tape, v: Var| -> Result<Var> {
        let v = tape.reshape(v, &[bsz, t, h, dh])?;
        let v = tape.permute(v, &[0, 2, 1, 3])?;
        tape.reshape(v, &[bsz * h, t, dh])
    };

    for layer in &vars.layers {
        let a = tape.layer_norm(x, layer.ln1_g, layer.ln1_b, LAYER_NORM_EPS)?;
        let q = linear(tape, a, layer.wq, layer.bq)?;
        let k = linear(tape, a, layer.wk, layer.bk)?;
        let v = linear(tape, a, layer.wv, layer.bv)?;
        let (q, k, v) = (split(tape, q)?, split(tape, k)?, split(tape, v)?);
        let scores = tape.matmul_t(q, k)?;
        let scores = tape.mul_scalar(scores, scale)?;
        let scores = tape.add(scores, mask)?;
        let probs = tape.softmax_rows(scores)?;
        let probs = drop(tape, probs)?;
        let ctx = tape.matmul(probs, v)?;
        let ctx = tape.reshape(ctx, &[bsz, h, t, dh])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[bsz * t, d])?;
        let o = linear(tape, ctx, layer.wo, layer.bo)?;
        let o = drop(tape, o)?;
        x = tape.add(x, o)?;

        let f = tape.layer_norm(x, layer.ln2_g, layer.ln2_b, LAYER_NORM_EPS)?;
        let f = linear(tape, f, layer.ff1_w, layer.ff1_b)?;
        let f = tape.gelu(f)?;
        let f = linear(tape, f, layer.ff2_w, layer.ff2_b)?;
        let f = drop(tape, f)?;
        x = tape.add(x, f)?;
        layers.push(x);
    }
    let hidden = tape.layer_norm(x, vars.lnf_g, vars.lnf_b, LAYER_NORM_EPS)?;
    if !vars.layers.is_empty() {
        layers.pop();
    }
    layers.push(hidden);
    Ok(EncoderOutput { hidden, layers })
}

/// Rows `positions` of `hidden` projected onto the (tied) token embeddings,
/// plus the output bias: `[positions.len(), vocab_size]`.
pub fn mlm_logits(
    tape: &mut Tape,
    vars: &EncoderVars,
    hidden: Var,
    positions: &[usize],
) -> Result<Var> {
    let rows = tape.gather_rows(hidden, positions)?;
    let logits = tape.matmul_t(rows, vars.tok_emb)?;
    tape.add(logits, vars.mlm_bias)
}

/// `rtd_w · h_t` for every row of `hidden`: shape `[rows]`.
pub fn rtd_logits(tape: &mut Tape, vars: &EncoderVars, hidden: Var) -> Result<Var> {
    let d = tape.value(vars.rtd_w).len();
    let w = tape.reshape(vars.rtd_w, &[d, 1])?;
    let z = tape.matmul(hidden, w)?;
    let rows = tape.value(z).len();
    tape.reshape(z, &[rows])
}

/// `rtd_w · h_t` for one row.
pub fn rtd_logit(tape: &mut Tape, vars: &EncoderVars, hidden: Var, t: usize) -> Result<Var> {
    let row = tape.gather_rows(hidden, &[t])?;
    let d = tape.value(row).len();
    let row = tape.reshape(row, &[d])?;
    tape.dot(vars.rtd_w, row)
}

/// `[CLS]` rows of a batch: `[batch, d_model]`.
pub fn cls_rows(tape: &mut Tape, hidden: Var, batch: &Batch) -> Result<Var> {
    tape.gather_rows(hidden, &batch.cls_positions())
}

/// Parameters plus configuration, for inference without gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: EncoderParams,
}

/// Hidden states of one sequence at every layer, `[len, d_model]` each.
#[derive(Debug, Clone)]
pub struct LayerStates {
    pub layers: Vec<Tensor>,
    pub mask: Vec<bool>,
}

impl LayerStates {
    pub fn last(&self) -> &Tensor {
        self.layers.last().expect("at least one layer")
    }
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Encoder> {
        let params = EncoderParams::init(&config, seed)?;
        Ok(Encoder { config, params })
    }

    /// Final hidden states `[ids.len(), d_model]` without dropout.
    pub fn encode(&self, ids: &[u32], pad_mask: &[bool]) -> Result<Tensor> {
        let batch = Batch::single(ids, pad_mask)?;
        let mut tape = Tape::new();
        let vars = self.params.bind_constant(&mut tape);
        let out = forward(&mut tape, &vars, &self.config, &batch, None)?;
        Ok(tape.value(out.hidden).clone())
    }

    /// Hidden states of every layer for each sequence (no dropout).
    pub fn encode_layers(&self, seqs: &[Vec<u32>]) -> Result<Vec<LayerStates>> {
        let batch = Batch::from_ids(seqs);
        let mut tape = Tape::new();
        let vars = self.params.bind_constant(&mut tape);
        let out = forward(&mut tape, &vars, &self.config, &batch, None)?;
        let t = batch.len;
        let d = self.config.d_model;
        let mut states: Vec<LayerStates> = seqs
            .iter()
            .enumerate()
            .map(|(b, _)| LayerStates {
                layers: Vec::with_capacity(out.layers.len()),
                mask: batch.mask[b * t..(b + 1) * t].to_vec(),
            })
            .collect();
        for &layer in &out.layers {
            let v = tape.value(layer).data();
            for (b, st) in states.iter_mut().enumerate() {
                let rows = v[b * t * d..(b + 1) * t * d].to_vec();
                st.layers.push(Tensor::new([t, d], rows)?);
            }
        }
        Ok(states)
    }
}
