//! Triplet pre-training: MLM on the original stream, RTD on the perturbed
//! streams, and the contrastive loss on `[CLS]`, combined with learned
//! weights.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, OptimState};
use super::schedule::lr_at;
use crate::autodiff::{Tape, Var};
use crate::encoder::{
    cls_rows, forward, mlm_logits, rtd_logits, Batch, Encoder, EncoderConfig, EncoderParams,
    EncoderVars,
};
use crate::error::{Error, Result};
use crate::objectives::{
    apply_mlm_masking, cts_loss, mlm_loss, rtd_loss, total_loss, LossTerm, LossWeights,
    MaskingConfig, RtdInput,
};
use crate::perturb::{Perturber, TripletExample};
use crate::rng::{self, stream, Rng};
use crate::textproc::{TaggedSentence, Vocab, CLS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Triplets per step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 500,
            total_steps: 2000,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.peak_lr.is_nan() || self.peak_lr <= 0.0 || self.batch_size == 0 {
            return Err(Error::Config(
                "peak_lr and batch_size must be positive".into(),
            ));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        lr_at(step, self.peak_lr, self.warmup_steps, self.total_steps)
    }
}

/// Id sequences of one triplet, each prefixed with `[CLS]`; the indicator
/// vectors are aligned with the ids (0 at `[CLS]`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTriplet {
    pub ori: Vec<u32>,
    pub syn: Vec<u32>,
    pub ant: Vec<u32>,
    pub delta_syn: Vec<u8>,
    pub delta_ant: Vec<u8>,
}

impl EncodedTriplet {
    /// Encodes and truncates to `max_len` ids.
    pub fn new(vocab: &Vocab, t: &TripletExample, max_len: usize) -> EncodedTriplet {
        let keep = max_len.saturating_sub(1).min(t.len());
        let ids = |toks: &[String]| -> Vec<u32> {
            std::iter::once(CLS)
                .chain(vocab.encode(&toks[..keep]))
                .collect()
        };
        let delta = |d: &[u8]| -> Vec<u8> {
            std::iter::once(0)
                .chain(d[..keep].iter().copied())
                .collect()
        };
        EncodedTriplet {
            ori: ids(&t.tokens_ori),
            syn: ids(&t.tokens_syn),
            ant: ids(&t.tokens_ant),
            delta_syn: delta(&t.delta_syn),
            delta_ant: delta(&t.delta_ant),
        }
    }
}

/// Loss terms of one pre-training graph.
#[derive(Debug, Clone, Copy)]
pub struct PretrainGraph {
    pub total: Var,
    pub mlm: LossTerm,
    pub rtd: LossTerm,
    pub cts: LossTerm,
}

/// Builds the combined loss for a batch. The original sequences are
/// MLM-corrupted with `mask_rng`; one forward pass covers all three streams.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_loss(
    tape: &mut Tape,
    vars: &EncoderVars,
    weights: Var,
    cfg: &EncoderConfig,
    batch: &[EncodedTriplet],
    masking: &MaskingConfig,
    mask_rng: &mut Rng,
    dropout_rng: Option<&mut Rng>,
) -> Result<PretrainGraph> {
    if batch.is_empty() {
        return Err(Error::Input("empty training batch".into()));
    }
    let b = batch.len();
    let mut seqs = Vec::with_capacity(3 * b);
    let mut labels = Vec::new();
    for t in batch {
        let masked = apply_mlm_masking(&t.ori, cfg.vocab_size, masking, mask_rng);
        labels.push(masked.labels);
        seqs.push(masked.ids);
    }
    seqs.extend(batch.iter().map(|t| t.syn.clone()));
    seqs.extend(batch.iter().map(|t| t.ant.clone()));
    let input = Batch::from_ids(&seqs);
    let len = input.len;
    let out = forward(tape, vars, cfg, &input, dropout_rng)?;

    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (i, ls) in labels.iter().enumerate() {
        for &(p, id) in ls {
            positions.push(i * len + p);
            targets.push(id);
        }
    }
    let mlm = if positions.is_empty() {
        mlm_loss(tape, out.hidden, &[])?
    } else {
        let logits = mlm_logits(tape, vars, out.hidden, &positions)?;
        mlm_loss(tape, logits, &targets)?
    };

    let perturbed = tape.slice(out.hidden, b * len, 3 * b * len)?;
    let z = rtd_logits(tape, vars, perturbed)?;
    let mut delta = vec![0u8; 2 * b * len];
    let valid: Vec<bool> = input.mask[b * len..]
        .iter()
        .enumerate()
        .map(|(i, &m)| m && i % len != 0)
        .collect();
    for (k, t) in batch.iter().enumerate() {
        delta[k * len..k * len + t.delta_syn.len()].copy_from_slice(&t.delta_syn);
        let o = (b + k) * len;
        delta[o..o + t.delta_ant.len()].copy_from_slice(&t.delta_ant);
    }
    let rtd = rtd_loss(
        tape,
        &[RtdInput {
            logits: z,
            delta: &delta,
            valid: &valid,
        }],
    )?;

    let cls = cls_rows(tape, out.hidden, &input)?;
    let c_ori = tape.slice(cls, 0, b)?;
    let c_syn = tape.slice(cls, b, 2 * b)?;
    let c_ant = tape.slice(cls, 2 * b, 3 * b)?;
    let cts = LossTerm {
        value: cts_loss(tape, c_ori, c_syn, c_ant)?,
        present: true,
    };
    let total = total_loss(tape, [mlm, rtd, cts], weights)?;
    Ok(PretrainGraph {
        total,
        mlm,
        rtd,
        cts,
    })
}

/// Loss components of one step; `None` for a term absent from the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub step: u64,
    pub lr: f64,
    pub mlm: Option<f64>,
    pub rtd: Option<f64>,
    pub cts: f64,
    pub total: f64,
}

impl StepLosses {
    /// `step lr l_mlm l_rtd l_cts total`, tab-separated; absent terms are `-`.
    pub fn log_line(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.step,
            self.lr,
            opt(self.mlm),
            opt(self.rtd),
            self.cts,
            self.total
        )
    }
}

/// Everything that evolves during pre-training.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainState {
    pub config: EncoderConfig,
    pub params: EncoderParams,
    pub loss_weights: LossWeights,
    pub optim: OptimState,
    /// Completed steps.
    pub step: u64,
}

impl PretrainState {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<PretrainState> {
        let params = EncoderParams::init(&config, seed)?;
        let lw = LossWeights::default().to_tensor();
        let optim = OptimState::zeros_like(params.values().into_iter().chain([&lw]));
        Ok(PretrainState {
            config,
            params,
            loss_weights: LossWeights::default(),
            optim,
            step: 0,
        })
    }

    pub fn encoder(&self) -> Encoder {
        Encoder {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }
}

/// One optimizer step on `batch`. Masking and dropout randomness derive from
/// `(cfg.seed, step)`, so a resumed run replays exactly.
pub fn train_step(
    state: &mut PretrainState,
    batch: &[EncodedTriplet],
    cfg: &TrainConfig,
    masking: &MaskingConfig,
) -> Result<StepLosses> {
    let step = state.step;
    let mut mask_rng = rng::derive(cfg.seed, &[stream::MASK, step]);
    let mut drop_rng = rng::derive(cfg.seed, &[stream::DROPOUT, step]);
    let mut tape = Tape::new();
    let vars = state.params.bind(&mut tape);
    let weights = tape.param(state.loss_weights.to_tensor());
    let dropout = (state.config.dropout_p > 0.0).then_some(&mut drop_rng);
    let g = pretrain_loss(
        &mut tape,
        &vars,
        weights,
        &state.config,
        batch,
        masking,
        &mut mask_rng,
        dropout,
    )?;
    let grads = tape.backward(g.total)?;

    let value = |t: LossTerm| t.present.then(|| tape.value(t.value).item());
    let losses = StepLosses {
        step: step + 1,
        lr: cfg.lr_at(step + 1),
        mlm: value(g.mlm),
        rtd: value(g.rtd),
        cts: tape.value(g.cts.value).item(),
        total: tape.value(g.total).item(),
    };

    let mut lw = state.loss_weights.to_tensor();
    let mut grad_list: Vec<_> = vars
        .values()
        .into_iter()
        .zip(state.params.values())
        .map(|(&v, p)| grads.get_or_zeros(v, p))
        .collect();
    grad_list.push(grads.get_or_zeros(weights, &lw));
    let mut targets: Vec<_> = state.params.values_mut();
    targets.push(&mut lw);
    let decay: Vec<bool> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| i + 1 < grad_list.len() && t.rank() == 2)
        .collect();
    adam_step(
        &mut targets,
        &grad_list,
        &decay,
        &mut state.optim,
        losses.lr,
        &cfg.adam(),
    )?;
    state.loss_weights = LossWeights::from_tensor(&lw)?;
    state.step += 1;
    Ok(losses)
}

/// Tagged sentences plus the perturbation resources used to draw triplets on
/// the fly.
pub struct PretrainData<'a> {
    pub sentences: &'a [TaggedSentence],
    pub perturber: &'a Perturber<'a>,
}

impl PretrainData<'_> {
    /// Batch for `step`: sentences drawn uniformly with replacement, each
    /// perturbed with a stream keyed by its slot in the global schedule.
    pub fn batch(
        &self,
        step: u64,
        batch_size: usize,
        seed: u64,
        max_len: usize,
    ) -> Result<Vec<EncodedTriplet>> {
        if self.sentences.is_empty() {
            return Err(Error::Input("pre-training corpus is empty".into()));
        }
        let mut pick = rng::derive(seed, &[stream::BATCH, step]);
        Ok((0..batch_size)
            .map(|j| {
                let s = &self.sentences[pick.gen_range(0..self.sentences.len())];
                let index = step * batch_size as u64 + j as u64;
                let t = self.perturber.triplet_tagged(&s.tokens, &s.tags, index);
                EncodedTriplet::new(self.perturber.vocab, &t, max_len)
            })
            .collect())
    }
}

/// Trains from `state.step` up to `cfg.total_steps`, calling `on_step` after
/// every step.
pub fn pretrain(
    state: &mut PretrainState,
    data: &PretrainData<'_>,
    cfg: &TrainConfig,
    masking: &MaskingConfig,
    on_step: impl FnMut(&PretrainState, &StepLosses) -> Result<()>,
) -> Result<()> {
    pretrain_until(state, data, cfg, masking, cfg.total_steps, on_step)
}

/// Like [`pretrain`], but halts once `until` steps are complete. The
/// learning-rate schedule still spans `cfg.total_steps`.
pub fn pretrain_until(
    state: &mut PretrainState,
    data: &PretrainData<'_>,
    cfg: &TrainConfig,
    masking: &MaskingConfig,
    until: u64,
    mut on_step: impl FnMut(&PretrainState, &StepLosses) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    masking.validate()?;
    while state.step < until.min(cfg.total_steps) {
        let batch = data.batch(state.step, cfg.batch_size, cfg.seed, state.config.max_len)?;
        let losses = train_step(state, &batch, cfg, masking)?;
        on_step(state, &losses)?;
    }
    Ok(())
}
