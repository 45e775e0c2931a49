//! Sentence(-pair) classification on top of the `[CLS]` state.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, OptimState};
use super::schedule::lr_at;
use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::{cls_rows, forward, with_cls, with_cls_pair, Batch, Encoder, EncoderVars};
use crate::error::{Error, Result};
use crate::objectives::mlm_loss;
use crate::rng::{self, stream, Rng};
use crate::textproc::{tokenize, Vocab};

/// One labeled text or text pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub label: usize,
    pub text: String,
    pub pair: Option<String>,
}

impl LabeledExample {
    pub fn new(label: usize, text: impl Into<String>) -> LabeledExample {
        LabeledExample {
            label,
            text: text.into(),
            pair: None,
        }
    }

    /// `[CLS] text` or `[CLS] text [SEP] pair`, truncated to `max_len`.
    pub fn ids(&self, vocab: &Vocab, max_len: usize) -> Vec<u32> {
        let a = tokenize(&self.text);
        let mut ids = match &self.pair {
            Some(b) => with_cls_pair(vocab, &a, &tokenize(b)),
            None => with_cls(vocab, &a),
        };
        ids.truncate(max_len);
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of the total steps spent warming up.
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 2e-5,
            epochs: 3,
            batch_size: 16,
            warmup_frac: 0.1,
            weight_decay: 0.01,
            n_classes: 2,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 || self.epochs == 0 || self.batch_size == 0 || self.n_classes < 2 {
            return Err(Error::Config(format!(
                "invalid fine-tuning settings {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!(
                "warmup_frac {} must lie in [0, 1]",
                self.warmup_frac
            )));
        }
        Ok(())
    }
}

/// Affine map from `[CLS]` to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// `[n_classes, d_model]`
    pub weight: Tensor,
    /// `[n_classes]`
    pub bias: Tensor,
}

impl ClassifierHead {
    pub fn init(n_classes: usize, d_model: usize, std: f64, rng: &mut Rng) -> ClassifierHead {
        ClassifierHead {
            weight: Tensor::randn([n_classes, d_model], std, rng),
            bias: Tensor::zeros([n_classes]),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub encoder: Encoder,
    pub head: ClassifierHead,
}

/// `[batch, n_classes]` logits.
pub fn classifier_logits(
    tape: &mut Tape,
    vars: &EncoderVars,
    head: (Var, Var),
    encoder: &Encoder,
    batch: &Batch,
    dropout_rng: Option<&mut Rng>,
) -> Result<Var> {
    let out = forward(tape, vars, &encoder.config, batch, dropout_rng)?;
    let cls = cls_rows(tape, out.hidden, batch)?;
    let logits = tape.matmul_t(cls, head.0)?;
    tape.add(logits, head.1)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

const PREDICT_BATCH: usize = 64;

/// Predicted label of each example (dropout off).
pub fn predict(clf: &Classifier, vocab: &Vocab, examples: &[LabeledExample]) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(PREDICT_BATCH) {
        let seqs: Vec<Vec<u32>> = chunk
            .iter()
            .map(|e| e.ids(vocab, clf.encoder.config.max_len))
            .collect();
        let batch = Batch::from_ids(&seqs);
        let mut tape = Tape::new();
        let vars = clf.encoder.params.bind_constant(&mut tape);
        let w = tape.constant(clf.head.weight.clone());
        let b = tape.constant(clf.head.bias.clone());
        let logits = classifier_logits(&mut tape, &vars, (w, b), &clf.encoder, &batch, None)?;
        preds.extend(tape.value(logits).rows().map(argmax));
    }
    Ok(preds)
}

/// Fraction of examples classified correctly.
pub fn accuracy_on(clf: &Classifier, vocab: &Vocab, examples: &[LabeledExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Input("accuracy over an empty set".into()));
    }
    let preds = predict(clf, vocab, examples)?;
    let correct = preds
        .iter()
        .zip(examples)
        .filter(|(p, e)| **p == e.label)
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    /// Classifier from the epoch with the best validation accuracy.
    pub classifier: Classifier,
    pub dev_accuracy: f64,
    /// Validation accuracy after each epoch.
    pub history: Vec<f64>,
}

/// Trains a fresh head and all encoder parameters with cross-entropy,
/// keeping the epoch with the highest accuracy on `dev`.
pub fn finetune(
    init: &Encoder,
    vocab: &Vocab,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Input(
            "fine-tuning needs non-empty train and dev sets".into(),
        ));
    }
    if let Some(e) = train.iter().chain(dev).find(|e| e.label >= cfg.n_classes) {
        return Err(Error::Input(format!(
            "label {} outside {} classes",
            e.label, cfg.n_classes
        )));
    }
    let mut init_rng = rng::derive(cfg.seed, &[stream::INIT]);
    let mut clf = Classifier {
        encoder: init.clone(),
        head: ClassifierHead::init(
            cfg.n_classes,
            init.config.d_model,
            init.config.init_std,
            &mut init_rng,
        ),
    };
    let mut optim = OptimState::zeros_like(
        clf.encoder
            .params
            .values()
            .into_iter()
            .chain([&clf.head.weight, &clf.head.bias]),
    );
    let adam = AdamConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let total = steps_per_epoch * cfg.epochs as u64;
    let warmup = (cfg.warmup_frac * total as f64).round() as u64;
    let max_len = init.config.max_len;
    let encoded: Vec<Vec<u32>> = train.iter().map(|e| e.ids(vocab, max_len)).collect();

    let mut best: Option<(f64, Classifier)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::derive(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<Vec<u32>> = chunk.iter().map(|&i| encoded[i].clone()).collect();
            let labels: Vec<u32> = chunk.iter().map(|&i| train[i].label as u32).collect();
            let batch = Batch::from_ids(&seqs);
            let mut tape = Tape::new();
            let vars = clf.encoder.params.bind(&mut tape);
            let w = tape.param(clf.head.weight.clone());
            let b = tape.param(clf.head.bias.clone());
            let mut drop_rng = rng::derive(cfg.seed, &[stream::DROPOUT, step]);
            let dropout = (clf.encoder.config.dropout_p > 0.0).then_some(&mut drop_rng);
            let logits =
                classifier_logits(&mut tape, &vars, (w, b), &clf.encoder, &batch, dropout)?;
            let loss = mlm_loss(&mut tape, logits, &labels)?.value;
            let grads = tape.backward(loss)?;

            step += 1;
            let lr = lr_at(step, cfg.lr, warmup, total);
            let mut grad_list: Vec<Tensor> = vars
                .values()
                .into_iter()
                .zip(clf.encoder.params.values())
                .map(|(&v, p)| grads.get_or_zeros(v, p))
                .collect();
            grad_list.push(grads.get_or_zeros(w, &clf.head.weight));
            grad_list.push(grads.get_or_zeros(b, &clf.head.bias));
            let mut targets = clf.encoder.params.values_mut();
            targets.push(&mut clf.head.weight);
            targets.push(&mut clf.head.bias);
            let decay: Vec<bool> = targets.iter().map(|t| t.rank() == 2).collect();
            adam_step(&mut targets, &grad_list, &decay, &mut optim, lr, &adam)?;
        }
        let acc = accuracy_on(&clf, vocab, dev)?;
        history.push(acc);
        if best.as_ref().is_none_or(|(a, _)| acc > *a) {
            best = Some((acc, clf.clone()));
        }
    }
    let (dev_accuracy, classifier) = best.expect("at least one epoch");
    Ok(FinetuneResult {
        classifier,
        dev_accuracy,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn setup() -> (Encoder, Vocab) {
        let vocab = Vocab::from_tokens(["good", "bad", "movie", "the", "was"]).unwrap();
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            max_len: 8,
            dropout_p: 0.0,
            init_std: 0.3,
        };
        (Encoder::new(cfg, 1).unwrap(), vocab)
    }

    #[test]
    fn learns_a_keyword_rule() {
        let (enc, vocab) = setup();
        let data: Vec<LabeledExample> = (0..16)
            .map(|i| {
                if i % 2 == 0 {
                    LabeledExample::new(1, "the movie was good")
                } else {
                    LabeledExample::new(0, "the movie was bad")
                }
            })
            .collect();
        let cfg = FinetuneConfig {
            lr: 1e-2,
            epochs: 10,
            batch_size: 4,
            ..Default::default()
        };
        let r = finetune(&enc, &vocab, &data, &data, &cfg).unwrap();
        assert_eq!(r.dev_accuracy, 1.0);
        assert_eq!(r.history.len(), 10);
        assert_eq!(predict(&r.classifier, &vocab, &data[..2]).unwrap(), [1, 0]);
    }

    #[test]
    fn pair_encoding() {
        let (_, vocab) = setup();
        let mut e = LabeledExample::new(0, "good movie");
        e.pair = Some("bad".into());
        let ids = e.ids(&vocab, 16);
        assert_eq!(
            vocab.decode(&ids),
            ["[CLS]", "good", "movie", "[SEP]", "bad"]
        );
        assert_eq!(e.ids(&vocab, 2).len(), 2);
    }

    #[test]
    fn rejects_bad_labels() {
        let (enc, vocab) = setup();
        let data = [LabeledExample::new(5, "good")];
        assert!(finetune(&enc, &vocab, &data, &data, &FinetuneConfig::default()).is_err());
    }
}
