//! Masked language modeling, replaced-token detection and the
//! single-negative contrastive loss, plus their learned weighting.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::textproc::{Vocab, MASK, NUM_SPECIAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub mask_rate: f64,
    /// Fraction of selected positions replaced by `[MASK]`.
    pub mask_frac: f64,
    /// Fraction replaced by a uniformly random non-special id.
    pub random_frac: f64,
    /// Fraction left unchanged.
    pub keep_frac: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            mask_rate: 0.15,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.mask_frac, self.random_frac, self.keep_frac];
        if parts.iter().any(|&p| p < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mask/random/keep split must be nonnegative and sum to 1, got {parts:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::Config(format!(
                "mask_rate {} must lie in [0, 1]",
                self.mask_rate
            )));
        }
        Ok(())
    }
}

/// Corrupted ids and the `(position, original id)` labels of every selected
/// position, in position order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedInput {
    pub ids: Vec<u32>,
    pub labels: Vec<(usize, u32)>,
}

/// Selects each non-special position with probability `mask_rate`, then
/// masks, randomizes or keeps it per the configured split.
pub fn apply_mlm_masking(
    ids: &[u32],
    vocab_size: usize,
    cfg: &MaskingConfig,
    rng: &mut Rng,
) -> MaskedInput {
    let mut out = ids.to_vec();
    let mut labels = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        if Vocab::is_special(id) {
            continue;
        }
        if rng.gen::<f64>() >= cfg.mask_rate {
            continue;
        }
        labels.push((i, id));
        let action: f64 = rng.gen();
        if action < cfg.mask_frac {
            out[i] = MASK;
        } else if action < cfg.mask_frac + cfg.random_frac && vocab_size > NUM_SPECIAL {
            out[i] = rng.gen_range(NUM_SPECIAL as u32..vocab_size as u32);
        }
    }
    MaskedInput { ids: out, labels }
}

/// A loss term that may be absent from a batch (for example no position was
/// selected for masking).
#[derive(Debug, Clone, Copy)]
pub struct LossTerm {
    pub value: Var,
    pub present: bool,
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits` (`[labels.len(), vocab]`). With no labels the value is a constant
/// zero and `present` is false.
pub fn mlm_loss(tape: &mut Tape, logits: Var, labels: &[u32]) -> Result<LossTerm> {
    if labels.is_empty() {
        return Ok(LossTerm {
            value: tape.constant(Tensor::scalar(0.0)),
            present: false,
        });
    }
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape("mlm_loss", &[&shape, &[labels.len()]]));
    }
    let v = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= v) {
        return Err(Error::Input(format!("label {bad} outside {v} classes")));
    }
    let logp = tape.log_softmax_rows(logits)?;
    let flat = tape.reshape(logp, &[labels.len() * v, 1])?;
    let picks: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| i * v + l as usize)
        .collect();
    let picked = tape.gather_rows(flat, &picks)?;
    let mean = tape.mean(picked)?;
    Ok(LossTerm {
        value: tape.neg(mean)?,
        present: true,
    })
}

/// One perturbed sequence (flattened batch) for replaced-token detection.
#[derive(Debug, Clone, Copy)]
pub struct RtdInput<'a> {
    /// Logits `[positions]`.
    pub logits: Var,
    /// 1 where the token was replaced.
    pub delta: &'a [u8],
    /// Positions that count (not `[CLS]`, not padding).
    pub valid: &'a [bool],
}

/// Sigmoid binary cross-entropy summed over the valid positions of every
/// input and divided by the total valid count.
pub fn rtd_loss(tape: &mut Tape, inputs: &[RtdInput<'_>]) -> Result<LossTerm> {
    let mut terms = Vec::with_capacity(inputs.len());
    let mut count = 0usize;
    for input in inputs {
        let n = tape.value(input.logits).len();
        if tape.value(input.logits).rank() != 1 || input.delta.len() != n || input.valid.len() != n
        {
            return Err(Error::Shape {
                op: "rtd_loss",
                shapes: format!(
                    "logits {:?}, delta {}, mask {}",
                    tape.shape(input.logits),
                    input.delta.len(),
                    input.valid.len()
                ),
            });
        }
        // bce(z, d) = softplus(z) - d z
        let sp = tape.softplus(input.logits)?;
        let delta = tape.constant(Tensor::vector(
            input.delta.iter().map(|&d| f64::from(d)).collect(),
        ));
        let dz = tape.mul(delta, input.logits)?;
        let bce = tape.sub(sp, dz)?;
        let valid = tape.constant(Tensor::vector(
            input
                .valid
                .iter()
                .map(|&v| f64::from(u8::from(v)))
                .collect(),
        ));
        let masked = tape.mul(bce, valid)?;
        terms.push(tape.sum(masked)?);
        count += input.valid.iter().filter(|&&v| v).count();
    }
    if count == 0 {
        return Ok(LossTerm {
            value: tape.constant(Tensor::scalar(0.0)),
            present: false,
        });
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(LossTerm {
        value: tape.mul_scalar(total, 1.0 / count as f64)?,
        present: true,
    })
}

/// `exp(a · b)`
pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).exp()
}

/// Two-way softmax loss with the synonym copy as the positive and the
/// antonym copy as the only negative, averaged over the batch:
/// `mean(softplus(s_ant - s_syn))` with `s` the `[CLS]` dot products.
/// Inputs are `[batch, d]`.
pub fn cts_loss(tape: &mut Tape, cls_ori: Var, cls_syn: Var, cls_ant: Var) -> Result<Var> {
    let s = tape.shape(cls_ori).to_vec();
    if s.len() != 2 || tape.shape(cls_syn) != s || tape.shape(cls_ant) != s {
        return Err(Error::shape(
            "cts_loss",
            &[&s, tape.shape(cls_syn), tape.shape(cls_ant)],
        ));
    }
    let pos = tape.mul(cls_ori, cls_syn)?;
    let s_syn = tape.sum_rows(pos)?;
    let neg = tape.mul(cls_ori, cls_ant)?;
    let s_ant = tape.sum_rows(neg)?;
    let margin = tape.sub(s_ant, s_syn)?;
    let l = tape.softplus(margin)?;
    tape.mean(l)
}

/// Learnable log-variances `s_i`; the effective weight of loss `i` is
/// `exp(-s_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub s: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { s: [0.0; 3] }
    }
}

impl LossWeights {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.s.to_vec())
    }

    pub fn from_tensor(t: &Tensor) -> Result<LossWeights> {
        match t.data() {
            [a, b, c] if t.is_finite() => Ok(LossWeights { s: [*a, *b, *c] }),
            _ => Err(Error::Input(format!(
                "loss weights need 3 finite values, got {:?}",
                t.data()
            ))),
        }
    }

    pub fn lambdas(&self) -> [f64; 3] {
        self.s.map(|s| (-s).exp())
    }
}

/// `Σ exp(-s_i) l_i + s_i` over the present terms. `weights` is the `[3]`
/// tape variable of log-variances, in (mlm, rtd, cts) order.
pub fn total_loss(tape: &mut Tape, terms: [LossTerm; 3], weights: Var) -> Result<Var> {
    if tape.shape(weights) != [3] {
        return Err(Error::shape("total_loss", &[tape.shape(weights), &[3]]));
    }
    let mut acc: Option<Var> = None;
    for (i, term) in terms.iter().enumerate() {
        if !term.present {
            continue;
        }
        let s = tape.slice(weights, i, i + 1)?;
        let ns = tape.neg(s)?;
        let lambda = tape.exp(ns)?;
        let weighted = tape.mul(lambda, term.value)?;
        let t = tape.add(weighted, s)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, t)?,
            None => t,
        });
    }
    let acc = match acc {
        Some(a) => a,
        None => tape.constant(Tensor::vector(vec![0.0])),
    };
    tape.sum(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn scalar(tape: &mut Tape, x: f64) -> LossTerm {
        LossTerm {
            value: tape.constant(Tensor::scalar(x)),
            present: true,
        }
    }

    #[test]
    fn masking_rate_zero() {
        let cfg = MaskingConfig {
            mask_rate: 0.0,
            ..Default::default()
        };
        let m = apply_mlm_masking(&[2, 7, 8, 9], 20, &cfg, &mut rng::derive(0, &[]));
        assert_eq!(m.ids, [2, 7, 8, 9]);
        assert!(m.labels.is_empty());
    }

    #[test]
    fn masking_never_touches_specials() {
        let cfg = MaskingConfig {
            mask_rate: 1.0,
            ..Default::default()
        };
        let ids = [2, 7, 8, 9, 0, 0];
        let m = apply_mlm_masking(&ids, 20, &cfg, &mut rng::derive(1, &[]));
        assert_eq!(m.labels.iter().map(|l| l.0).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(&m.ids[4..], [0, 0]);
        assert_eq!(m.ids[0], 2);
    }

    #[test]
    fn masking_rate_concentrates() {
        let cfg = MaskingConfig::default();
        let ids: Vec<u32> = (0..10_000).map(|i| 5 + (i % 50) as u32).collect();
        let m = apply_mlm_masking(&ids, 60, &cfg, &mut rng::derive(2, &[]));
        let frac = m.labels.len() as f64 / ids.len() as f64;
        assert!((frac - 0.15).abs() < 0.01, "{frac}");
        let masked = m.labels.iter().filter(|(p, _)| m.ids[*p] == MASK).count() as f64;
        assert!((masked / m.labels.len() as f64 - 0.8).abs() < 0.04);
    }

    #[test]
    fn mlm_uniform_logits() {
        for v in [4usize, 17] {
            let mut tape = Tape::new();
            let logits = tape.param(Tensor::zeros([3, v]));
            let l = mlm_loss(&mut tape, logits, &[0, 1, 2]).unwrap();
            assert!((tape.value(l.value).item() - (v as f64).ln()).abs() < 1e-12);
        }
        let mut tape = Tape::new();
        let logits = tape.param(Tensor::zeros([0, 4]));
        let l = mlm_loss(&mut tape, logits, &[]).unwrap();
        assert!(!l.present);
        assert_eq!(tape.value(l.value).item(), 0.0);
    }

    #[test]
    fn mlm_confident_and_correct() {
        let mut tape = Tape::new();
        let logits = tape.param(Tensor::matrix(1, 3, vec![0.0, 20.0, 0.0]).unwrap());
        let l = mlm_loss(&mut tape, logits, &[1]).unwrap();
        // -log softmax = ln(1 + 2 e^-20) ~= 4.122e-9
        assert!(tape.value(l.value).item() < 1e-8);
    }

    fn rtd_single(logits: Vec<f64>, delta: Vec<u8>) -> f64 {
        let mut tape = Tape::new();
        let valid = vec![true; logits.len()];
        let z = tape.param(Tensor::vector(logits));
        let l = rtd_loss(
            &mut tape,
            &[RtdInput {
                logits: z,
                delta: &delta,
                valid: &valid,
            }],
        )
        .unwrap();
        tape.value(l.value).item()
    }

    #[test]
    fn rtd_closed_forms() {
        assert!((rtd_single(vec![0.0; 5], vec![1, 0, 1, 1, 0]) - 2f64.ln()).abs() < 1e-12);
        // -ln sigmoid(10) = -ln(1 - sigmoid(-10)) = ln(1 + e^-10) = 4.5398899e-5
        let expected = 4.539_889_921_686_465e-5;
        assert!((rtd_single(vec![10.0, -10.0], vec![1, 0]) - expected).abs() < 1e-15);
        assert!((rtd_single(vec![-10.0; 3], vec![0; 3]) - expected).abs() < 1e-15);
    }

    #[test]
    fn rtd_ignores_invalid_positions() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::vector(vec![0.0, 50.0, 0.0]));
        let l = rtd_loss(
            &mut tape,
            &[RtdInput {
                logits: z,
                delta: &[1, 0, 0],
                valid: &[true, false, true],
            }],
        )
        .unwrap();
        assert!((tape.value(l.value).item() - 2f64.ln()).abs() < 1e-12);
        let g = tape.backward(l.value).unwrap();
        assert_eq!(g.get(z).unwrap().data()[1], 0.0);
    }

    #[test]
    fn rtd_length_mismatch() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::vector(vec![0.0, 0.0]));
        let r = rtd_loss(
            &mut tape,
            &[RtdInput {
                logits: z,
                delta: &[1],
                valid: &[true, true],
            }],
        );
        assert!(r.is_err());
    }

    #[test]
    fn similarity_values() {
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert!((similarity(&[1.0, 0.0], &[1.0, 5.0]) - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(
            similarity(&[0.3, 2.0], &[1.5, -0.7]),
            similarity(&[1.5, -0.7], &[0.3, 2.0])
        );
    }

    fn cts_from_scores(s_syn: f64, s_ant: f64) -> f64 {
        // ori = e1, syn = s_syn e1, ant = s_ant e1
        let mut tape = Tape::new();
        let ori = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let syn = tape.param(Tensor::matrix(1, 2, vec![s_syn, 0.0]).unwrap());
        let ant = tape.param(Tensor::matrix(1, 2, vec![s_ant, 0.0]).unwrap());
        let l = cts_loss(&mut tape, ori, syn, ant).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn cts_closed_forms() {
        assert!((cts_from_scores(1.3, 1.3) - 2f64.ln()).abs() < 1e-12);
        // softplus(-2) = ln(1 + e^-2)
        assert!((cts_from_scores(2.0, 0.0) - 0.126_928_011_042_972_6).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for k in -20..=20 {
            let l = cts_from_scores(k as f64 * 0.5, 0.0);
            assert!(l < prev);
            prev = l;
        }
        assert!((cts_from_scores(3.0, 1.0) - cts_from_scores(5.5, 3.5)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighting() {
        let mut tape = Tape::new();
        let terms = [
            scalar(&mut tape, 0.5),
            scalar(&mut tape, 1.5),
            scalar(&mut tape, 2.0),
        ];
        let s = tape.param(Tensor::zeros([3]));
        let total = total_loss(&mut tape, terms, s).unwrap();
        assert!((tape.value(total).item() - 4.0).abs() < 1e-12);
        let g = tape.backward(total).unwrap();
        // d/ds_i = 1 - exp(-s_i) l_i
        let want = [0.5, -0.5, -1.0];
        for (a, b) in g.get(s).unwrap().data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut tape = Tape::new();
        let terms = [scalar(&mut tape, 2.0); 3];
        let s = tape.param(Tensor::full([3], 2f64.ln()));
        let total = total_loss(&mut tape, terms, s).unwrap();
        let g = tape.backward(total).unwrap();
        assert!(g.get(s).unwrap().data().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn total_loss_bounded_below() {
        let mut min = f64::INFINITY;
        for i in -10..=10 {
            for j in -10..=10 {
                for k in -10..=10 {
                    let mut tape = Tape::new();
                    let terms = [scalar(&mut tape, 1.0); 3];
                    let s = tape.constant(Tensor::vector(vec![i as f64, j as f64, k as f64]));
                    let total = total_loss(&mut tape, terms, s).unwrap();
                    min = min.min(tape.value(total).item());
                }
            }
        }
        // minimum of e^-s + s is 1 at s = 0
        assert!((min - 3.0).abs() < 1e-12);
    }
}
