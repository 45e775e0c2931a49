//! Semantic-sensitivity and robustness metrics.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{dot, Tensor};
use crate::encoder::{with_cls, Encoder, LayerStates};
use crate::error::{Error, Result};
use crate::perturb::TripletExample;
use crate::textproc::Vocab;

/// How two sentences are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimilarityMode {
    /// Cosine of the `[CLS]` states.
    Cls,
    /// Cosine of the mean content-token states.
    Mean,
    /// Greedy token-matching F1.
    GreedyMatch,
}

impl SimilarityMode {
    pub const ALL: [SimilarityMode; 3] = [
        SimilarityMode::Cls,
        SimilarityMode::Mean,
        SimilarityMode::GreedyMatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityMode::Cls => "CLS",
            SimilarityMode::Mean => "MEAN",
            SimilarityMode::GreedyMatch => "GREEDY_MATCH",
        }
    }
}

impl fmt::Display for SimilarityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimilarityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SimilarityMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Input(format!(
                    "unknown similarity mode `{s}` (CLS, MEAN, GREEDY_MATCH)"
                ))
            })
    }
}

/// Positions that carry content: real tokens other than `[CLS]` at 0.
fn content_rows(mask: &[bool]) -> impl Iterator<Item = usize> + '_ {
    mask.iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
}

/// Sentence vector from `[len, d]` states: row 0 for `Cls`, the average of
/// content rows for `Mean`.
pub fn sentence_repr(h: &Tensor, pad_mask: &[bool], mode: SimilarityMode) -> Result<Vec<f64>> {
    if h.rank() != 2 || h.shape()[0] != pad_mask.len() || h.shape()[0] == 0 {
        return Err(Error::shape(
            "sentence_repr",
            &[h.shape(), &[pad_mask.len()]],
        ));
    }
    match mode {
        SimilarityMode::Cls => Ok(h.row(0).to_vec()),
        SimilarityMode::Mean => {
            let mut acc = vec![0.0; h.last_dim()];
            let mut n = 0usize;
            for i in content_rows(pad_mask) {
                for (a, x) in acc.iter_mut().zip(h.row(i)) {
                    *a += x;
                }
                n += 1;
            }
            if n == 0 {
                return Err(Error::Input(
                    "mean pooling over a sentence without content tokens".into(),
                ));
            }
            Ok(acc.into_iter().map(|a| a / n as f64).collect())
        }
        SimilarityMode::GreedyMatch => Err(Error::Input(
            "greedy matching has no single sentence vector".into(),
        )),
    }
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_sim", &[&[a.len()], &[b.len()]]));
    }
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Input("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Greedy-matching F1 between candidate and reference token states. Each
/// reference token is matched to its most similar candidate token (recall)
/// and vice versa (precision); negative averages are clipped to zero.
pub fn greedy_match_score(
    cand: &Tensor,
    cand_mask: &[bool],
    reference: &Tensor,
    ref_mask: &[bool],
) -> Result<f64> {
    let c: Vec<&[f64]> = content_rows(cand_mask).map(|i| cand.row(i)).collect();
    let r: Vec<&[f64]> = content_rows(ref_mask).map(|i| reference.row(i)).collect();
    if c.is_empty() || r.is_empty() {
        return Err(Error::Input(
            "greedy matching needs content tokens on both sides".into(),
        ));
    }
    let mut sims = vec![vec![0.0; r.len()]; c.len()];
    for (i, x) in c.iter().enumerate() {
        for (j, y) in r.iter().enumerate() {
            sims[i][j] = cosine_sim(x, y)?;
        }
    }
    let precision = sims
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / c.len() as f64;
    let recall = (0..r.len())
        .map(|j| {
            sims.iter()
                .map(|row| row[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / r.len() as f64;
    let (p, r) = (precision.max(0.0), recall.max(0.0));
    if p + r == 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * p * r / (p + r)).min(1.0))
}

/// Similarity of two encoded sentences at one layer.
pub fn pair_score(
    a: &LayerStates,
    b: &LayerStates,
    layer: usize,
    mode: SimilarityMode,
) -> Result<f64> {
    let (ha, hb) = (&a.layers[layer], &b.layers[layer]);
    match mode {
        SimilarityMode::GreedyMatch => greedy_match_score(ha, &a.mask, hb, &b.mask),
        _ => cosine_sim(
            &sentence_repr(ha, &a.mask, mode)?,
            &sentence_repr(hb, &b.mask, mode)?,
        ),
    }
}

/// Fraction of `(score(ori, syn), score(ori, ant))` pairs where the first is
/// strictly larger. Ties count as misses.
pub fn hits_from_scores(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|(s, a)| s > a).count() as f64 / pairs.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitsReport {
    pub mode: SimilarityMode,
    /// Layer 0 is the embedding output, the last entry the final states.
    pub per_layer: Vec<f64>,
}

impl HitsReport {
    /// Best layer and its score.
    pub fn max(&self) -> (usize, f64) {
        self.per_layer
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, h)| {
                if h > best.1 {
                    (i, h)
                } else {
                    best
                }
            })
    }

    pub fn last(&self) -> f64 {
        *self.per_layer.last().expect("at least one layer")
    }

    /// `metric mode layer value` lines.
    pub fn report_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .per_layer
            .iter()
            .enumerate()
            .map(|(l, h)| report_line("hits", &self.mode.to_string(), &l.to_string(), *h))
            .collect();
        let (l, h) = self.max();
        lines.push(report_line(
            "hits_max",
            &self.mode.to_string(),
            &l.to_string(),
            h,
        ));
        lines
    }
}

pub fn report_line(metric: &str, mode: &str, layer: &str, value: f64) -> String {
    format!("{metric}\t{mode}\t{layer}\t{value}")
}

const EVAL_BATCH: usize = 32;

/// Hits at every layer over `triplets`.
pub fn hits(
    encoder: &Encoder,
    vocab: &Vocab,
    triplets: &[TripletExample],
    mode: SimilarityMode,
) -> Result<HitsReport> {
    let n_layers = encoder.config.n_layers + 1;
    let mut scores: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(triplets.len()); n_layers];
    let max_len = encoder.config.max_len;
    let encode = |toks: &[String]| {
        let mut ids = with_cls(vocab, toks);
        ids.truncate(max_len);
        ids
    };
    for chunk in triplets.chunks(EVAL_BATCH) {
        let mut seqs = Vec::with_capacity(3 * chunk.len());
        for t in chunk {
            seqs.push(encode(&t.tokens_ori));
            seqs.push(encode(&t.tokens_syn));
            seqs.push(encode(&t.tokens_ant));
        }
        let states = encoder.encode_layers(&seqs)?;
        for tri in states.chunks(3) {
            for (layer, out) in scores.iter_mut().enumerate() {
                let s = pair_score(&tri[0], &tri[1], layer, mode)?;
                let a = pair_score(&tri[0], &tri[2], layer, mode)?;
                out.push((s, a));
            }
        }
    }
    Ok(HitsReport {
        mode,
        per_layer: scores.iter().map(|s| hits_from_scores(s)).collect(),
    })
}

fn check_lengths(op: &str, lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Input(format!("{op}: length mismatch {lens:?}")));
    }
    if lens[0] == 0 {
        return Err(Error::Input(format!("{op}: empty input")));
    }
    Ok(())
}

pub fn accuracy<T: PartialEq>(preds: &[T], gold: &[T]) -> Result<f64> {
    check_lengths("accuracy", &[preds.len(), gold.len()])?;
    Ok(preds.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / preds.len() as f64)
}

/// Fraction of pairs predicted correctly on both the original and the
/// contrastive side.
pub fn contrast_consistency<T: PartialEq>(
    preds_ori: &[T],
    preds_rev: &[T],
    gold_ori: &[T],
    gold_rev: &[T],
) -> Result<f64> {
    check_lengths(
        "contrast_consistency",
        &[
            preds_ori.len(),
            preds_rev.len(),
            gold_ori.len(),
            gold_rev.len(),
        ],
    )?;
    let both = (0..preds_ori.len())
        .filter(|&i| preds_ori[i] == gold_ori[i] && preds_rev[i] == gold_rev[i])
        .count();
    Ok(both as f64 / preds_ori.len() as f64)
}

/// Replaced-token detection quality at threshold 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionReport {
    pub true_positive_rate: f64,
    pub true_negative_rate: f64,
    pub replaced: usize,
    pub kept: usize,
}

impl DetectionReport {
    pub fn balanced_accuracy(&self) -> f64 {
        0.5 * (self.true_positive_rate + self.true_negative_rate)
    }
}

/// Scores every content position of the perturbed copies with the RTD head.
pub fn rtd_detection(
    encoder: &Encoder,
    vocab: &Vocab,
    triplets: &[TripletExample],
) -> Result<DetectionReport> {
    let w = encoder.params.rtd_w.data();
    let max_len = encoder.config.max_len;
    let (mut tp, mut tn, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for chunk in triplets.chunks(EVAL_BATCH) {
        let mut seqs = Vec::with_capacity(2 * chunk.len());
        let mut deltas = Vec::with_capacity(2 * chunk.len());
        for t in chunk {
            for (toks, delta) in [(&t.tokens_syn, &t.delta_syn), (&t.tokens_ant, &t.delta_ant)] {
                let mut ids = with_cls(vocab, toks);
                ids.truncate(max_len);
                seqs.push(ids);
                deltas.push(delta);
            }
        }
        let states = encoder.encode_layers(&seqs)?;
        for (st, delta) in states.iter().zip(deltas) {
            let h = st.last();
            for i in content_rows(&st.mask) {
                // logit > 0 iff sigmoid > 0.5
                let predicted = dot(w, h.row(i)) > 0.0;
                if delta[i - 1] == 1 {
                    pos += 1;
                    tp += usize::from(predicted);
                } else {
                    neg += 1;
                    tn += usize::from(!predicted);
                }
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Input(
            "detection needs both replaced and kept tokens".into(),
        ));
    }
    Ok(DetectionReport {
        true_positive_rate: tp as f64 / pos as f64,
        true_negative_rate: tn as f64 / neg as f64,
        replaced: pos,
        kept: neg,
    })
}
