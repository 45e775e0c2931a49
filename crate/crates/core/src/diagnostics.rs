//! Finite-difference verification of every tape primitive, each loss, and
//! the combined pre-training loss through a tiny encoder.

use crate::autodiff::{grad_check, GradCheckReport, Tape, Tensor, Var, GRAD_CHECK_EPS};
use crate::encoder::{EncoderConfig, EncoderParams, EncoderVars};
use crate::error::Result;
use crate::objectives::{
    cts_loss, mlm_loss, rtd_loss, total_loss, LossTerm, MaskingConfig, RtdInput,
};
use crate::rng::{self, Rng};
use crate::textproc::{CLS, NUM_SPECIAL};
use crate::trainer::{
    pretrain_loss, train_step, EncodedTriplet, PretrainState, StepLosses, TrainConfig,
};

/// Passing threshold on the maximum relative error.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRAD_CHECK_TOLERANCE
    }
}

type Builder = fn(&mut Tape, &[Var], &mut Rng) -> Result<Var>;

/// `Σ out ⊙ R` for a fixed random `R`, so that every output coordinate
/// contributes a distinct weight.
fn project(t: &mut Tape, v: Var, rng: &mut Rng) -> Result<Var> {
    let r = Tensor::randn(t.shape(v).to_vec(), 1.0, rng);
    let r = t.constant(r);
    let p = t.mul(v, r)?;
    t.sum(p)
}

fn positive(x: Tensor) -> Tensor {
    x.map(|v| v.abs() + 0.5)
}

/// Primitive name, input shapes, input transform and graph.
struct Case {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    positive: bool,
    build: Builder,
}

const CASES: &[Case] = &[
    Case {
        name: "add",
        shapes: &[&[3, 4], &[3, 4]],
        positive: false,
        build: |t, v, r| {
            let o = t.add(v[0], v[1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "add_broadcast",
        shapes: &[&[2, 3, 4], &[4]],
        positive: false,
        build: |t, v, r| {
            let o = t.add(v[0], v[1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "sub",
        shapes: &[&[3, 4], &[4]],
        positive: false,
        build: |t, v, r| {
            let o = t.sub(v[0], v[1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "mul",
        shapes: &[&[3, 4], &[3, 4]],
        positive: false,
        build: |t, v, r| {
            let o = t.mul(v[0], v[1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "mul_broadcast",
        shapes: &[&[2, 3, 4], &[3, 4]],
        positive: false,
        build: |t, v, r| {
            let o = t.mul(v[0], v[1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "add_scalar",
        shapes: &[&[5]],
        positive: false,
        build: |t, v, r| {
            let o = t.add_scalar(v[0], 0.7)?;
            project(t, o, r)
        },
    },
    Case {
        name: "mul_scalar",
        shapes: &[&[5]],
        positive: false,
        build: |t, v, r| {
            let o = t.mul_scalar(v[0], -1.3)?;
            project(t, o, r)
        },
    },
    Case {
        name: "neg",
        shapes: &[&[5]],
        positive: false,
        build: |t, v, r| {
            let o = t.neg(v[0])?;
            project(t, o, r)
        },
    },
    Case {
        name: "matmul",
        shapes: &[&[3, 4], &[4, 5]],
        positive: false,
        build: |t, v, r| {
            let o = t.matmul(v[0], v[1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "matmul_batched",
        shapes: &[&[2, 3, 4], &[2, 4, 2]],
        positive: false,
        build: |t, v, r| {
            let o = t.matmul(v[0], v[1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "matmul_shared_rhs",
        shapes: &[&[2, 3, 4], &[4, 2]],
        positive: false,
        build: |t, v, r| {
            let o = t.matmul(v[0], v[1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "matmul_t",
        shapes: &[&[2, 3, 4], &[2, 5, 4]],
        positive: false,
        build: |t, v, r| {
            let o = t.matmul_t(v[0], v[1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "transpose",
        shapes: &[&[3, 4]],
        positive: false,
        build: |t, v, r| {
            let o = t.transpose(v[0])?;
            project(t, o, r)
        },
    },
    Case {
        name: "reshape",
        shapes: &[&[3, 4]],
        positive: false,
        build: |t, v, r| {
            let o = t.reshape(v[0], &[2, 6])?;
            project(t, o, r)
        },
    },
    Case {
        name: "permute",
        shapes: &[&[2, 3, 4]],
        positive: false,
        build: |t, v, r| {
            let o = t.permute(v[0], &[2, 0, 1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "gather_rows",
        shapes: &[&[4, 3]],
        positive: false,
        build: |t, v, r| {
            let o = t.gather_rows(v[0], &[2, 0, 2, 3])?;
            project(t, o, r)
        },
    },
    Case {
        name: "embedding_gather",
        shapes: &[&[5, 3]],
        positive: false,
        build: |t, v, r| {
            let o = t.embedding_gather(v[0], &[4, 1, 1])?;
            project(t, o, r)
        },
    },
    Case {
        name: "softmax_rows",
        shapes: &[&[3, 5]],
        positive: false,
        build: |t, v, r| {
            let o = t.softmax_rows(v[0])?;
            project(t, o, r)
        },
    },
    Case {
        name: "log_softmax_rows",
        shapes: &[&[3, 5]],
        positive: false,
        build: |t, v, r| {
            let o = t.log_softmax_rows(v[0])?;
            project(t, o, r)
        },
    },
    Case {
        name: "layer_norm",
        shapes: &[&[3, 6], &[6], &[6]],
        positive: false,
        build: |t, v, r| {
            let o = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(t, o, r)
        },
    },
    Case {
        name: "gelu",
        shapes: &[&[8]],
        positive: false,
        build: |t, v, r| {
            let o = t.gelu(v[0])?;
            project(t, o, r)
        },
    },
    Case {
        name: "sigmoid",
        shapes: &[&[8]],
        positive: false,
        build: |t, v, r| {
            let o = t.sigmoid(v[0])?;
            project(t, o, r)
        },
    },
    Case {
        name: "softplus",
        shapes: &[&[8]],
        positive: false,
        build: |t, v, r| {
            let o = t.softplus(v[0])?;
            project(t, o, r)
        },
    },
    Case {
        name: "log",
        shapes: &[&[6]],
        positive: true,
        build: |t, v, r| {
            let o = t.log(v[0])?;
            project(t, o, r)
        },
    },
    Case {
        name: "exp",
        shapes: &[&[6]],
        positive: false,
        build: |t, v, r| {
            let o = t.exp(v[0])?;
            project(t, o, r)
        },
    },
    Case {
        name: "dot",
        shapes: &[&[6], &[6]],
        positive: false,
        build: |t, v, _| t.dot(v[0], v[1]),
    },
    Case {
        name: "sum",
        shapes: &[&[2, 3]],
        positive: false,
        build: |t, v, _| {
            let s = t.mul(v[0], v[0])?;
            t.sum(s)
        },
    },
    Case {
        name: "mean",
        shapes: &[&[2, 3]],
        positive: false,
        build: |t, v, _| {
            let s = t.mul(v[0], v[0])?;
            t.mean(s)
        },
    },
    Case {
        name: "sum_rows",
        shapes: &[&[3, 4]],
        positive: false,
        build: |t, v, r| {
            let o = t.sum_rows(v[0])?;
            project(t, o, r)
        },
    },
    Case {
        name: "slice",
        shapes: &[&[5, 2]],
        positive: false,
        build: |t, v, r| {
            let o = t.slice(v[0], 1, 4)?;
            project(t, o, r)
        },
    },
    Case {
        name: "concat",
        shapes: &[&[2, 3], &[1, 3]],
        positive: false,
        build: |t, v, r| {
            let o = t.concat(&[v[0], v[1], v[0]])?;
            project(t, o, r)
        },
    },
    Case {
        name: "dropout",
        shapes: &[&[10]],
        positive: false,
        build: |t, v, r| {
            // a fresh stream per evaluation keeps the mask fixed across probes
            let mut mask_rng = rng::derive(99, &[]);
            let o = t.dropout(v[0], 0.3, &mut mask_rng, true)?;
            project(t, o, r)
        },
    },
    Case {
        name: "mlm_loss",
        shapes: &[&[3, 6]],
        positive: false,
        build: |t, v, _| Ok(mlm_loss(t, v[0], &[1, 5, 0])?.value),
    },
    Case {
        name: "rtd_loss",
        shapes: &[&[5], &[3]],
        positive: false,
        build: |t, v, _| {
            let a = RtdInput {
                logits: v[0],
                delta: &[1, 0, 0, 1, 1],
                valid: &[true, true, false, true, true],
            };
            let b = RtdInput {
                logits: v[1],
                delta: &[0, 1, 0],
                valid: &[true; 3],
            };
            Ok(rtd_loss(t, &[a, b])?.value)
        },
    },
    Case {
        name: "cts_loss",
        shapes: &[&[3, 4], &[3, 4], &[3, 4]],
        positive: false,
        build: |t, v, _| cts_loss(t, v[0], v[1], v[2]),
    },
    Case {
        name: "total_loss",
        shapes: &[&[], &[], &[], &[3]],
        positive: true,
        build: |t, v, _| {
            let term = |value| LossTerm {
                value,
                present: true,
            };
            total_loss(t, [term(v[0]), term(v[1]), term(v[2])], v[3])
        },
    },
];

/// Names of the primitive and loss checks, in run order.
pub fn primitive_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

fn run_case(case: &Case, seed: u64) -> Result<CheckOutcome> {
    let mut init = rng::derive(seed, &[0x4743]);
    let inputs: Vec<Tensor> = case
        .shapes
        .iter()
        .map(|s| {
            let x = Tensor::randn(s.to_vec(), 1.0, &mut init);
            if case.positive {
                positive(x)
            } else {
                x
            }
        })
        .collect();
    let build = case.build;
    let report = grad_check(
        |t, v| {
            let mut r = rng::derive(seed, &[0x5052]);
            build(t, v, &mut r)
        },
        &inputs,
        GRAD_CHECK_EPS,
    )?;
    Ok(CheckOutcome {
        name: case.name.to_string(),
        seed,
        report,
    })
}

/// Every primitive and loss check over each seed.
pub fn primitive_checks(seeds: impl IntoIterator<Item = u64> + Clone) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for case in CASES {
        for seed in seeds.clone() {
            out.push(run_case(case, seed)?);
        }
    }
    Ok(out)
}

/// Tiny encoder used by the end-to-end check.
pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 50,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        d_ff: 16,
        max_len: 12,
        dropout_p: 0.0,
        init_std: 0.3,
    }
}

fn tiny_batch(seed: u64, vocab: usize, len: usize) -> Vec<EncodedTriplet> {
    tiny_triplets(seed, 2, vocab, len)
}

/// `n` synthetic triplets; every other one is three tokens shorter so that
/// batches carry padding.
fn tiny_triplets(seed: u64, n: usize, vocab: usize, len: usize) -> Vec<EncodedTriplet> {
    use rand::Rng as _;
    let mut r = rng::derive(seed, &[0x5452]);
    (0..n)
        .map(|k| {
            let n = if k % 2 == 0 { len } else { len - 3 };
            let mut word = || r.gen_range(NUM_SPECIAL as u32..vocab as u32);
            let ori: Vec<u32> = std::iter::once(CLS).chain((1..n).map(|_| word())).collect();
            let mut syn = ori.clone();
            let mut ant = ori.clone();
            let mut delta_syn = vec![0u8; n];
            let mut delta_ant = vec![0u8; n];
            for i in (1..n).step_by(3) {
                syn[i] = word();
                delta_syn[i] = u8::from(syn[i] != ori[i]);
            }
            for i in (2..n).step_by(4) {
                ant[i] = word();
                delta_ant[i] = u8::from(ant[i] != ori[i]);
            }
            EncodedTriplet {
                ori,
                syn,
                ant,
                delta_syn,
                delta_ant,
            }
        })
        .collect()
}

/// Gradient of the full weighted pre-training loss (MLM + RTD + contrastive
/// through a two-layer encoder at length 12) with respect to every encoder
/// parameter and the loss weights.
///
/// Key biases are held constant: adding the same vector to every key
/// shifts all scores of a query equally, so their exact gradient is zero and
/// a relative error would only measure finite-difference noise.
/// [`key_bias_gradient`] covers them.
pub fn full_loss_check(seed: u64) -> Result<CheckOutcome> {
    full_loss_check_eps(seed, GRAD_CHECK_EPS)
}

pub fn full_loss_check_eps(seed: u64, eps: f64) -> Result<CheckOutcome> {
    let (cfg, params, batch, masking) = full_loss_setup(seed)?;
    let named = params.named();
    let free: Vec<bool> = named.iter().map(|(n, _)| !n.ends_with(".bk")).collect();
    let mut inputs: Vec<Tensor> = named
        .iter()
        .zip(&free)
        .filter(|(_, &f)| f)
        .map(|((_, t), _)| (*t).clone())
        .collect();
    inputs.push(Tensor::vector(vec![0.3, -0.2, 0.1]));
    let report = grad_check(
        |t, v| {
            let mut it = v.iter().copied();
            let all: Vec<Var> = named
                .iter()
                .zip(&free)
                .map(|((_, p), &f)| {
                    if f {
                        it.next().expect("free input")
                    } else {
                        t.constant((*p).clone())
                    }
                })
                .collect();
            let weights = it.next().expect("loss weights");
            let vars = EncoderVars::from_values(cfg.n_layers, all).expect("layout");
            let mut mask_rng = rng::derive(seed, &[rng::stream::MASK]);
            let g = pretrain_loss(
                t,
                &vars,
                weights,
                &cfg,
                &batch,
                &masking,
                &mut mask_rng,
                None,
            )?;
            Ok(g.total)
        },
        &inputs,
        eps,
    )?;
    Ok(CheckOutcome {
        name: "pretrain_total_loss".into(),
        seed,
        report,
    })
}

type Setup = (
    EncoderConfig,
    EncoderParams,
    Vec<EncodedTriplet>,
    MaskingConfig,
);

fn full_loss_setup(seed: u64) -> Result<Setup> {
    let cfg = tiny_config();
    let params = EncoderParams::init(&cfg, seed)?;
    let batch = tiny_batch(seed, cfg.vocab_size, cfg.max_len);
    let masking = MaskingConfig {
        mask_rate: 0.3,
        ..Default::default()
    };
    Ok((cfg, params, batch, masking))
}

/// Largest absolute reverse-mode gradient entry of any key bias under the
/// combined loss; zero up to rounding.
pub fn key_bias_gradient(seed: u64) -> Result<f64> {
    let (cfg, params, batch, masking) = full_loss_setup(seed)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let weights = tape.param(Tensor::vector(vec![0.3, -0.2, 0.1]));
    let mut mask_rng = rng::derive(seed, &[rng::stream::MASK]);
    let g = pretrain_loss(
        &mut tape,
        &vars,
        weights,
        &cfg,
        &batch,
        &masking,
        &mut mask_rng,
        None,
    )?;
    let grads = tape.backward(g.total)?;
    Ok(vars
        .layers
        .iter()
        .zip(&params.layers)
        .flat_map(|(v, p)| grads.get_or_zeros(v.bk, &p.bk).into_data())
        .fold(0.0, |m, x| m.max(x.abs())))
}

/// Repeated training on one fixed batch of 8 synthetic triplets with the
/// tiny encoder; returns the losses of every step.
pub fn overfit_run(seed: u64, steps: u64) -> Result<Vec<StepLosses>> {
    let cfg = tiny_config();
    let batch = tiny_triplets(seed, 8, cfg.vocab_size, cfg.max_len);
    let train = TrainConfig {
        peak_lr: 1e-2,
        warmup_steps: steps / 10,
        total_steps: steps,
        batch_size: batch.len(),
        seed,
        ..TrainConfig::default()
    };
    let masking = MaskingConfig::default();
    let mut state = PretrainState::new(cfg, seed)?;
    (0..steps)
        .map(|_| train_step(&mut state, &batch, &train, &masking))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names = primitive_names();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn one_seed_passes() {
        for o in primitive_checks([1]).unwrap() {
            assert!(o.passed(), "{o:?}");
        }
    }
}
