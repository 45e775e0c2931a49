//! Adam with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moments per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl OptimState {
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> OptimState {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        OptimState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One update of every parameter. `decay[i]` selects which parameters get
/// weight decay.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    decay: &[bool],
    state: &mut OptimState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || decay.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Input(format!(
            "adam_step: {n} params, {} grads, {} decay flags, {} moments",
            grads.len(),
            decay.len(),
            state.m.len()
        )));
    }
    for i in 0..n {
        if params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adam_step",
                &[params[i].shape(), grads[i].shape(), state.m[i].shape()],
            ));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let wd = if decay[i] { lr * cfg.weight_decay } else { 0.0 };
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (m, g) in m.iter_mut().zip(g) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        }
        let v = state.v[i].data_mut();
        for (v, g) in v.iter_mut().zip(g) {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((p, m), v) in params[i].data_mut().iter_mut().zip(m).zip(v) {
            let update = (m / c1) / ((v / c2).sqrt() + cfg.eps);
            *p -= lr * update + wd * *p;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamConfig {
        AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn first_step_unit_gradient() {
        let mut p = Tensor::scalar(0.0);
        let mut st = OptimState::zeros_like([&p]);
        adam_step(
            &mut [&mut p],
            &[Tensor::scalar(1.0)],
            &[false],
            &mut st,
            1e-3,
            &no_decay(),
        )
        .unwrap();
        // m̂ = 1, v̂ = 1: update = lr / (1 + eps)
        assert!((p.item() + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut st = OptimState::zeros_like([&p]);
        adam_step(
            &mut [&mut p],
            &[Tensor::zeros([2])],
            &[true],
            &mut st,
            1e-2,
            &no_decay(),
        )
        .unwrap();
        assert_eq!(p.data(), [1.0, -2.0]);
    }

    #[test]
    fn decoupled_decay_only_where_flagged() {
        let mut a = Tensor::vector(vec![1.0]);
        let mut b = Tensor::vector(vec![1.0]);
        let mut st = OptimState::zeros_like([&a, &b]);
        let cfg = AdamConfig::default();
        let grads = [Tensor::zeros([1]), Tensor::zeros([1])];
        adam_step(
            &mut [&mut a, &mut b],
            &grads,
            &[true, false],
            &mut st,
            0.5,
            &cfg,
        )
        .unwrap();
        assert!((a.item() - (1.0 - 0.5 * 0.01)).abs() < 1e-15);
        assert_eq!(b.item(), 1.0);
    }

    #[test]
    fn first_moment_half_life() {
        let mut p = Tensor::scalar(0.0);
        let mut st = OptimState::zeros_like([&p]);
        let cfg = no_decay();
        adam_step(
            &mut [&mut p],
            &[Tensor::scalar(1.0)],
            &[false],
            &mut st,
            0.0,
            &cfg,
        )
        .unwrap();
        let m0 = st.m[0].item();
        let half_life = 2f64.ln() / (1.0 / cfg.beta1).ln();
        assert!((half_life - 6.578_813_478_960_584).abs() < 1e-12);
        let mut ratios = Vec::new();
        for _ in 0..7 {
            adam_step(
                &mut [&mut p],
                &[Tensor::scalar(0.0)],
                &[false],
                &mut st,
                0.0,
                &cfg,
            )
            .unwrap();
            ratios.push(st.m[0].item() / m0);
        }
        assert!((ratios[6] - 0.9f64.powi(7)).abs() < 1e-15);
        assert!(ratios[5] > 0.5 && ratios[6] < 0.5);
    }

    #[test]
    fn mismatched_lengths() {
        let mut p = Tensor::scalar(0.0);
        let mut st = OptimState::zeros_like([&p]);
        assert!(adam_step(&mut [&mut p], &[], &[false], &mut st, 1.0, &no_decay()).is_err());
    }
}
