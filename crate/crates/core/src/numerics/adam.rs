use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
        }
    }
}

/// First/second moment estimates for a fixed, ordered parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            config,
            t: 0,
            second: first.clone(),
            first,
        }
    }
}

/// One bias-corrected Adam update in place; advances `state.t` by one.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len(), state.first.len()],
            rhs: vec![grads.len()],
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        let (pd, gd) = (p.data_mut(), g.data());
        for (((pi, &gi), mi), vi) in pd
            .iter_mut()
            .zip(gd)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(p: &mut Tensor, g: &Tensor, s: &mut AdamState) {
        adam_step(&mut [p], &[g], s).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_vec(vec![0.5, -1.5, 2.0]).unwrap();
        let orig = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut s = AdamState::new(AdamConfig::with_lr(1e-2), [&p]);
        for _ in 0..5 {
            step_once(&mut p, &g, &mut s);
        }
        assert_eq!(p, orig);
        assert_eq!(s.t, 5);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::from_vec(vec![1.0, 1.0]).unwrap();
        let g = Tensor::from_vec(vec![0.3, -7.0]).unwrap();
        let mut s = AdamState::new(AdamConfig::with_lr(1e-3), [&p]);
        step_once(&mut p, &g, &mut s);
        assert!((p.data()[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.data()[1] - (1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn quadratic_decreases_over_two_steps() {
        // f(θ) = θ², gradient 2θ.
        let mut p = Tensor::scalar(1.0);
        let mut s = AdamState::new(AdamConfig::with_lr(0.1), [&p]);
        let mut prev = p.item();
        for _ in 0..2 {
            let g = Tensor::scalar(2.0 * p.item());
            step_once(&mut p, &g, &mut s);
            assert!(p.item() < prev);
            prev = p.item();
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut s = AdamState::new(AdamConfig::with_lr(0.1), [&p]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut s).is_err());
        assert_eq!(s.t, 0);
    }
}
