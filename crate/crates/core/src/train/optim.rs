//! Adam with bias correction and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Element> AdamSlot<T> {
    pub fn zeros(n: usize) -> Self {
        AdamSlot {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// One bias-corrected update of `params` in place; `t` is the 1-based step.
pub fn adam_step<T: Element>(
    params: &mut [T],
    grads: &[T],
    slot: &mut AdamSlot<T>,
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i].to_f64_lossy();
        let m = cfg.beta1 * slot.m[i].to_f64_lossy() + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * slot.v[i].to_f64_lossy() + (1.0 - cfg.beta2) * g * g;
        slot.m[i] = T::of(m);
        slot.v[i] = T::of(v);
        let update = lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        params[i] = T::of(params[i].to_f64_lossy() - update);
    }
}

pub struct Adam<T: Element> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub slots: Vec<AdamSlot<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(params: &[Param<T>], cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            slots: params.iter().map(|p| AdamSlot::zeros(p.numel())).collect(),
        }
    }

    /// Gradients of every parameter, zeros where none was recorded. Fails on
    /// the first non-finite entry, naming the parameter.
    pub fn collect_grads(params: &[Param<T>]) -> Result<Vec<Vec<T>>> {
        params
            .iter()
            .map(|p| {
                let g = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name().to_string()));
                }
                Ok(g)
            })
            .collect()
    }

    /// Applies one update with the given gradients. Nothing is modified if
    /// any gradient is non-finite.
    pub fn apply(&mut self, params: &[Param<T>], grads: &[Vec<T>], lr: f64) -> Result<()> {
        if params.len() != self.slots.len() || grads.len() != params.len() {
            return Err(Error::invalid("adam: parameter list changed"));
        }
        if let Some((p, _)) = params
            .iter()
            .zip(grads)
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFiniteGradient(p.name().to_string()));
        }
        self.step += 1;
        for ((p, g), slot) in params.iter().zip(grads).zip(self.slots.iter_mut()) {
            let mut data = p.get().to_vec();
            adam_step(&mut data, g, slot, self.step, lr, &self.cfg);
            p.set(data)?;
        }
        Ok(())
    }

    /// Backpropagated gradients, one update, gradients cleared.
    pub fn step(&mut self, params: &[Param<T>], lr: f64) -> Result<()> {
        let grads = Self::collect_grads(params)?;
        self.apply(params, &grads, lr)
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<T: Element>(grads: &[Vec<T>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm` (disabled for
/// `max_norm <= 0`). Returns the norm before clipping.
pub fn clip_grad_norm<T: Element>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads
            .iter_mut()
            .flatten()
            .for_each(|g| *g = T::of(g.to_f64_lossy() * s));
    }
    norm
}
