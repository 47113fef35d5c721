//! Relative L2 error, the training loss and the reported metric.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Keeps the square root differentiable when a prediction is exact.
const SQRT_GUARD: f64 = 1e-24;

fn sample_len(pred: &[usize], target: &[usize]) -> Result<usize> {
    if pred != target || pred.is_empty() || pred[0] == 0 {
        return Err(Error::shape("relative_l2", pred, target));
    }
    Ok(pred[1..].iter().product())
}

/// Batch mean of `‖p_b − t_b‖ / ‖t_b‖` as a differentiable scalar. Samples
/// whose target norm is zero are skipped with a warning; if every sample is
/// skipped the result is an error.
pub fn relative_l2<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let n = sample_len(pred.shape(), target.shape())?;
    let b = pred.shape()[0];
    let norms: Vec<f64> = target
        .data()
        .chunks(n.max(1))
        .map(|c| {
            c.iter()
                .map(|v| v.to_f64_lossy().powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let valid = norms.iter().filter(|&&v| v > 0.0).count();
    if valid < b {
        log::warn!(
            "relative_l2: {} of {b} samples have a zero-norm target and are excluded",
            b - valid
        );
    }
    if valid == 0 {
        return Err(Error::invalid(
            "relative_l2: every target in the batch has zero norm",
        ));
    }
    let guard: Vec<T> = norms.iter().map(|t| T::of(SQRT_GUARD * t * t)).collect();
    let weights: Vec<T> = norms
        .iter()
        .map(|&t| {
            if t > 0.0 {
                T::of(1.0 / (t * valid as f64))
            } else {
                T::zero()
            }
        })
        .collect();
    let diff = pred.sub(target)?.reshape(&[b, n])?;
    let sq = diff
        .mul(&diff)?
        .sum_axis(1, false)?
        .add(&Tensor::from_vec(guard, &[b])?)?;
    Ok(sq.sqrt().mul(&Tensor::from_vec(weights, &[b])?)?.sum_all())
}

/// Per-sample relative errors of flat buffers holding `len`-sized samples;
/// `None` where the target norm is zero.
pub fn relative_l2_samples(pred: &[f32], target: &[f32], len: usize) -> Result<Vec<Option<f64>>> {
    if pred.len() != target.len() || len == 0 || pred.len() % len != 0 {
        return Err(Error::shape(
            "relative_l2",
            &[pred.len()],
            &[target.len(), len],
        ));
    }
    Ok(pred
        .chunks(len)
        .zip(target.chunks(len))
        .map(|(p, t)| {
            let num: f64 = p
                .iter()
                .zip(t)
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum();
            let den: f64 = t.iter().map(|b| (*b as f64).powi(2)).sum();
            (den > 0.0).then(|| (num / den).sqrt())
        })
        .collect())
}

/// Mean over samples with a non-zero target.
pub fn mean_relative_l2(pred: &[f32], target: &[f32], len: usize) -> Result<f64> {
    let errs: Vec<f64> = relative_l2_samples(pred, target, len)?
        .into_iter()
        .flatten()
        .collect();
    if errs.is_empty() {
        return Err(Error::invalid("relative_l2: every target has zero norm"));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}
