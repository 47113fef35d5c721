//! Trailing-dimension broadcasting.

use super::{numel, Element};
use crate::error::{Error, Result};

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_end(a, rank - 1 - i);
        let db = dim_from_end(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape("broadcast", a, b)),
        };
    }
    Ok(out)
}

fn dim_from_end(shape: &[usize], from_end: usize) -> usize {
    if from_end < shape.len() {
        shape[shape.len() - 1 - from_end]
    } else {
        1
    }
}

/// Strides of `shape` viewed inside `out`, with zero stride on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[offset + i] = acc;
        }
        acc *= shape[i];
    }
    strides
}

fn is_suffix(shape: &[usize], out: &[usize]) -> bool {
    shape.len() <= out.len() && out[out.len() - shape.len()..] == *shape
}

/// Visits `(out_index, a_index, b_index)` for every element of `out`.
pub(crate) fn for_each_pair(
    a: &[usize],
    b: &[usize],
    out: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..total {
        f(i, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary_map<T: Element>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 && a_shape == out_shape {
        let y = b[0];
        return a.iter().map(|&x| f(x, y)).collect();
    }
    if a.len() == 1 && b_shape == out_shape {
        let x = a[0];
        return b.iter().map(|&y| f(x, y)).collect();
    }
    if a_shape == out_shape && is_suffix(b_shape, out_shape) && !b.is_empty() {
        let inner = b.len();
        return a
            .chunks(inner)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| f(x, y)))
            .collect();
    }
    let mut out = vec![T::zero(); numel(out_shape)];
    for_each_pair(a_shape, b_shape, out_shape, |i, ia, ib| {
        out[i] = f(a[ia], b[ib])
    });
    out
}

/// Sums `grad` (shaped like `from`) down to `to`, undoing a broadcast.
pub(crate) fn reduce_to_shape<T: Element>(grad: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return grad.to_vec();
    }
    let n = numel(to);
    if n == 1 {
        return vec![grad.iter().copied().sum()];
    }
    let mut out = vec![T::zero(); n];
    if is_suffix(to, from) {
        for row in grad.chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, &g)| *o += g);
        }
        return out;
    }
    for_each_pair(from, to, from, |i, _, it| out[it] += grad[i]);
    out
}

/// Materializes `data` (shaped `from`) at the broadcast shape `to`.
pub(crate) fn expand<T: Element>(data: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return data.to_vec();
    }
    let mut out = vec![T::zero(); numel(to)];
    for_each_pair(from, to, to, |i, ia, _| out[i] = data[ia]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape(&[4, 1, 3], &[2, 1]).unwrap(), vec![4, 2, 3]);
        assert_eq!(broadcast_shape(&[], &[5]).unwrap(), vec![5]);
        assert!(broadcast_shape(&[2, 3], &[2]).is_err());
    }

    #[test]
    fn reduce_inverts_expand_counts() {
        let g = vec![1.0f64; 24];
        let r = reduce_to_shape(&g, &[2, 3, 4], &[3, 1]);
        assert_eq!(r, vec![8.0; 3]);
    }
}
