//! Shape manipulation and reductions.

use super::broadcast::{broadcast_shape, expand, reduce_to_shape};
use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

fn permute_data<T: Element>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    // Inner loop over the last output axis keeps the common transposes cheap.
    let last = rank - 1;
    let (n_last, s_last) = (out_shape[last], strides[last]);
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    for _ in 0..total / n_last {
        let mut off = base;
        for _ in 0..n_last {
            out.push(data[off]);
            off += s_last;
        }
        for d in (0..last).rev() {
            idx[d] += 1;
            base += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            "reshape",
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::invalid(format!(
                "permute: {perm:?} is not a permutation of rank {rank}"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let data = permute_data(self.data(), self.shape(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let grad_shape = out_shape.clone();
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone()],
            "permute",
            Box::new(move |g, _, _| vec![Some(permute_data(g, &grad_shape, &inverse))]),
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(Error::invalid(format!(
                "transpose: axes {a},{b} out of range for rank {}",
                self.rank()
            )));
        }
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::invalid(format!(
                "narrow: range {start}..{} on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * full + start) * inner;
            data.extend_from_slice(&self.data()[off..off + len * inner]);
        }
        let total = self.numel();
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone()],
            "narrow",
            Box::new(move |g, _, _| {
                let mut out = vec![T::zero(); total];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    out[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                vec![Some(out)]
            }),
        ))
    }

    /// Splits `axis` into equal chunks of `size`.
    pub fn chunk(&self, axis: usize, size: usize) -> Result<Vec<Tensor<T>>> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid(format!("chunk: axis {axis} out of range")))?;
        if size == 0 || n % size != 0 {
            return Err(Error::invalid(format!(
                "chunk: {n} not divisible into pieces of {size}"
            )));
        }
        (0..n / size)
            .map(|i| self.narrow(axis, i * size, size))
            .collect()
    }

    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat: no inputs"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::invalid(format!(
                "concat: axis {axis} out of range for rank {rank}"
            )));
        }
        for p in parts {
            let same = p.rank() == rank
                && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !same {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(
            data,
            out_shape,
            parts.to_vec(),
            "concat",
            Box::new(move |g, p, _| {
                let mut grads: Vec<Option<Vec<T>>> = p
                    .iter()
                    .map(|t| t.requires_grad().then(|| Vec::with_capacity(t.numel())))
                    .collect();
                for o in 0..outer {
                    let mut off = o * row;
                    for (slot, &w) in grads.iter_mut().zip(&widths) {
                        if let Some(buf) = slot {
                            buf.extend_from_slice(&g[off..off + w]);
                        }
                        off += w;
                    }
                }
                grads
            }),
        ))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let target = broadcast_shape(self.shape(), shape)?;
        if target != shape {
            return Err(Error::shape("broadcast_to", self.shape(), shape));
        }
        let data = expand(self.data(), self.shape(), shape);
        let out_shape = shape.to_vec();
        Ok(Tensor::from_op(
            data,
            shape.to_vec(),
            vec![self.clone()],
            "broadcast_to",
            Box::new(move |g, p, _| vec![Some(reduce_to_shape(g, &out_shape, p[0].shape()))]),
        ))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![s],
            Vec::new(),
            vec![self.clone()],
            "sum",
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::invalid(format!(
                "sum_axis: axis {axis} out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let src = &self.data()[(o * n + a) * inner..(o * n + a + 1) * inner];
                data[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, &s)| *d += s);
            }
        }
        let mut out_shape = shape.to_vec();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone()],
            "sum_axis",
            Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    for _ in 0..n {
                        out.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(out)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid(format!("mean_axis: axis {axis} out of range")))?;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / n.max(1) as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(data, shape).unwrap()
    }

    #[test]
    fn transpose_2d() {
        let a = t((0..6).map(f64::from).collect(), &[2, 3]);
        let b = a.transpose(0, 1).unwrap();
        assert_eq!(b.shape(), &[3, 2]);
        assert_eq!(b.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn permute_round_trip() {
        let a = t((0..24).map(f64::from).collect(), &[2, 3, 4]);
        let b = a.permute(&[2, 0, 1]).unwrap();
        assert_eq!(b.shape(), &[4, 2, 3]);
        let c = b.permute(&[1, 2, 0]).unwrap();
        assert_eq!(c.data(), a.data());
        assert!(a.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn narrow_and_concat_invert() {
        let a = t((0..12).map(f64::from).collect(), &[2, 6]);
        let parts = a.chunk(1, 2).unwrap();
        assert_eq!(parts[1].data(), &[2.0, 3.0, 8.0, 9.0]);
        let back = Tensor::concat(&parts, 1).unwrap();
        assert_eq!(back.data(), a.data());
        assert_eq!(back.shape(), a.shape());
    }

    #[test]
    fn sum_axis_values() {
        let a = t((0..6).map(f64::from).collect(), &[2, 3]);
        assert_eq!(a.sum_axis(0, false).unwrap().data(), &[3.0, 5.0, 7.0]);
        assert_eq!(a.sum_axis(1, true).unwrap().shape(), &[2, 1]);
        assert_eq!(a.sum_axis(1, true).unwrap().data(), &[3.0, 12.0]);
    }

    #[test]
    fn broadcast_to_gradient_sums() {
        let a = Tensor::<f64>::param(vec![1.0, 2.0], &[2, 1]).unwrap();
        let b = a.broadcast_to(&[3, 2, 4]).unwrap();
        assert_eq!(b.numel(), 24);
        b.sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![12.0, 12.0]);
    }
}
