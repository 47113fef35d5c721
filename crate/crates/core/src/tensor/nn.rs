//! Fused normalization, softmax and dropout kernels.

use rand::Rng;

use super::{Element, Tensor};
use crate::error::{Error, Result};

impl<T: Element> Tensor<T> {
    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("layer_norm on a scalar"))?;
        if d == 0 || gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::shape("layer_norm", self.shape(), gain.shape()));
        }
        if eps <= 0.0 {
            return Err(Error::invalid("layer_norm: eps must be positive"));
        }
        let eps = T::of(eps);
        let inv_d = T::one() / T::of(d as f64);
        let rows = self.numel() / d;
        let mut xhat = vec![T::zero(); self.numel()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); self.numel()];
        let (gv, bv) = (gain.data(), bias.data());
        for r in 0..rows {
            let x = &self.data()[r * d..(r + 1) * d];
            let mean = x.iter().copied().sum::<T>() * inv_d;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (x[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gain.clone(), bias.clone()],
            "layer_norm",
            Box::new(move |g, p, _| {
                let gv = p[1].data();
                let gx = p[0].requires_grad().then(|| {
                    let mut gx = vec![T::zero(); g.len()];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            gx[r * d + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    gx
                });
                let gg = p[1].requires_grad().then(|| {
                    let mut acc = vec![T::zero(); d];
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        acc.iter_mut()
                            .zip(gr.iter().zip(hr))
                            .for_each(|(a, (&g, &h))| *a += g * h);
                    }
                    acc
                });
                let gb = p[2].requires_grad().then(|| {
                    let mut acc = vec![T::zero(); d];
                    for gr in g.chunks(d) {
                        acc.iter_mut().zip(gr).for_each(|(a, &g)| *a += g);
                    }
                    acc
                });
                vec![gx, gg, gb]
            }),
        ))
    }

    /// Softmax along `axis`, shifted by the running maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::invalid(format!(
                "softmax: axis {axis} out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let max = (0..n).map(|a| x[at(a)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for a in 0..n {
                    let e = (x[at(a)] - max).exp();
                    out[at(a)] = e;
                    sum += e;
                }
                let inv = T::one() / sum;
                for a in 0..n {
                    out[at(a)] *= inv;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            shape.to_vec(),
            vec![self.clone()],
            "softmax",
            Box::new(move |g, _, y| {
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * n + a) * inner + i;
                        let dot: T = (0..n).map(|a| g[at(a)] * y[at(a)]).sum();
                        for a in 0..n {
                            gx[at(a)] = y[at(a)] * (g[at(a)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Inverted dropout: zeroes entries with probability `p` and rescales the
    /// survivors by `1/(1-p)`. Identity when `p == 0`.
    pub fn dropout(&self, p: f64, rng: &mut impl Rng) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = self
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            "dropout",
            Box::new(move |g, _, _| {
                vec![Some(g.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_symmetric_pair() {
        let x = Tensor::<f64>::zeros(&[2]);
        assert_eq!(x.softmax(0).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let x = Tensor::<f32>::from_vec(vec![1000.0, 0.0], &[2]).unwrap();
        let y = x.softmax(0).unwrap();
        assert_eq!(y.data()[0], 1.0);
        assert!(y.data()[1] >= 0.0 && y.data()[1] < 1e-30);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::<f64>::full(&[3, 4], 2.5);
        let y = x
            .layer_norm(&Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-5)
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_two_point_analytic() {
        let eps = 1e-5;
        let x = Tensor::<f64>::from_vec(vec![1.0, -1.0], &[2]).unwrap();
        let y = x
            .layer_norm(&Tensor::ones(&[2]), &Tensor::zeros(&[2]), eps)
            .unwrap();
        let s = 1.0 / (1.0f64 + eps).sqrt();
        assert!((y.data()[0] - s).abs() < 1e-15);
        assert!((y.data()[1] + s).abs() < 1e-15);
    }

    #[test]
    fn dropout_is_identity_at_zero_rate_and_unbiased_otherwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::ones(&[20_000]);
        assert_eq!(x.dropout(0.0, &mut rng).unwrap().data(), x.data());
        let y = x.dropout(0.03, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / 20_000.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(x.dropout(1.0, &mut rng).is_err());
    }
}
