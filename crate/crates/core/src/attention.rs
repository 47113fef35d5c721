//! Multi-head cross-attention from query embeddings to the latent sequence.

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamStore};
use crate::tensor::{Element, Tensor};

pub struct CrossAttention<T: Element> {
    pub dim: usize,
    pub heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl<T: Element> CrossAttention<T> {
    /// Queries of width `query_dim`, keys/values of width `kv_dim`, inner width `dim`.
    pub fn new(
        store: &mut ParamStore<T>,
        name: &str,
        query_dim: usize,
        kv_dim: usize,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid(format!(
                "cross attention: {heads} heads do not divide width {dim}"
            )));
        }
        Ok(CrossAttention {
            dim,
            heads,
            q: Linear::new(store, &format!("{name}.q"), query_dim, dim),
            k: Linear::new(store, &format!("{name}.k"), kv_dim, dim),
            v: Linear::new(store, &format!("{name}.v"), kv_dim, dim),
            o: Linear::new(store, &format!("{name}.o"), dim, query_dim),
        })
    }

    /// `[B, n, dim] → [B, heads, n, dim/heads]`
    fn split(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, n) = (x.shape()[0], x.shape()[1]);
        x.reshape(&[b, n, self.heads, self.dim / self.heads])?
            .permute(&[0, 2, 1, 3])
    }

    /// Softmax weights `[B, heads, Lq, Lk]`.
    pub fn weights(&self, p: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
        if p.rank() != 3 || u.rank() != 3 || p.shape()[0] != u.shape()[0] {
            return Err(Error::shape("cross_attention", p.shape(), u.shape()));
        }
        let q = self.split(&self.q.forward(p)?)?;
        let k = self.split(&self.k.forward(u)?)?;
        let scale = 1.0 / ((self.dim / self.heads) as f64).sqrt();
        q.matmul(&k.transpose(2, 3)?)?.scale(scale).softmax(3)
    }

    /// Attention output only; the caller adds the residual.
    pub fn forward(&self, p: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self.weights(p, u)?;
        let v = self.split(&self.v.forward(u)?)?;
        let (b, lq) = (p.shape()[0], p.shape()[1]);
        let mixed = w
            .matmul(&v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, lq, self.dim])?;
        self.o.forward(&mixed)
    }
}

/// `p0 + CrossAttn(p0, u_L)`.
pub fn cross_attention<T: Element>(
    attn: &CrossAttention<T>,
    p0: &Tensor<T>,
    latent: &Tensor<T>,
) -> Result<Tensor<T>> {
    p0.add(&attn.forward(p0, latent)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_count_must_divide() {
        let mut store = ParamStore::<f32>::new(0);
        assert!(CrossAttention::new(&mut store, "a", 8, 8, 8, 3).is_err());
    }

    #[test]
    fn rows_sum_to_one() {
        let mut store = ParamStore::<f64>::new(1);
        let a = CrossAttention::new(&mut store, "a", 4, 6, 8, 2).unwrap();
        let p = Tensor::from_fn(&[2, 5, 4], |i| (i as f64 * 0.37).sin());
        let u = Tensor::from_fn(&[2, 7, 6], |i| (i as f64 * 0.11).cos());
        let w = a.weights(&p, &u).unwrap();
        assert_eq!(w.shape(), &[2, 2, 5, 7]);
        for row in w.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.forward(&p, &u).unwrap().shape(), &[2, 5, 4]);
    }

    #[test]
    fn identical_latent_rows_give_constant_output() {
        let mut store = ParamStore::<f64>::new(2);
        let a = CrossAttention::new(&mut store, "a", 4, 4, 4, 1).unwrap();
        let p = Tensor::from_fn(&[1, 3, 4], |i| i as f64 * 0.2 - 1.0);
        let u = Tensor::from_fn(&[1, 5, 4], |i| [0.3, -0.7, 1.1, 0.05][i % 4]);
        let y = a.forward(&p, &u).unwrap();
        let first = &y.data()[..4];
        for row in y.data().chunks(4) {
            row.iter()
                .zip(first)
                .for_each(|(x, f)| assert!((x - f).abs() < 1e-12));
        }
    }
}
