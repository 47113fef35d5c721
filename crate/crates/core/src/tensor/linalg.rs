//! Batched matrix products.

use super::broadcast::{broadcast_shape, for_each_pair};
use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

impl<T: Element> Tensor<T> {
    /// `[..., m, k] · [..., k, n] -> [..., m, n]` with broadcast batch axes.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let batch_a = sa[..sa.len() - 2].to_vec();
        let batch_b = sb[..sb.len() - 2].to_vec();
        let batch =
            broadcast_shape(&batch_a, &batch_b).map_err(|_| Error::shape("matmul", sa, sb))?;
        let mut out_shape = batch.clone();
        out_shape.extend([m, n]);

        if batch_b.is_empty() {
            // Fold every batch axis of the left operand into the row count.
            let rows = numel(&batch_a) * m;
            let mut c = vec![T::zero(); rows * n];
            T::gemm(
                rows,
                k,
                n,
                self.data(),
                k as isize,
                1,
                other.data(),
                n as isize,
                1,
                T::zero(),
                &mut c,
                n as isize,
                1,
            );
            return Ok(Tensor::from_op(
                c,
                out_shape,
                vec![self.clone(), other.clone()],
                "matmul",
                Box::new(move |g, p, _| {
                    let (a, b) = (&p[0], &p[1]);
                    let ga = a.requires_grad().then(|| {
                        let mut ga = vec![T::zero(); rows * k];
                        T::gemm(
                            rows,
                            n,
                            k,
                            g,
                            n as isize,
                            1,
                            b.data(),
                            1,
                            n as isize,
                            T::zero(),
                            &mut ga,
                            k as isize,
                            1,
                        );
                        ga
                    });
                    let gb = b.requires_grad().then(|| {
                        let mut gb = vec![T::zero(); k * n];
                        T::gemm(
                            k,
                            rows,
                            n,
                            a.data(),
                            1,
                            k as isize,
                            g,
                            n as isize,
                            1,
                            T::zero(),
                            &mut gb,
                            n as isize,
                            1,
                        );
                        gb
                    });
                    vec![ga, gb]
                }),
            ));
        }

        let mut pairs = Vec::with_capacity(numel(&batch));
        for_each_pair(&batch_a, &batch_b, &batch, |_, ia, ib| pairs.push((ia, ib)));
        let (sza, szb, szc) = (m * k, k * n, m * n);
        let mut c = vec![T::zero(); pairs.len() * szc];
        for (i, &(ia, ib)) in pairs.iter().enumerate() {
            T::gemm(
                m,
                k,
                n,
                &self.data()[ia * sza..(ia + 1) * sza],
                k as isize,
                1,
                &other.data()[ib * szb..(ib + 1) * szb],
                n as isize,
                1,
                T::zero(),
                &mut c[i * szc..(i + 1) * szc],
                n as isize,
                1,
            );
        }
        Ok(Tensor::from_op(
            c,
            out_shape,
            vec![self.clone(), other.clone()],
            "matmul",
            Box::new(move |g, p, _| {
                let (a, b) = (&p[0], &p[1]);
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); a.numel()];
                    for (i, &(ia, ib)) in pairs.iter().enumerate() {
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[i * szc..(i + 1) * szc],
                            n as isize,
                            1,
                            &b.data()[ib * szb..(ib + 1) * szb],
                            1,
                            n as isize,
                            T::one(),
                            &mut ga[ia * sza..(ia + 1) * sza],
                            k as isize,
                            1,
                        );
                    }
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); b.numel()];
                    for (i, &(ia, ib)) in pairs.iter().enumerate() {
                        T::gemm(
                            k,
                            m,
                            n,
                            &a.data()[ia * sza..(ia + 1) * sza],
                            1,
                            k as isize,
                            &g[i * szc..(i + 1) * szc],
                            n as isize,
                            1,
                            T::one(),
                            &mut gb[ib * szb..(ib + 1) * szb],
                            n as isize,
                            1,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_contraction() {
        let a = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::<f64>::from_vec(vec![0.0, 1.0], &[2, 1]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn identity_left() {
        let eye = Tensor::<f64>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let m = Tensor::<f64>::from_fn(&[3, 3], |i| (i as f64 * 0.37).sin());
        assert_eq!(eye.matmul(&m).unwrap().data(), m.data());
    }

    #[test]
    fn inner_mismatch_rejected() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn batched_broadcast_matches_loop() {
        let a = Tensor::<f64>::from_fn(&[2, 1, 2, 3], |i| i as f64 - 4.0);
        let b = Tensor::<f64>::from_fn(&[3, 3, 2], |i| (i as f64).cos());
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2, 2]);
        for x in 0..2 {
            for y in 0..3 {
                for i in 0..2 {
                    for j in 0..2 {
                        let mut s = 0.0;
                        for p in 0..3 {
                            s += a.data()[x * 6 + i * 3 + p] * b.data()[y * 6 + p * 2 + j];
                        }
                        let got = c.data()[((x * 3 + y) * 2 + i) * 2 + j];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
