//! Causal long convolution, in an `O(L log L)` spectral form and an
//! `O(L²)` direct form, plus the short depthwise filter applied to the
//! Hyena projections.
//!
//! All forms share one semantics: `y[b,d,t] = Σ_{n≤t} h[d,t−n]·u[b,d,n]`.
//! Output length equals input length and nothing at position `t` depends on
//! inputs after `t`.

use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{next_pow2, RealFftPlan};
use crate::tensor::{Element, Tensor};

/// Padding rule for the spectral path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvMode {
    pub seq_len: usize,
}

impl ConvMode {
    pub fn new(seq_len: usize) -> Self {
        ConvMode { seq_len }
    }

    /// Zero-padded transform length: the next power of two `>= 2L`.
    pub fn fft_len(&self) -> usize {
        next_pow2(2 * self.seq_len)
    }
}

fn check_shapes<T: Element>(
    op: &'static str,
    h: &Tensor<T>,
    u: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    if h.rank() != 2
        || u.rank() != 3
        || h.shape()[0] != u.shape()[1]
        || h.shape()[1] != u.shape()[2]
    {
        return Err(Error::shape(op, h.shape(), u.shape()));
    }
    Ok((u.shape()[0], u.shape()[1], u.shape()[2]))
}

struct Spectral<T: Element> {
    plan: RealFftPlan<T>,
    len: usize,
}

impl<T: Element> Spectral<T> {
    fn bins(&self) -> usize {
        self.plan.bins()
    }

    /// Half spectra of zero-padded rows of length `len`.
    fn transform_rows(&self, rows: &[T]) -> Vec<Complex<T>> {
        let nfft = self.plan.len();
        let nb = self.bins();
        let mut out = vec![Complex::default(); rows.len() / self.len * nb];
        out.par_chunks_mut(nb)
            .zip(rows.par_chunks(self.len))
            .for_each_init(
                || (vec![T::zero(); nfft], vec![Complex::default(); nfft / 2]),
                |(padded, scratch), (dst, row)| {
                    padded[..self.len].copy_from_slice(row);
                    padded[self.len..].iter_mut().for_each(|v| *v = T::zero());
                    self.plan.forward(padded, dst, scratch);
                },
            );
        out
    }

    /// Inverse transforms `nb`-bin rows and keeps the first `len` samples.
    fn inverse_rows(&self, spectra: &[Complex<T>]) -> Vec<T> {
        let nfft = self.plan.len();
        let nb = self.bins();
        let mut out = vec![T::zero(); spectra.len() / nb * self.len];
        out.par_chunks_mut(self.len)
            .zip(spectra.par_chunks(nb))
            .for_each_init(
                || (vec![T::zero(); nfft], vec![Complex::default(); nfft / 2]),
                |(full, scratch), (dst, spec)| {
                    self.plan.inverse(spec, full, scratch);
                    dst.copy_from_slice(&full[..self.len]);
                },
            );
        out
    }
}

/// Spectral causal convolution of `u: [B, D, L]` with per-channel filters
/// `h: [D, L]`. Gradients are spectral correlations with the saved spectra.
pub fn fft_conv<T: Element>(h: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, channels, len) = check_shapes("fft_conv", h, u)?;
    let mode = ConvMode::new(len);
    let spectral = Arc::new(Spectral {
        plan: RealFftPlan::new(mode.fft_len())?,
        len,
    });
    let nb = spectral.bins();
    let hs = Arc::new(spectral.transform_rows(h.data()));
    let us = Arc::new(spectral.transform_rows(u.data()));
    let mut prod = vec![Complex::default(); batch * channels * nb];
    prod.par_chunks_mut(nb).enumerate().for_each(|(row, dst)| {
        let d = row % channels;
        let (hd, ud) = (&hs[d * nb..(d + 1) * nb], &us[row * nb..(row + 1) * nb]);
        dst.iter_mut()
            .zip(hd.iter().zip(ud))
            .for_each(|(o, (&a, &b))| *o = a * b);
    });
    let out = spectral.inverse_rows(&prod);
    Ok(Tensor::from_op(
        out,
        vec![batch, channels, len],
        vec![h.clone(), u.clone()],
        "fft_conv",
        Box::new(move |g, p, _| {
            let gs = spectral.transform_rows(g);
            let gu = p[1].requires_grad().then(|| {
                let mut corr = vec![Complex::default(); gs.len()];
                corr.par_chunks_mut(nb).enumerate().for_each(|(row, dst)| {
                    let d = row % channels;
                    let (hd, gd) = (&hs[d * nb..(d + 1) * nb], &gs[row * nb..(row + 1) * nb]);
                    dst.iter_mut()
                        .zip(gd.iter().zip(hd))
                        .for_each(|(o, (&a, &b))| *o = a * b.conj());
                });
                spectral.inverse_rows(&corr)
            });
            let gh = p[0].requires_grad().then(|| {
                let mut acc = vec![Complex::default(); channels * nb];
                for b in 0..batch {
                    for d in 0..channels {
                        let row = b * channels + d;
                        let (gd, ud) =
                            (&gs[row * nb..(row + 1) * nb], &us[row * nb..(row + 1) * nb]);
                        acc[d * nb..(d + 1) * nb]
                            .iter_mut()
                            .zip(gd.iter().zip(ud))
                            .for_each(|(o, (&a, &b))| *o += a * b.conj());
                    }
                }
                spectral.inverse_rows(&acc)
            });
            vec![gh, gu]
        }),
    ))
}

/// Quadratic-time reference for [`fft_conv`], differentiable by direct sums.
pub fn direct_conv<T: Element>(h: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, channels, len) = check_shapes("direct_conv", h, u)?;
    let mut out = vec![T::zero(); batch * channels * len];
    for (row, dst) in out.chunks_mut(len).enumerate() {
        let d = row % channels;
        let hd = &h.data()[d * len..(d + 1) * len];
        let ur = &u.data()[row * len..(row + 1) * len];
        for (t, y) in dst.iter_mut().enumerate() {
            *y = (0..=t).map(|n| hd[t - n] * ur[n]).sum();
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![batch, channels, len],
        vec![h.clone(), u.clone()],
        "direct_conv",
        Box::new(move |g, p, _| {
            let (h, u) = (p[0].data(), p[1].data());
            let gh = p[0].requires_grad().then(|| {
                let mut gh = vec![T::zero(); channels * len];
                for row in 0..batch * channels {
                    let d = row % channels;
                    let (gr, ur) = (
                        &g[row * len..(row + 1) * len],
                        &u[row * len..(row + 1) * len],
                    );
                    for k in 0..len {
                        gh[d * len + k] += (k..len).map(|t| gr[t] * ur[t - k]).sum::<T>();
                    }
                }
                gh
            });
            let gu = p[1].requires_grad().then(|| {
                let mut gu = vec![T::zero(); batch * channels * len];
                for row in 0..batch * channels {
                    let d = row % channels;
                    let (gr, hd) = (&g[row * len..(row + 1) * len], &h[d * len..(d + 1) * len]);
                    for n in 0..len {
                        gu[row * len + n] = (n..len).map(|t| gr[t] * hd[t - n]).sum();
                    }
                }
                gu
            });
            vec![gh, gu]
        }),
    ))
}

/// Causal depthwise convolution of `x: [B, D, L]` with `kernels: [D, w]`.
/// The last tap multiplies the current sample and tap `j` reaches back
/// `w - 1 - j` steps; the sequence is left-padded with `w - 1` zeros.
pub fn short_conv<T: Element>(x: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 || kernels.rank() != 2 || kernels.shape()[0] != x.shape()[1] {
        return Err(Error::shape("short_conv", x.shape(), kernels.shape()));
    }
    let w = kernels.shape()[1];
    if w % 2 == 0 {
        return Err(Error::invalid(format!(
            "short_conv: kernel width {w} must be odd"
        )));
    }
    let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![T::zero(); x.numel()];
    for (row, dst) in out.chunks_mut(len).enumerate() {
        let k = &kernels.data()[(row % channels) * w..(row % channels + 1) * w];
        let xr = &x.data()[row * len..(row + 1) * len];
        for (t, y) in dst.iter_mut().enumerate() {
            let mut s = T::zero();
            for (j, &kj) in k.iter().enumerate() {
                let back = w - 1 - j;
                if t >= back {
                    s += kj * xr[t - back];
                }
            }
            *y = s;
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![batch, channels, len],
        vec![x.clone(), kernels.clone()],
        "short_conv",
        Box::new(move |g, p, _| {
            let (x, kern) = (p[0].data(), p[1].data());
            let gx = p[0].requires_grad().then(|| {
                let mut gx = vec![T::zero(); x.len()];
                for row in 0..batch * channels {
                    let k = &kern[(row % channels) * w..(row % channels + 1) * w];
                    let gr = &g[row * len..(row + 1) * len];
                    let dst = &mut gx[row * len..(row + 1) * len];
                    for (t, &gt) in gr.iter().enumerate() {
                        for (j, &kj) in k.iter().enumerate() {
                            let back = w - 1 - j;
                            if t >= back {
                                dst[t - back] += gt * kj;
                            }
                        }
                    }
                }
                gx
            });
            let gk = p[1].requires_grad().then(|| {
                let mut gk = vec![T::zero(); channels * w];
                for row in 0..batch * channels {
                    let d = row % channels;
                    let gr = &g[row * len..(row + 1) * len];
                    let xr = &x[row * len..(row + 1) * len];
                    for j in 0..w {
                        let back = w - 1 - j;
                        gk[d * w + j] += (back..len).map(|t| gr[t] * xr[t - back]).sum::<T>();
                    }
                }
                gk
            });
            vec![gx, gk]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(channels: usize, len: usize, at: usize) -> Tensor<f64> {
        Tensor::from_fn(&[channels, len], |i| if i % len == at { 1.0 } else { 0.0 })
    }

    fn signal(batch: usize, channels: usize, len: usize) -> Tensor<f64> {
        Tensor::from_fn(&[batch, channels, len], |i| {
            ((i * 13 + 5) as f64 * 0.37).sin()
        })
    }

    #[test]
    fn impulse_at_zero_is_identity() {
        let u = signal(2, 3, 10);
        let y = direct_conv(&impulse(3, 10, 0), &u).unwrap();
        assert_eq!(y.data(), u.data());
        let z = fft_conv(&impulse(3, 10, 0), &u).unwrap();
        for (a, b) in z.data().iter().zip(u.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_at_one_shifts_right() {
        let u = signal(1, 2, 6);
        let y = direct_conv(&impulse(2, 6, 1), &u).unwrap();
        for row in 0..2 {
            assert_eq!(y.data()[row * 6], 0.0);
            for t in 1..6 {
                assert_eq!(y.data()[row * 6 + t], u.data()[row * 6 + t - 1]);
            }
        }
    }

    #[test]
    fn hand_sum() {
        let h = Tensor::<f64>::from_vec(vec![1.0, 1.0, 0.0, 0.0], &[1, 4]).unwrap();
        let u = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 4]).unwrap();
        assert_eq!(direct_conv(&h, &u).unwrap().data(), &[1.0, 3.0, 5.0, 7.0]);
        let y = fft_conv(&h, &u).unwrap();
        for (a, b) in y.data().iter().zip([1.0, 3.0, 5.0, 7.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let h = Tensor::<f32>::zeros(&[3, 8]);
        let u = Tensor::<f32>::zeros(&[1, 2, 8]);
        assert!(fft_conv(&h, &u).is_err());
        assert!(direct_conv(&h, &Tensor::zeros(&[1, 3, 7])).is_err());
    }

    #[test]
    fn short_conv_taps() {
        let x = signal(1, 1, 7);
        let ident = Tensor::<f64>::from_vec(vec![0.0, 0.0, 1.0], &[1, 3]).unwrap();
        assert_eq!(short_conv(&x, &ident).unwrap().data(), x.data());
        let delay = Tensor::<f64>::from_vec(vec![1.0, 0.0, 0.0], &[1, 3]).unwrap();
        let y = short_conv(&x, &delay).unwrap();
        assert_eq!(&y.data()[..2], &[0.0, 0.0]);
        assert_eq!(&y.data()[2..], &x.data()[..5]);
        let even = Tensor::<f64>::zeros(&[1, 2]);
        assert!(short_conv(&x, &even).is_err());
    }

    #[test]
    fn short_conv_is_truncated_direct_conv() {
        let x = signal(2, 3, 12);
        let k = Tensor::<f64>::from_fn(&[3, 3], |i| (i as f64 * 1.3).cos());
        let h = Tensor::<f64>::from_fn(&[3, 12], |i| {
            let (d, m) = (i / 12, i % 12);
            if m < 3 {
                k.data()[d * 3 + (2 - m)]
            } else {
                0.0
            }
        });
        let a = short_conv(&x, &k).unwrap();
        let b = direct_conv(&h, &x).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
