//! Iterative radix-2 FFT and the packed real transform built on it.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Precomputed bit-reversal order and per-stage twiddles for one length.
pub struct FftPlan<T: Element> {
    n: usize,
    bitrev: Vec<usize>,
    /// Stage with half-width `h` stores `exp(-iπj/h)`, `j < h`, at offset `h - 1`.
    twiddles: Vec<Complex<T>>,
}

impl<T: Element> FftPlan<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::NonPowerOfTwo(n));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        let mut twiddles = Vec::with_capacity(n.saturating_sub(1));
        let mut half = 1;
        while half < n {
            for j in 0..half {
                let angle = -std::f64::consts::PI * j as f64 / half as f64;
                twiddles.push(Complex::new(T::of(angle.cos()), T::of(angle.sin())));
            }
            half *= 2;
        }
        Ok(FftPlan {
            n,
            bitrev,
            twiddles,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform, `X_k = Σ x_j e^{-2πijk/n}`.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        assert_eq!(buf.len(), self.n, "fft buffer length");
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < self.n {
            let tw = &self.twiddles[half - 1..2 * half - 1];
            for block in buf.chunks_exact_mut(2 * half) {
                let (lo, hi) = block.split_at_mut(half);
                for ((a, b), &w) in lo.iter_mut().zip(hi.iter_mut()).zip(tw) {
                    let t = *b * w;
                    *b = *a - t;
                    *a += t;
                }
            }
            half *= 2;
        }
    }

    /// In-place inverse transform including the `1/n` factor.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        buf.iter_mut().for_each(|c| *c = c.conj());
        self.forward(buf);
        let scale = T::one() / T::of(self.n as f64);
        buf.iter_mut().for_each(|c| *c = c.conj() * scale);
    }
}

/// Real-input transform of even length `n` via a complex transform of `n/2`.
pub struct RealFftPlan<T: Element> {
    n: usize,
    half: Option<FftPlan<T>>,
    /// `exp(-2πik/n)` for `k <= n/2`.
    twiddles: Vec<Complex<T>>,
}

impl<T: Element> RealFftPlan<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::NonPowerOfTwo(n));
        }
        let half = if n >= 2 {
            Some(FftPlan::new(n / 2)?)
        } else {
            None
        };
        let twiddles = (0..=n / 2)
            .map(|k| {
                let angle = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex::new(T::of(angle.cos()), T::of(angle.sin()))
            })
            .collect();
        Ok(RealFftPlan { n, half, twiddles })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Writes the `n/2 + 1` non-negative frequency bins of `input` into `out`.
    /// `scratch` must hold `n/2` values.
    pub fn forward(&self, input: &[T], out: &mut [Complex<T>], scratch: &mut [Complex<T>]) {
        assert_eq!(input.len(), self.n, "rfft input length");
        assert_eq!(out.len(), self.bins(), "rfft output length");
        let Some(plan) = &self.half else {
            out[0] = Complex::new(input[0], T::zero());
            return;
        };
        let h = self.n / 2;
        for (j, z) in scratch[..h].iter_mut().enumerate() {
            *z = Complex::new(input[2 * j], input[2 * j + 1]);
        }
        plan.forward(&mut scratch[..h]);
        let half = T::of(0.5);
        for k in 0..=h {
            let zk = scratch[k % h];
            let zr = scratch[(h - k) % h].conj();
            let even = (zk + zr) * half;
            // (zk - zr) / 2i
            let d = (zk - zr) * half;
            let odd = Complex::new(d.im, -d.re);
            out[k] = even + self.twiddles[k] * odd;
        }
    }

    /// Inverse of [`RealFftPlan::forward`], including the `1/n` factor.
    pub fn inverse(&self, input: &[Complex<T>], out: &mut [T], scratch: &mut [Complex<T>]) {
        assert_eq!(input.len(), self.bins(), "irfft input length");
        assert_eq!(out.len(), self.n, "irfft output length");
        let Some(plan) = &self.half else {
            out[0] = input[0].re;
            return;
        };
        let h = self.n / 2;
        let half = T::of(0.5);
        for k in 0..h {
            let xk = input[k];
            let xr = input[h - k].conj();
            let even = (xk + xr) * half;
            let odd = (xk - xr) * self.twiddles[k].conj() * half;
            // even + i·odd
            scratch[k] = Complex::new(even.re - odd.im, even.im + odd.re);
        }
        plan.inverse(&mut scratch[..h]);
        for (j, z) in scratch[..h].iter().enumerate() {
            out[2 * j] = z.re;
            out[2 * j + 1] = z.im;
        }
    }
}

/// Half spectra of every length-`len` row of a tensor.
#[derive(Debug, Clone)]
pub struct Spectrum<T: Element> {
    /// Leading shape followed by `len/2 + 1` bins.
    pub shape: Vec<usize>,
    pub len: usize,
    pub bins: Vec<Complex<T>>,
}

/// Transforms the last axis; its length must be a power of two.
pub fn rfft<T: Element>(x: &Tensor<T>) -> Result<Spectrum<T>> {
    let len = *x
        .shape()
        .last()
        .ok_or_else(|| Error::invalid("rfft of a scalar"))?;
    let plan = RealFftPlan::new(len)?;
    let nb = plan.bins();
    let mut scratch = vec![Complex::default(); (len / 2).max(1)];
    let mut bins = vec![Complex::default(); x.numel() / len * nb];
    for (row, out) in x.data().chunks_exact(len).zip(bins.chunks_exact_mut(nb)) {
        plan.forward(row, out, &mut scratch);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = nb;
    Ok(Spectrum { shape, len, bins })
}

pub fn irfft<T: Element>(spec: &Spectrum<T>) -> Result<Tensor<T>> {
    let len = spec.len;
    let plan = RealFftPlan::new(len)?;
    let nb = plan.bins();
    if spec.shape.last() != Some(&nb) {
        return Err(Error::shape("irfft", &spec.shape, &[nb]));
    }
    let mut scratch = vec![Complex::default(); (len / 2).max(1)];
    let mut data = vec![T::zero(); spec.bins.len() / nb * len];
    for (row, out) in spec.bins.chunks_exact(nb).zip(data.chunks_exact_mut(len)) {
        plan.inverse(row, out, &mut scratch);
    }
    let mut shape = spec.shape.clone();
    *shape.last_mut().unwrap() = len;
    Tensor::from_vec(data, &shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64]) -> Vec<Complex<f64>> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .fold(Complex::new(0.0, 0.0), |acc, (j, &v)| {
                        let a = -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                        acc + Complex::new(a.cos(), a.sin()) * v
                    })
            })
            .collect()
    }

    #[test]
    fn constant_signal_has_only_dc() {
        let x = Tensor::<f64>::full(&[8], 1.5);
        let s = rfft(&x).unwrap();
        assert_eq!(s.shape, vec![5]);
        assert!((s.bins[0].re - 12.0).abs() < 1e-12);
        for b in &s.bins[1..] {
            assert!(b.norm() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_dft() {
        for n in [1usize, 2, 4, 8, 32] {
            let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) as f64).sin()).collect();
            let s = rfft(&Tensor::from_vec(x.clone(), &[n]).unwrap()).unwrap();
            let reference = naive_dft(&x);
            for k in 0..=n / 2 {
                assert!((s.bins[k] - reference[k]).norm() < 1e-10, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn complex_round_trip() {
        let plan = FftPlan::<f64>::new(16).unwrap();
        let orig: Vec<Complex<f64>> = (0..16)
            .map(|i| Complex::new(i as f64, -(i as f64) * 0.5))
            .collect();
        let mut buf = orig.clone();
        plan.forward(&mut buf);
        plan.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        let x = Tensor::<f32>::zeros(&[12]);
        assert!(matches!(rfft(&x), Err(Error::NonPowerOfTwo(12))));
    }
}
