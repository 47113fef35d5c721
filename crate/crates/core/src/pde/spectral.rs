//! Square periodic grids in Fourier space (`rustfft` backend).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft2 {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    tmp: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            tmp: vec![Complex64::default(); n * n],
        }
    }

    fn transpose(&mut self, data: &mut [Complex64]) {
        let n = self.n;
        for r in 0..n {
            for c in 0..n {
                self.tmp[c * n + r] = data[r * n + c];
            }
        }
        data.copy_from_slice(&self.tmp);
    }

    /// Unnormalized forward transform of a row-major `n × n` block.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.fwd.process(data);
        self.transpose(data);
        self.fwd.process(data);
        self.transpose(data);
    }

    /// Inverse transform including the `1/n²` factor.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.inv.process(data);
        self.transpose(data);
        self.inv.process(data);
        self.transpose(data);
        let s = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }
}

/// Signed integer wavenumber of FFT index `i`.
pub(crate) fn wavenumber(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}
