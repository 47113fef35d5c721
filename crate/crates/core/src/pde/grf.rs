//! Gaussian random fields by spectral shaping of white noise.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spectral::{wavenumber, Fft2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    /// Amplitude spectrum falls off as `(|k|² + τ²)^(−decay/2)`, `k = 2πm`.
    pub decay: f64,
    pub tau: f64,
    pub amplitude: f64,
    pub mean_zero: bool,
    pub seed: u64,
}

impl Default for GrfSpec {
    fn default() -> Self {
        let (decay, tau) = (2.5, 7.0);
        GrfSpec {
            decay,
            tau,
            amplitude: tau.powf(0.5 * (2.0 * decay - 2.0)),
            mean_zero: true,
            seed: 0,
        }
    }
}

impl GrfSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        GrfSpec {
            seed,
            ..self.clone()
        }
    }

    /// Standard deviation of Fourier coefficient `(my, mx)`.
    pub fn mode_scale(&self, my: f64, mx: f64) -> f64 {
        let k2 = 4.0 * std::f64::consts::PI.powi(2) * (mx * mx + my * my);
        self.amplitude * (k2 + self.tau * self.tau).powf(-self.decay / 2.0)
    }
}

/// Complex spectrum with Hermitian symmetry `c(−m) = conj(c(m))`.
pub(crate) fn grf_spectrum(spec: &GrfSpec, n: usize) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut coef = vec![Complex64::default(); n * n];
    let mut done = vec![false; n * n];
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for iy in 0..n {
        for ix in 0..n {
            let idx = iy * n + ix;
            if done[idx] {
                continue;
            }
            let mirror = ((n - iy) % n) * n + (n - ix) % n;
            let s = spec.mode_scale(wavenumber(iy, n), wavenumber(ix, n));
            let (a, b): (f64, f64) = (
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            if mirror == idx {
                coef[idx] = Complex64::new(s * a, 0.0);
            } else {
                coef[idx] = Complex64::new(s * a * half, s * b * half);
                coef[mirror] = coef[idx].conj();
            }
            done[idx] = true;
            done[mirror] = true;
        }
    }
    if spec.mean_zero {
        coef[0] = Complex64::default();
    }
    coef
}

/// Real `n × n` field, row-major with `x` along rows.
pub fn sample_grf_2d(spec: &GrfSpec, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::NonPowerOfTwo(n));
    }
    let (field, _) = grf_with_residue(spec, n);
    Ok(field)
}

/// Field plus the largest imaginary part left after the inverse transform.
pub fn grf_with_residue(spec: &GrfSpec, n: usize) -> (Vec<f64>, f64) {
    let mut c = grf_spectrum(spec, n);
    let scale = (n * n) as f64;
    c.iter_mut().for_each(|v| *v *= scale);
    Fft2::new(n).inverse(&mut c);
    let residue = c.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    (c.iter().map(|v| v.re).collect(), residue)
}
