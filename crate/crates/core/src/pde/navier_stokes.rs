//! Incompressible 2D Navier–Stokes in vorticity form on the periodic unit
//! square: `ω_t + u·∇ω = νΔω + f`, `u = ∇⊥ψ`, `−Δψ = ω`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spectral::{wavenumber, Fft2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forcing {
    None,
    /// `0.1 (sin 2π(x+y) + cos 2π(x+y))`
    Standard,
}

impl Forcing {
    pub fn value(self, x: f64, y: f64) -> f64 {
        match self {
            Forcing::None => 0.0,
            Forcing::Standard => {
                let a = 2.0 * std::f64::consts::PI * (x + y);
                0.1 * (a.sin() + a.cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavierStokesConfig {
    pub nu: f64,
    pub n: usize,
    pub t_final: f64,
    pub dt: f64,
    /// Time between stored snapshots; must be a whole number of steps.
    pub record_interval: f64,
    pub forcing: Forcing,
}

impl Default for NavierStokesConfig {
    fn default() -> Self {
        NavierStokesConfig {
            nu: 1e-3,
            n: 64,
            t_final: 10.0,
            dt: 5e-3,
            record_interval: 1.0,
            forcing: Forcing::Standard,
        }
    }
}

impl NavierStokesConfig {
    pub fn steps_per_record(&self) -> Result<usize> {
        let r = self.record_interval / self.dt;
        let k = r.round();
        if k < 1.0 || (r - k).abs() > 1e-6 * k {
            return Err(Error::invalid(format!(
                "navier-stokes: record interval {} is not a multiple of dt {}",
                self.record_interval, self.dt
            )));
        }
        Ok(k as usize)
    }

    pub fn records(&self) -> Result<usize> {
        let r = self.t_final / self.record_interval;
        let k = r.round();
        if (r - k).abs() > 1e-6 * k.max(1.0) {
            return Err(Error::invalid(
                "navier-stokes: t_final is not a multiple of the record interval",
            ));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || !self.n.is_power_of_two() {
            return Err(Error::NonPowerOfTwo(self.n));
        }
        if !(self.nu >= 0.0 && self.dt > 0.0 && self.t_final > 0.0) {
            return Err(Error::invalid(
                "navier-stokes: need nu >= 0, dt > 0, t_final > 0",
            ));
        }
        self.steps_per_record()?;
        self.records()?;
        Ok(())
    }
}

/// Pseudo-spectral stepper: Heun for advection and forcing, Crank–Nicolson
/// for viscosity, 2/3-rule dealiasing of the product.
pub struct NavierStokesSolver {
    cfg: NavierStokesConfig,
    fft: Fft2,
    kx: Vec<f64>,
    ky: Vec<f64>,
    /// `4π²|m|²`
    lap: Vec<f64>,
    keep: Vec<bool>,
    forcing: Vec<Complex64>,
    bufs: [Vec<Complex64>; 4],
}

impl NavierStokesSolver {
    pub fn new(cfg: NavierStokesConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n;
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut kx = vec![0.0; n * n];
        let mut ky = vec![0.0; n * n];
        let mut lap = vec![0.0; n * n];
        let mut keep = vec![false; n * n];
        let cut = n as f64 / 3.0;
        for iy in 0..n {
            for ix in 0..n {
                let (my, mx) = (wavenumber(iy, n), wavenumber(ix, n));
                let i = iy * n + ix;
                // derivative of the unpaired Nyquist mode is taken as zero
                kx[i] = if 2 * ix == n { 0.0 } else { two_pi * mx };
                ky[i] = if 2 * iy == n { 0.0 } else { two_pi * my };
                lap[i] = two_pi * two_pi * (mx * mx + my * my);
                keep[i] = mx.abs() < cut && my.abs() < cut;
            }
        }
        let mut fft = Fft2::new(n);
        let mut forcing: Vec<Complex64> = (0..n * n)
            .map(|i| {
                Complex64::new(
                    cfg.forcing
                        .value((i % n) as f64 / n as f64, (i / n) as f64 / n as f64),
                    0.0,
                )
            })
            .collect();
        fft.forward(&mut forcing);
        let zero = vec![Complex64::default(); n * n];
        Ok(NavierStokesSolver {
            cfg,
            fft,
            kx,
            ky,
            lap,
            keep,
            forcing,
            bufs: [zero.clone(), zero.clone(), zero.clone(), zero],
        })
    }

    pub fn config(&self) -> &NavierStokesConfig {
        &self.cfg
    }

    /// Dealiased spectrum of `u·∇ω` and the peak speed.
    fn advection(&mut self, w: &[Complex64]) -> (Vec<Complex64>, f64) {
        let n2 = w.len();
        let i = Complex64::new(0.0, 1.0);
        let [u, v, wx, wy] = &mut self.bufs;
        for j in 0..n2 {
            let psi = if self.lap[j] > 0.0 {
                w[j] / self.lap[j]
            } else {
                Complex64::default()
            };
            u[j] = i * self.ky[j] * psi;
            v[j] = -i * self.kx[j] * psi;
            wx[j] = i * self.kx[j] * w[j];
            wy[j] = i * self.ky[j] * w[j];
        }
        for b in self.bufs.iter_mut() {
            self.fft.inverse(b);
        }
        let [u, v, wx, wy] = &self.bufs;
        let mut speed: f64 = 0.0;
        let mut nl: Vec<Complex64> = (0..n2)
            .map(|j| {
                speed = speed.max(u[j].re.abs()).max(v[j].re.abs());
                Complex64::new(u[j].re * wx[j].re + v[j].re * wy[j].re, 0.0)
            })
            .collect();
        self.fft.forward(&mut nl);
        nl.iter_mut().zip(&self.keep).for_each(|(c, k)| {
            if !k {
                *c = Complex64::default();
            }
        });
        (nl, speed)
    }

    fn check(&self, step: usize, speed: f64) -> Result<()> {
        let cfl = speed * self.cfg.dt * self.cfg.n as f64;
        if !cfl.is_finite() {
            return Err(Error::Unstable {
                step,
                reason: "non-finite velocity".into(),
            });
        }
        if cfl > 1.0 {
            return Err(Error::Unstable {
                step,
                reason: format!("CFL number {cfl:.3} exceeds 1"),
            });
        }
        Ok(())
    }

    /// Advances the spectrum `w` by one step.
    pub fn step(&mut self, w: &mut [Complex64], step: usize) -> Result<()> {
        let dt = self.cfg.dt;
        let nu = self.cfg.nu;
        let (f1, speed) = self.advection(w);
        self.check(step, speed)?;
        let mut tilde = vec![Complex64::default(); w.len()];
        for j in 0..w.len() {
            let a = 0.5 * dt * nu * self.lap[j];
            tilde[j] = ((1.0 - a) * w[j] + dt * (self.forcing[j] - f1[j])) / (1.0 + a);
        }
        let (f2, speed) = self.advection(&tilde);
        self.check(step, speed)?;
        for j in 0..w.len() {
            let a = 0.5 * dt * nu * self.lap[j];
            w[j] =
                ((1.0 - a) * w[j] + dt * self.forcing[j] - 0.5 * dt * (f1[j] + f2[j])) / (1.0 + a);
        }
        w[0] = Complex64::default();
        if w.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Unstable {
                step,
                reason: "non-finite vorticity".into(),
            });
        }
        Ok(())
    }

    pub fn to_spectrum(&mut self, field: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut c);
        c
    }

    pub fn to_field(&mut self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut c = spectrum.to_vec();
        self.fft.inverse(&mut c);
        c.iter().map(|v| v.re).collect()
    }

    /// Snapshots at `t = 0, Δ, …, t_final`.
    pub fn run(&mut self, omega0: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = self.cfg.n;
        if omega0.len() != n * n {
            return Err(Error::invalid(format!(
                "navier-stokes: omega0 has {} values, expected {}",
                omega0.len(),
                n * n
            )));
        }
        let mean = omega0.iter().sum::<f64>() / (n * n) as f64;
        if mean.abs() > 1e-8 * omega0.iter().map(|v| v.abs()).fold(1.0, f64::max) {
            return Err(Error::invalid(format!(
                "navier-stokes: initial vorticity has mean {mean:e}"
            )));
        }
        let per = self.cfg.steps_per_record()?;
        let records = self.cfg.records()?;
        let mut w = self.to_spectrum(omega0);
        w[0] = Complex64::default();
        let mut out = Vec::with_capacity(records + 1);
        out.push(self.to_field(&w));
        let mut step = 0;
        for _ in 0..records {
            for _ in 0..per {
                step += 1;
                self.step(&mut w, step)?;
            }
            out.push(self.to_field(&w));
        }
        Ok(out)
    }
}

pub fn solve_navier_stokes(omega0: &[f64], cfg: &NavierStokesConfig) -> Result<Vec<Vec<f64>>> {
    NavierStokesSolver::new(cfg.clone())?.run(omega0)
}

/// Kinetic energy `½⟨|u|²⟩` of a vorticity field.
pub fn energy(omega: &[f64], n: usize) -> f64 {
    let mut fft = Fft2::new(n);
    let mut c: Vec<Complex64> = omega.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.forward(&mut c);
    let two_pi = 2.0 * std::f64::consts::PI;
    let norm = (n * n) as f64;
    let mut e = 0.0;
    for iy in 0..n {
        for ix in 0..n {
            let (my, mx) = (wavenumber(iy, n), wavenumber(ix, n));
            let k2 = two_pi * two_pi * (mx * mx + my * my);
            if k2 > 0.0 {
                e += (c[iy * n + ix] / norm).norm_sqr() / k2;
            }
        }
    }
    0.5 * e
}

/// Enstrophy `½⟨ω²⟩`.
pub fn enstrophy(omega: &[f64]) -> f64 {
    0.5 * omega.iter().map(|v| v * v).sum::<f64>() / omega.len() as f64
}

/// Keeps every `stride`-th point in both directions.
pub fn subsample(field: &[f64], n: usize, stride: usize) -> Vec<f64> {
    let m = n / stride;
    (0..m * m)
        .map(|i| field[(i / m) * stride * n + (i % m) * stride])
        .collect()
}
