//! `u_t = ν u_xx + ρ u(1 − u)` on the periodic unit interval.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReactionConfig {
    pub nu: f64,
    pub rho: f64,
    pub nx: usize,
    pub nt: usize,
    pub t_final: f64,
}

impl Default for DiffusionReactionConfig {
    fn default() -> Self {
        DiffusionReactionConfig {
            nu: 0.5,
            rho: 1.0,
            nx: 256,
            nt: 200,
            t_final: 1.0,
        }
    }
}

impl DiffusionReactionConfig {
    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0 && self.rho >= 0.0) {
            return Err(Error::invalid(format!(
                "diffusion-reaction: nu={} and rho={} must be non-negative",
                self.nu, self.rho
            )));
        }
        if self.nx < 8 || self.nt == 0 || !(self.t_final > 0.0) {
            return Err(Error::invalid(
                "diffusion-reaction: need nx >= 8, nt >= 1 and t_final > 0",
            ));
        }
        if self.dt() * self.rho >= 0.5 {
            return Err(Error::Unstable {
                step: 0,
                reason: format!(
                    "reaction step dt*rho = {} must stay below 0.5",
                    self.dt() * self.rho
                ),
            });
        }
        Ok(())
    }
}

/// Solves `(1 + 2c) x_i − c (x_{i−1} + x_{i+1}) = d_i` with periodic wrap via
/// Thomas elimination plus a Sherman–Morrison correction for the corners.
struct PeriodicTridiagonal {
    n: usize,
    /// Forward-sweep factors of the modified (non-periodic) system.
    cprime: Vec<f64>,
    denom: Vec<f64>,
    off: f64,
    gamma: f64,
    /// Solution of the modified system for the correction vector.
    z: Vec<f64>,
}

impl PeriodicTridiagonal {
    fn new(n: usize, c: f64) -> Self {
        let (b, a) = (1.0 + 2.0 * c, -c);
        let gamma = -b;
        let mut diag = vec![b; n];
        diag[0] = b - gamma;
        diag[n - 1] = b - a * a / gamma;
        let mut cprime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = diag[0];
        cprime[0] = a / denom[0];
        for i in 1..n {
            denom[i] = diag[i] - a * cprime[i - 1];
            cprime[i] = a / denom[i];
        }
        let mut sys = PeriodicTridiagonal {
            n,
            cprime,
            denom,
            off: a,
            gamma,
            z: Vec::new(),
        };
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = a;
        sys.z = sys.thomas(&u);
        sys
    }

    fn thomas(&self, d: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        y[0] = d[0] / self.denom[0];
        for i in 1..n {
            y[i] = (d[i] - self.off * y[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            y[i] -= self.cprime[i] * y[i + 1];
        }
        y
    }

    fn solve(&self, d: &[f64]) -> Vec<f64> {
        let n = self.n;
        let y = self.thomas(d);
        let vy = y[0] + self.off * y[n - 1] / self.gamma;
        let vz = self.z[0] + self.off * self.z[n - 1] / self.gamma;
        let f = vy / (1.0 + vz);
        y.iter().zip(&self.z).map(|(yi, zi)| yi - f * zi).collect()
    }
}

/// Exact solution of `u' = ρ u (1 − u)` after time `dt`.
pub fn logistic(u: f64, rho: f64, dt: f64) -> f64 {
    let e = (rho * dt).exp();
    u * e / (1.0 - u + u * e)
}

/// Strang splitting: Crank–Nicolson diffusion half step, exact reaction step,
/// diffusion half step. Returns `nt + 1` rows from `t = 0` to `t_final`.
pub fn solve_diffusion_reaction(
    u0: &[f64],
    cfg: &DiffusionReactionConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if u0.len() != cfg.nx {
        return Err(Error::invalid(format!(
            "diffusion-reaction: u0 has {} points, expected {}",
            u0.len(),
            cfg.nx
        )));
    }
    let dt = cfg.dt();
    let dx = 1.0 / cfg.nx as f64;
    // half step: (I − c L) u⁺ = (I + c L) u with c = ν (dt/2) / (2 dx²)
    let c = cfg.nu * 0.5 * dt / (2.0 * dx * dx);
    let sys = PeriodicTridiagonal::new(cfg.nx, c);
    let n = cfg.nx;
    let half = |u: &[f64]| -> Vec<f64> {
        if c == 0.0 {
            return u.to_vec();
        }
        let rhs: Vec<f64> = (0..n)
            .map(|i| u[i] + c * (u[(i + n - 1) % n] - 2.0 * u[i] + u[(i + 1) % n]))
            .collect();
        sys.solve(&rhs)
    };
    let mut traj = Vec::with_capacity(cfg.nt + 1);
    traj.push(u0.to_vec());
    let mut u = u0.to_vec();
    for step in 1..=cfg.nt {
        u = half(&u);
        u.iter_mut().for_each(|v| *v = logistic(*v, cfg.rho, dt));
        u = half(&u);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable {
                step,
                reason: "non-finite value in diffusion-reaction state".into(),
            });
        }
        traj.push(u.clone());
    }
    Ok(traj)
}

/// Random Fourier series with `1/k` amplitudes, affinely mapped onto
/// `[0.05, 0.95]`. A flat draw maps to the constant 0.5.
pub fn sample_initial_condition_1d(seed: u64, nx: usize, modes: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(f64, f64)> = (0..modes.max(1))
        .map(|_| {
            (
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        })
        .collect();
    rescale_series(&coeffs, nx)
}

pub(crate) fn rescale_series(coeffs: &[(f64, f64)], nx: usize) -> Vec<f64> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let raw: Vec<f64> = (0..nx)
        .map(|i| {
            let x = i as f64 / nx as f64;
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let k = (k + 1) as f64;
                    (a * (two_pi * k * x).cos() + b * (two_pi * k * x).sin()) / k
                })
                .sum()
        })
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12) {
        return vec![0.5; nx];
    }
    raw.iter()
        .map(|v| 0.05 + 0.9 * (v - lo) / (hi - lo))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_solver_inverts_its_matrix() {
        let n = 11;
        let c = 3.7;
        let sys = PeriodicTridiagonal::new(n, c);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).sin() + 0.2).collect();
        let d: Vec<f64> = (0..n)
            .map(|i| (1.0 + 2.0 * c) * x[i] - c * (x[(i + n - 1) % n] + x[(i + 1) % n]))
            .collect();
        let got = sys.solve(&d);
        got.iter()
            .zip(&x)
            .for_each(|(a, b)| assert!((a - b).abs() < 1e-12));
    }

    #[test]
    fn degenerate_draw_is_constant_half() {
        assert_eq!(rescale_series(&[(0.0, 0.0)], 16), vec![0.5; 16]);
    }

    #[test]
    fn stiff_reaction_step_rejected() {
        let cfg = DiffusionReactionConfig {
            nt: 2,
            rho: 1.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Unstable { .. })));
    }
}
