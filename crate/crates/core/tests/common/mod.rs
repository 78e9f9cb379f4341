//! Reference implementations kept independent of the library internals.
#![allow(dead_code, clippy::needless_range_loop)]

use cbo_lab::particles::CBOParams;
use cbo_lab::solver::{SolverConfig, DEFAULT_CFL_SAFETY};
use cbo_lab::RegularizationParams;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Quintic smoothstep cutoff written out directly.
fn phi(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let t = s - 1.0;
        1.0 - (6.0 * t.powi(5) - 15.0 * t.powi(4) + 10.0 * t.powi(3))
    }
}

pub struct DenseInstance {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub radius: f64,
    pub half_width: f64,
    pub center: f64,
    pub rho: Vec<f64>,
}

impl DenseInstance {
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.rho.len() as f64
    }

    fn x(&self, i: f64) -> f64 {
        -self.half_width + i * self.dx()
    }

    /// Consensus for `f(x) = (x - center)^2` by direct summation.
    pub fn consensus(&self) -> f64 {
        let n = self.rho.len();
        let f: Vec<f64> = (0..n).map(|i| (self.x(i as f64 + 0.5) - self.center).powi(2)).collect();
        let fmin = (0..n)
            .filter(|&i| self.rho[i] > 0.0)
            .map(|i| f[i])
            .fold(f64::INFINITY, f64::min);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let w = self.rho[i] * (-self.alpha * (f[i] - fmin)).exp();
            num += w * self.x(i as f64 + 0.5);
            den += w;
        }
        num / den
    }

    fn h(&self, x: f64, m: f64) -> f64 {
        (x - m) * phi((x - m).abs() / self.radius)
    }

    /// Full explicit update matrix in flux form, plus the CFL step.
    pub fn matrix(&self) -> (Vec<Vec<f64>>, f64) {
        let n = self.rho.len();
        let dx = self.dx();
        let m = self.consensus();
        let b: Vec<f64> = (0..n)
            .map(|i| {
                let h = self.h(self.x(i as f64 + 0.5), m);
                0.5 * self.sigma * self.sigma * (h * h + self.epsilon * self.epsilon)
            })
            .collect();
        // velocity on face i + 1/2, between cells i and i + 1
        let u: Vec<f64> = (0..n - 1)
            .map(|i| -self.lambda * self.h(self.x(i as f64 + 1.0), m))
            .collect();
        let umax = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let bmax = b.iter().fold(0.0f64, |a, v| a.max(*v));
        let mut dt = f64::INFINITY;
        if umax > 0.0 {
            dt = dt.min(dx / umax);
        }
        if bmax > 0.0 {
            dt = dt.min(dx * dx / (2.0 * bmax));
        }
        dt *= 0.4;

        let c = dt / dx;
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for i in 0..n - 1 {
            // flux G = u+ rho_i - u- rho_{i+1} - (b_{i+1} rho_{i+1} - b_i rho_i)/dx
            let gi = u[i].max(0.0) + b[i] / dx;
            let gj = -(-u[i]).max(0.0) - b[i + 1] / dx;
            a[i][i] -= c * gi;
            a[i][i + 1] -= c * gj;
            a[i + 1][i] += c * gi;
            a[i + 1][i + 1] += c * gj;
        }
        (a, dt)
    }

    pub fn step(&self) -> (Vec<f64>, f64) {
        let (a, dt) = self.matrix();
        let out = a
            .iter()
            .map(|row| row.iter().zip(&self.rho).map(|(x, y)| x * y).sum())
            .collect();
        (out, dt)
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> DenseInstance {
    let epsilon = rng.random_range(0.05..1.0);
    let radius = rng.random_range(0.3..3.0);
    DenseInstance {
        lambda: rng.random_range(0.1..2.0),
        sigma: rng.random_range(0.0..2.0),
        alpha: rng.random_range(0.5..50.0),
        epsilon,
        radius,
        half_width: 2.0 * radius + 4.0 * epsilon + rng.random_range(0.5..3.0),
        center: rng.random_range(-1.0..1.0),
        rho: (0..16).map(|_| rng.random_range(0.0..2.0)).collect(),
    }
}

pub fn solver_config(inst: &DenseInstance) -> SolverConfig {
    SolverConfig {
        cbo: CBOParams {
            lambda: inst.lambda,
            sigma: inst.sigma,
            alpha: inst.alpha,
            dt: 0.01,
            t_final: 1.0,
            n_particles: 1,
            seed: 0,
        },
        reg: RegularizationParams::new(inst.epsilon, inst.radius).unwrap(),
        dim: 1,
        half_width: inst.half_width,
        cells: inst.rho.len(),
        cfl_safety: DEFAULT_CFL_SAFETY,
        t_final: 1.0,
        snapshot_interval: None,
    }
}
