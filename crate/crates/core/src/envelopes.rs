//! Explicit Gronwall envelopes for norms and moments of the regularized
//! solution.
//!
//! With `h = (x - m) phi(|x - m| / R)`, `b = |h|^2 + eps^2`, unit-free
//! cutoff constants `D = sup div h` and `Q = sup lap |h|^2` (both independent
//! of `R`), testing the equation against `rho`, `|x|^2` and `|x|^4` gives
//!
//! * `d/dt |rho|_2^2 <= (lambda D + (sigma^2/2) Q) |rho|_2^2`, hence
//!   `|rho(t)|_2 <= exp(K (lambda + sigma^2) t) |rho_0|_2` with
//!   `K = max(D, Q/2) / 2`;
//! * `d/dt M2 <= a M2 + b`, `a = 3 lambda + 2 sigma^2 d`,
//!   `b = ((lambda + 2 sigma^2 d) B + sigma^2 d eps^2) M0`, using
//!   `|h| <= |x| + |m|` and `2|m| sqrt(M2 M0) <= M2 + |m|^2 M0`;
//! * `d/dt M4 <= a4 M4 + b4`, `a4 = 7 lambda + 4 (d + 2) sigma^2`,
//!   `b4 = lambda B^2 M0 + 2 (d + 2) sigma^2 (2B + eps^2) sup M2`, using
//!   Holder and Young on `|m| int |x|^3 rho <= (3/4) M4 + (1/4)|m|^4 M0`;
//!
//! where `M0` is the mass and `B >= sup_t |m(t)|^2`. The consensus point is
//! a convex combination inside the box, so `B = d L^2` is always valid; the
//! run supplies the tighter measured supremum.

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{CboError, Result};
use crate::regularization::CutoffProfile;

/// Relative padding on numerically located suprema.
const SUP_PADDING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffConstants {
    /// `sup div h` (dimensionless).
    pub div_sup: f64,
    /// `sup lap |h|^2` (dimensionless).
    pub lap_sup: f64,
}

fn scan(dim: usize) -> CutoffConstants {
    let d = dim as f64;
    // plateau: div h = d, lap |h|^2 = 2d
    let mut div_sup = d;
    let mut lap_sup = 2.0 * d;
    let n = 400_000;
    for i in 0..=n {
        let s = 1.0 + i as f64 / n as f64;
        let (p, p1, p2) = (CutoffProfile::value(s), CutoffProfile::d1(s), CutoffProfile::d2(s));
        div_sup = div_sup.max(d * p + s * p1);
        // |h|^2 = R^2 g(s), g = s^2 phi^2, lap = g'' + (d - 1) g'/s
        let g1 = 2.0 * s * p * p + 2.0 * s * s * p * p1;
        let g2 = 2.0 * p * p + 8.0 * s * p * p1 + 2.0 * s * s * (p1 * p1 + p * p2);
        lap_sup = lap_sup.max(g2 + (d - 1.0) * g1 / s);
    }
    CutoffConstants {
        div_sup: div_sup * (1.0 + SUP_PADDING),
        lap_sup: lap_sup * (1.0 + SUP_PADDING),
    }
}

pub fn cutoff_constants(dim: usize) -> Result<CutoffConstants> {
    static CACHE: OnceLock<[CutoffConstants; 2]> = OnceLock::new();
    if !(dim == 1 || dim == 2) {
        return Err(CboError::Unsupported(format!("envelopes in dimension {dim}")));
    }
    Ok(CACHE.get_or_init(|| [scan(1), scan(2)])[dim - 1])
}

/// `K (lambda + sigma^2)`, the exponential rate of the L2 envelope.
pub fn l2_rate(dim: usize, lambda: f64, sigma: f64) -> Result<f64> {
    let c = cutoff_constants(dim)?;
    let k = 0.5 * c.div_sup.max(0.5 * c.lap_sup);
    Ok(k * (lambda + sigma * sigma))
}

pub fn l2_envelope(t: f64, l2_initial: f64, dim: usize, lambda: f64, sigma: f64) -> Result<f64> {
    Ok(l2_initial * (l2_rate(dim, lambda, sigma)? * t).exp())
}

/// Solution bound `y(t) <= e^{a t} y(0) + (b/a)(e^{a t} - 1)` of `y' <= a y + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearGronwall {
    pub a: f64,
    pub b: f64,
    pub initial: f64,
}

impl LinearGronwall {
    pub fn at(&self, t: f64) -> f64 {
        let g = (self.a * t).exp();
        let growth = if self.a > 0.0 {
            (self.b / self.a) * (g - 1.0)
        } else {
            self.b * t
        };
        g * self.initial + growth
    }
}

/// Inputs shared by the moment envelopes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentInputs {
    pub dim: usize,
    pub lambda: f64,
    pub sigma: f64,
    /// `0` for the unregularized particle dynamics.
    pub epsilon: f64,
    pub mass: f64,
    /// Upper bound on `|m(t)|^2` over the horizon.
    pub consensus_sq_bound: f64,
}

pub fn second_moment_envelope(p: &MomentInputs, m2_initial: f64) -> LinearGronwall {
    let d = p.dim as f64;
    let s2 = p.sigma * p.sigma;
    LinearGronwall {
        a: 3.0 * p.lambda + 2.0 * s2 * d,
        b: ((p.lambda + 2.0 * s2 * d) * p.consensus_sq_bound + s2 * d * p.epsilon * p.epsilon) * p.mass,
        initial: m2_initial,
    }
}

/// `m2_sup` bounds the second moment over the horizon, e.g. the second
/// moment envelope at the final time.
pub fn fourth_moment_envelope(p: &MomentInputs, m4_initial: f64, m2_sup: f64) -> LinearGronwall {
    let d = p.dim as f64;
    let s2 = p.sigma * p.sigma;
    let bnd = p.consensus_sq_bound;
    LinearGronwall {
        a: 7.0 * p.lambda + 4.0 * (d + 2.0) * s2,
        b: p.lambda * bnd * bnd * p.mass + 2.0 * (d + 2.0) * s2 * (2.0 * bnd + p.epsilon * p.epsilon) * m2_sup,
        initial: m4_initial,
    }
}

/// `exp(d (lambda + sigma^2) t) |rho_0|_1 |rho_0|_inf`.
pub fn linf_envelope(t: f64, dim: usize, lambda: f64, sigma: f64, l1: f64, linf: f64) -> f64 {
    (dim as f64 * (lambda + sigma * sigma) * t).exp() * l1 * linf
}

/// `exp(((p-1)/p) d (lambda + sigma^2) t) |rho_0|_1 |rho_0|_inf^((p-1)/p)`.
pub fn lp_envelope(t: f64, p: f64, dim: usize, lambda: f64, sigma: f64, l1: f64, linf: f64) -> f64 {
    let q = (p - 1.0) / p;
    (q * dim as f64 * (lambda + sigma * sigma) * t).exp() * l1 * linf.powf(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_constants_values() {
        let c1 = cutoff_constants(1).unwrap();
        let c2 = cutoff_constants(2).unwrap();
        assert!((c1.div_sup - 1.0).abs() < 2e-6);
        assert!((c2.div_sup - 2.0).abs() < 3e-6);
        // located independently on a 10^7-point scan
        assert!((c1.lap_sup - 13.7599).abs() < 1e-3, "{}", c1.lap_sup);
        assert!((c2.lap_sup - 12.5778).abs() < 1e-3, "{}", c2.lap_sup);
    }

    #[test]
    fn gronwall_solution_satisfies_ode() {
        let g = LinearGronwall {
            a: 2.0,
            b: 3.0,
            initial: 0.5,
        };
        assert_eq!(g.at(0.0), 0.5);
        let (t, e) = (0.7, 1e-6);
        let deriv = (g.at(t + e) - g.at(t - e)) / (2.0 * e);
        assert!((deriv - (2.0 * g.at(t) + 3.0)).abs() < 1e-6);
        let flat = LinearGronwall {
            a: 0.0,
            b: 3.0,
            initial: 1.0,
        };
        assert_eq!(flat.at(2.0), 7.0);
    }

    #[test]
    fn envelopes_start_at_initial_values() {
        assert_eq!(l2_envelope(0.0, 0.3, 1, 1.0, 1.0).unwrap(), 0.3);
        assert_eq!(linf_envelope(0.0, 1, 1.0, 1.0, 1.0, 2.0), 2.0);
        assert_eq!(lp_envelope(0.0, 2.0, 1, 1.0, 1.0, 1.0, 4.0), 2.0);
        assert!(l2_rate(3, 1.0, 1.0).is_err());
    }
}
