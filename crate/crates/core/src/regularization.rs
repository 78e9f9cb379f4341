//! Ingredients of the regularized equation: the C^2 cutoff, the truncated
//! drift field `h(x) = (x - m) phi(|x - m| / R)`, the diffusion coefficient
//! `|h|^2 + eps^2`, and mollification of the initial density.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{CboError, Result};
use crate::grid::GridDensity;
use crate::numerics::{norm_sq, trapezoid, CompensatedSum};

/// `(eps, R)`; when `linked`, `R = 1 / eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationParams {
    pub epsilon: f64,
    pub radius: f64,
    #[serde(default)]
    pub linked: bool,
}

impl RegularizationParams {
    pub fn new(epsilon: f64, radius: f64) -> Result<Self> {
        let p = Self {
            epsilon,
            radius,
            linked: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn linked(epsilon: f64) -> Result<Self> {
        let p = Self {
            epsilon,
            radius: 1.0 / epsilon,
            linked: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CboError::param("epsilon", "must be finite and positive"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(CboError::param("radius", "must be finite and positive"));
        }
        if self.linked && self.radius != 1.0 / self.epsilon {
            return Err(CboError::param(
                "radius",
                "linked parameters require radius = 1/epsilon",
            ));
        }
        Ok(())
    }
}

/// The profile `phi` on `[0, inf)`: 1 up to 1, 0 from 2, and the quintic
/// smoothstep bridge `1 - S(s - 1)`, `S(t) = 6t^5 - 15t^4 + 10t^3`, between.
#[derive(Debug, Clone, Copy, Default)]
pub struct CutoffProfile;

impl CutoffProfile {
    #[inline]
    pub fn value(s: f64) -> f64 {
        if s <= 1.0 {
            1.0
        } else if s >= 2.0 {
            0.0
        } else {
            let t = s - 1.0;
            1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
        }
    }

    #[inline]
    pub fn d1(s: f64) -> f64 {
        if s <= 1.0 || s >= 2.0 {
            0.0
        } else {
            let t = s - 1.0;
            -30.0 * t * t * (1.0 - t) * (1.0 - t)
        }
    }

    #[inline]
    pub fn d2(s: f64) -> f64 {
        if s <= 1.0 || s >= 2.0 {
            0.0
        } else {
            let t = s - 1.0;
            -60.0 * t * (2.0 * t - 1.0) * (t - 1.0)
        }
    }

    /// `max |phi'| = 15/8`, attained at `s = 3/2`.
    pub const MAX_D1: f64 = 1.875;
    /// `max |phi''| = 10 / sqrt(3)`, attained at `s = 1 + (3 -+ sqrt 3)/6`.
    pub const MAX_D2: f64 = 5.773_502_691_896_258;
}

/// `phi(|v| / R)`.
#[inline]
pub fn cutoff(v: &[f64], radius: f64) -> f64 {
    CutoffProfile::value(norm_sq(v).sqrt() / radius)
}

/// Writes `h(x) = (x - m) phi(|x - m| / R)` into `out`.
#[inline]
pub fn drift_field_into(x: &[f64], m: &[f64], radius: f64, out: &mut [f64]) {
    let mut r2 = 0.0;
    for k in 0..x.len() {
        out[k] = x[k] - m[k];
        r2 += out[k] * out[k];
    }
    let phi = CutoffProfile::value(r2.sqrt() / radius);
    for o in out.iter_mut() {
        *o *= phi;
    }
}

pub fn drift_field(x: &[f64], m: &[f64], params: &RegularizationParams) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    drift_field_into(x, m, params.radius, &mut out);
    out
}

/// `|h(x)|^2 + eps^2`; the solver multiplies by `sigma^2 / 2`.
pub fn diffusion_coeff(x: &[f64], m: &[f64], params: &RegularizationParams) -> f64 {
    let h = drift_field(x, m, params);
    norm_sq(&h) + params.epsilon * params.epsilon
}

#[inline]
fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

/// `1 / int exp(-1/(1-|x|^2)) dx` over the unit ball, for `d` in {1, 2, 3}.
pub fn mollifier_constant(dim: usize) -> Result<f64> {
    static CONSTANTS: OnceLock<[f64; 3]> = OnceLock::new();
    if !(1..=3).contains(&dim) {
        return Err(CboError::Unsupported(format!("mollifier in dimension {dim}")));
    }
    let c = CONSTANTS.get_or_init(|| {
        let n = 1 << 16;
        // radial integrals with the surface measure of the unit sphere
        let i1 = 2.0 * trapezoid(|r| bump(r * r), 0.0, 1.0, n);
        let i2 = 2.0 * PI * trapezoid(|r| r * bump(r * r), 0.0, 1.0, n);
        let i3 = 4.0 * PI * trapezoid(|r| r * r * bump(r * r), 0.0, 1.0, n);
        [1.0 / i1, 1.0 / i2, 1.0 / i3]
    });
    Ok(c[dim - 1])
}

/// `J_eps(x) = eps^-d J(x / eps)` with unit mass.
pub fn mollifier(x: &[f64], epsilon: f64) -> Result<f64> {
    let d = x.len();
    let c = mollifier_constant(d)?;
    Ok(c * bump(norm_sq(x) / (epsilon * epsilon)) / epsilon.powi(d as i32))
}

/// Weights of `J_eps` averaged against the cell-to-cell overlap kernel.
///
/// For piecewise-constant data, the exact cell average of `rho * J_eps` is
/// `sum_k w_k rho_{i-k}` with `w_k = int J_eps(z) prod_a tri(z_a / dx - k_a) dz`
/// (`tri` the unit hat). The hats form a partition of unity, so the weights
/// sum to one at any resolution. Returned as `(half_span, weights)` with
/// `(2 half_span + 1)^d` entries in row-major order.
fn cell_kernel(dim: usize, dx: f64, epsilon: f64) -> Result<(usize, Vec<f64>)> {
    let half = (epsilon / dx).ceil() as usize;
    let span = 2 * half + 1;
    // nodes on multiples of h, so the hat kinks sit on nodes
    let per_cell = ((64.0 * dx / epsilon).ceil() as usize).clamp(16, 4096);
    let h = dx / per_cell as f64;
    let zmax = (half + 1) * per_cell;
    let c = mollifier_constant(dim)?;
    let eps_d = epsilon.powi(dim as i32);
    let inv_e2 = 1.0 / (epsilon * epsilon);
    let tri = |u: f64| (1.0 - u.abs()).max(0.0);

    let mut weights = vec![0.0; span.pow(dim as u32)];
    let nodes: Vec<f64> = (-(zmax as i64)..=zmax as i64).map(|q| q as f64 * h).collect();
    match dim {
        1 => {
            for (kk, w) in weights.iter_mut().enumerate() {
                let k = kk as f64 - half as f64;
                let mut acc = CompensatedSum::new();
                for &z in &nodes {
                    let j = bump(z * z * inv_e2);
                    if j > 0.0 {
                        acc.add(j * tri(z / dx - k));
                    }
                }
                *w = acc.value() * h * c / eps_d;
            }
        }
        2 => {
            let jv: Vec<Vec<f64>> = nodes
                .iter()
                .map(|&z1| nodes.iter().map(|&z2| bump((z1 * z1 + z2 * z2) * inv_e2)).collect())
                .collect();
            for k1 in 0..span {
                let a1 = k1 as f64 - half as f64;
                for k2 in 0..span {
                    let a2 = k2 as f64 - half as f64;
                    let mut acc = CompensatedSum::new();
                    for (q1, &z1) in nodes.iter().enumerate() {
                        let t1 = tri(z1 / dx - a1);
                        if t1 == 0.0 {
                            continue;
                        }
                        for (q2, &z2) in nodes.iter().enumerate() {
                            let j = jv[q1][q2];
                            if j > 0.0 {
                                acc.add(j * t1 * tri(z2 / dx - a2));
                            }
                        }
                    }
                    weights[k1 * span + k2] = acc.value() * h * h * c / eps_d;
                }
            }
        }
        _ => return Err(CboError::Unsupported(format!("mollification in dimension {dim}"))),
    }
    // the exact weights sum to one; remove the quadrature residue
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok((half, weights))
}

/// Mollifies a grid density with `J_eps`.
///
/// Kernel mass that would land outside the box is folded back by
/// renormalizing each source cell's stencil over its in-box targets, so
/// total mass is preserved exactly and values stay nonnegative.
pub fn mollify_initial(rho0: &GridDensity, epsilon: f64) -> Result<GridDensity> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(CboError::param("epsilon", "must be finite and positive"));
    }
    if rho0.min_value() < 0.0 {
        return Err(CboError::param("rho0", "must be nonnegative"));
    }
    let dim = rho0.dim();
    let n = rho0.cells_per_axis() as i64;
    let (half, w) = cell_kernel(dim, rho0.dx(), epsilon)?;
    let half = half as i64;
    let span = 2 * half + 1;
    let src = rho0.values();
    let mut out = vec![0.0; src.len()];

    match dim {
        1 => {
            for (j, &v) in src.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let j = j as i64;
                let lo = (j - half).max(0);
                let hi = (j + half).min(n - 1);
                let inside: f64 = (lo..=hi).map(|i| w[(i - j + half) as usize]).sum();
                for i in lo..=hi {
                    out[i as usize] += v * w[(i - j + half) as usize] / inside;
                }
            }
        }
        _ => {
            for (flat, &v) in src.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let (j1, j2) = ((flat as i64) / n, (flat as i64) % n);
                let (lo1, hi1) = ((j1 - half).max(0), (j1 + half).min(n - 1));
                let (lo2, hi2) = ((j2 - half).max(0), (j2 + half).min(n - 1));
                let widx = |i1: i64, i2: i64| ((i1 - j1 + half) * span + (i2 - j2 + half)) as usize;
                let mut inside = 0.0;
                for i1 in lo1..=hi1 {
                    for i2 in lo2..=hi2 {
                        inside += w[widx(i1, i2)];
                    }
                }
                for i1 in lo1..=hi1 {
                    for i2 in lo2..=hi2 {
                        out[(i1 * n + i2) as usize] += v * w[widx(i1, i2)] / inside;
                    }
                }
            }
        }
    }
    let mut g = GridDensity::new(dim, rho0.cells_per_axis(), rho0.half_width(), out)?;
    g.time = rho0.time;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{lp_norm, moments_of_density};

    #[test]
    fn cutoff_regions() {
        let r = 4.0;
        assert_eq!(cutoff(&[0.5 * r], r), 1.0);
        assert_eq!(cutoff(&[3.0 * r], r), 0.0);
        assert!((cutoff(&[1.5 * r], r) - 0.5).abs() < 1e-15);
        assert_eq!(cutoff(&[0.0, r], r), 1.0);
        assert_eq!(cutoff(&[0.0, 2.0 * r], r), 0.0);
    }

    #[test]
    fn profile_is_c2_with_stated_bounds() {
        // derivatives vanish at both junctions
        for s in [1.0, 2.0] {
            assert_eq!(CutoffProfile::d1(s), 0.0);
        }
        assert!(CutoffProfile::d2(1.0 + 1e-12).abs() < 1e-9);
        assert!(CutoffProfile::d2(2.0 - 1e-12).abs() < 1e-9);
        let mut m1: f64 = 0.0;
        let mut m2: f64 = 0.0;
        for i in 0..=200_000 {
            let s = 1.0 + i as f64 / 200_000.0;
            let v = CutoffProfile::value(s);
            assert!((0.0..=1.0).contains(&v));
            m1 = m1.max(CutoffProfile::d1(s).abs());
            m2 = m2.max(CutoffProfile::d2(s).abs());
        }
        assert!(m1 <= CutoffProfile::MAX_D1 && m1 > CutoffProfile::MAX_D1 - 1e-9);
        assert!(m2 <= CutoffProfile::MAX_D2 + 1e-12 && m2 > CutoffProfile::MAX_D2 - 1e-6);
        // finite-difference consistency of the analytic derivatives
        for s in [1.1, 1.37, 1.5, 1.8, 1.95] {
            let e = 1e-6;
            let fd1 = (CutoffProfile::value(s + e) - CutoffProfile::value(s - e)) / (2.0 * e);
            let fd2 = (CutoffProfile::d1(s + e) - CutoffProfile::d1(s - e)) / (2.0 * e);
            assert!((fd1 - CutoffProfile::d1(s)).abs() < 1e-6);
            assert!((fd2 - CutoffProfile::d2(s)).abs() < 1e-5);
        }
    }

    #[test]
    fn drift_field_regions() {
        let p = RegularizationParams::new(0.1, 2.0).unwrap();
        let m = [0.3];
        assert_eq!(drift_field(&m, &m, &p), vec![0.0]);
        let x = [0.3 + 0.9 * 2.0];
        assert_eq!(drift_field(&x, &m, &p), vec![x[0] - m[0]]);
        assert_eq!(drift_field(&[0.3 + 2.5 * 2.0], &m, &p), vec![0.0]);
    }

    #[test]
    fn diffusion_coeff_values() {
        let p = RegularizationParams::new(0.5, 3.0).unwrap();
        let m = [1.0, -1.0];
        assert_eq!(diffusion_coeff(&m, &m, &p), 0.25);
        let x = [1.0 + 3.0, -1.0];
        assert!((diffusion_coeff(&x, &m, &p) - (9.0 + 0.25)).abs() < 1e-12);

        let linked = RegularizationParams::linked(0.1).unwrap();
        assert_eq!(linked.radius, 10.0);
        let far = [m[0] + 25.0, m[1]];
        assert!((diffusion_coeff(&far, &m, &linked) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn params_validation() {
        assert!(RegularizationParams::new(0.0, 1.0).is_err());
        assert!(RegularizationParams::new(0.1, -1.0).is_err());
        let bad = RegularizationParams {
            epsilon: 0.1,
            radius: 3.0,
            linked: true,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mollifier_has_unit_mass() {
        // 1-D constant: int_{-1}^{1} exp(-1/(1-x^2)) dx = 0.443993816168079...
        let c1 = mollifier_constant(1).unwrap();
        assert!((1.0 / c1 - 0.443_993_816_168_079_4).abs() < 1e-12, "{}", 1.0 / c1);
        let eps = 0.3;
        let n = 20_000;
        let v = trapezoid(|x| mollifier(&[x], eps).unwrap(), -eps, eps, n);
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mollified_mass_and_norms() {
        let rho0 = GridDensity::uniform(1, 256, 4.0, -1.0, 1.5).unwrap();
        for eps in [0.05, 0.1, 0.3] {
            let r = mollify_initial(&rho0, eps).unwrap();
            assert!((r.mass() - rho0.mass()).abs() <= 1e-10 * rho0.mass());
            assert!(r.min_value() >= 0.0);
            for p in [1.0, 2.0, f64::INFINITY] {
                assert!(lp_norm(&r, p).unwrap() <= lp_norm(&rho0, p).unwrap() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn one_hot_gives_symmetric_bump() {
        let n = 64;
        let g = GridDensity::point_mass(1, n, 4.0, &[0.01]).unwrap();
        let j = g.locate(&[0.01]).unwrap();
        let r = mollify_initial(&g, 8.0 * g.dx()).unwrap();
        let v = r.values();
        for k in 1..=9 {
            assert!((v[j - k] - v[j + k]).abs() <= 1e-15 * v[j]);
        }
        assert!(v[j] > v[j + 1] && v[j + 1] > v[j + 4]);
        assert_eq!(v[j + 9], 0.0);
        assert!((r.mass() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn mollify_two_dimensional() {
        let g = GridDensity::point_mass(2, 32, 2.0, &[0.01, 0.01]).unwrap();
        let r = mollify_initial(&g, 0.4).unwrap();
        assert!((r.mass() - 1.0).abs() < 1e-12);
        let j = g.locate(&[0.01, 0.01]).unwrap();
        let v = r.values();
        assert!((v[j - 1] - v[j + 1]).abs() < 1e-14);
        assert!((v[j - 32] - v[j + 32]).abs() < 1e-14);
        assert!((v[j - 32] - v[j + 1]).abs() < 1e-14);
    }

    #[test]
    fn boundary_mass_is_folded_back() {
        let g = GridDensity::point_mass(1, 32, 1.0, &[-0.99]).unwrap();
        let r = mollify_initial(&g, 0.3).unwrap();
        assert!((r.mass() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn fourth_moment_control() {
        // (|x| + |z|)^4 <= 8 (|x|^4 + |z|^4) with |z| <= eps bounds the
        // continuum ratio by 8; the cell-overlap kernel adds O(dx) spread.
        let rho0 = GridDensity::gaussian(1, 512, 8.0, &[1.0], 0.7).unwrap();
        let m4_0 = moments_of_density(&rho0).m4;
        let mut worst: f64 = 0.0;
        for eps in [0.05, 0.1, 0.2] {
            let r = mollify_initial(&rho0, eps).unwrap();
            let ratio = moments_of_density(&r).m4 / (m4_0 + eps.powi(4));
            worst = worst.max(ratio);
        }
        assert!(worst <= 8.0, "{worst}");
        assert!(worst >= 1.0);
    }

    #[test]
    fn drift_bounds_scale_with_radius() {
        // |h| <= 2R, first differences <= 3, second differences <= 12 / R
        for radius in [1.0, 10.0, 100.0] {
            let m = [0.25];
            let n = 40_000;
            let span = 2.5 * radius;
            let step = 2.0 * span / n as f64;
            let h: Vec<f64> = (0..=n)
                .map(|i| {
                    let x = -span + i as f64 * step + m[0];
                    let mut out = [0.0];
                    drift_field_into(&[x], &m, radius, &mut out);
                    out[0]
                })
                .collect();
            let max_h = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let max_d1 = h.windows(2).fold(0.0f64, |a, w| a.max(((w[1] - w[0]) / step).abs()));
            let max_d2 = h
                .windows(3)
                .fold(0.0f64, |a, w| a.max(((w[2] - 2.0 * w[1] + w[0]) / (step * step)).abs()));
            assert!(max_h <= 2.0 * radius, "{max_h}");
            assert!(max_d1 <= 3.0, "{max_d1}");
            assert!(max_d2 <= 12.0 / radius, "{max_d2} at R={radius}");
        }
    }
}
