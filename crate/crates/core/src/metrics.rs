//! Moments, norms, the 1-D Wasserstein-2 distance and the weak-form
//! residual of a density time series.

use serde::Serialize;

use crate::consensus::{consensus_of_density, ConsensusParams};
use crate::error::{CboError, Result};
use crate::grid::GridDensity;
use crate::numerics::{norm_sq, CompensatedSum};
use crate::objectives::ObjectiveSpec;
use crate::regularization::{drift_field_into, CutoffProfile, RegularizationParams};

/// Quantile nodes used when the two measures are not equal-size samples.
pub const QUANTILE_NODES: usize = 1 << 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentVector {
    pub m1: Vec<f64>,
    pub m2: f64,
    pub m4: f64,
    pub mass: f64,
}

fn moments_weighted<'a>(points: impl Iterator<Item = (&'a [f64], f64)>, dim: usize) -> MomentVector {
    let mut mass = CompensatedSum::new();
    let mut m1 = vec![CompensatedSum::new(); dim];
    let mut m2 = CompensatedSum::new();
    let mut m4 = CompensatedSum::new();
    for (x, w) in points {
        let r2 = norm_sq(x);
        mass.add(w);
        for k in 0..dim {
            m1[k].add(w * x[k]);
        }
        m2.add(w * r2);
        m4.add(w * r2 * r2);
    }
    MomentVector {
        m1: m1.iter().map(|s| s.value()).collect(),
        m2: m2.value(),
        m4: m4.value(),
        mass: mass.value(),
    }
}

/// Moments of the empirical measure `(1/N) sum delta_{x_i}`.
pub fn moments_of_particles(positions: &[f64], dim: usize) -> Result<MomentVector> {
    if dim == 0 || positions.is_empty() {
        return Err(CboError::Empty);
    }
    let w = 1.0 / (positions.len() / dim) as f64;
    Ok(moments_weighted(positions.chunks_exact(dim).map(|x| (x, w)), dim))
}

/// Midpoint-rule moments of a grid density.
pub fn moments_of_density(rho: &GridDensity) -> MomentVector {
    let dim = rho.dim();
    let vol = rho.cell_volume();
    let centers: Vec<f64> = (0..rho.len()).flat_map(|k| rho.center(k)).collect();
    moments_weighted(
        centers.chunks_exact(dim).zip(rho.values()).map(|(x, &v)| (x, v * vol)),
        dim,
    )
}

/// `(sum rho_i^p dx^d)^(1/p)`, or the largest cell value for `p = inf`.
pub fn lp_norm(rho: &GridDensity, p: f64) -> Result<f64> {
    if p == f64::INFINITY {
        return Ok(rho.values().iter().fold(0.0, |a: f64, v| a.max(v.abs())));
    }
    if !(p >= 1.0) {
        return Err(CboError::param("p", "must be >= 1 or infinite"));
    }
    let s: f64 = rho
        .values()
        .iter()
        .map(|v| v.abs().powf(p))
        .collect::<CompensatedSum>()
        .value();
    Ok((s * rho.cell_volume()).powf(1.0 / p))
}

/// Discrete `|rho|_{H^1}` from forward differences across interior faces.
pub fn h1_seminorm(rho: &GridDensity) -> f64 {
    let n = rho.cells_per_axis();
    let v = rho.values();
    let dx = rho.dx();
    let mut acc = CompensatedSum::new();
    let axes: &[usize] = if rho.dim() == 1 { &[1] } else { &[n, 1] };
    for (k, &vk) in v.iter().enumerate() {
        for &stride in axes {
            let i = (k / stride) % n;
            if i + 1 < n {
                let g = (v[k + stride] - vk) / dx;
                acc.add(g * g);
            }
        }
    }
    (acc.value() * rho.cell_volume()).sqrt()
}

/// Discrete `|rho|_{H^2}`: second central differences on interior cells,
/// plus the mixed difference in 2-D (counted twice, as `d12` and `d21`).
pub fn h2_seminorm(rho: &GridDensity) -> f64 {
    let n = rho.cells_per_axis();
    let v = rho.values();
    let dx2 = rho.dx() * rho.dx();
    let mut acc = CompensatedSum::new();
    if rho.dim() == 1 {
        for i in 1..n - 1 {
            let s = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / dx2;
            acc.add(s * s);
        }
    } else {
        let at = |i: usize, j: usize| v[i * n + j];
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let sxx = (at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j)) / dx2;
                let syy = (at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1)) / dx2;
                let sxy = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1)) / (4.0 * dx2);
                acc.add(sxx * sxx + syy * syy + 2.0 * sxy * sxy);
            }
        }
    }
    (acc.value() * rho.cell_volume()).sqrt()
}

/// A one-dimensional measure for [`wasserstein2_1d`].
#[derive(Debug, Clone, Copy)]
pub enum Measure1d<'a> {
    /// Equal-weight atoms.
    Samples(&'a [f64]),
    /// Piecewise-constant density.
    Grid(&'a GridDensity),
}

enum Quantile {
    Sorted(Vec<f64>),
    Cdf { faces: Vec<f64>, cum: Vec<f64> },
}

impl Quantile {
    fn new(mu: Measure1d<'_>) -> Result<Self> {
        match mu {
            Measure1d::Samples(s) => {
                if s.is_empty() {
                    return Err(CboError::Empty);
                }
                if s.iter().any(|x| !x.is_finite()) {
                    return Err(CboError::param("samples", "must be finite"));
                }
                let mut v = s.to_vec();
                v.sort_by(f64::total_cmp);
                Ok(Quantile::Sorted(v))
            }
            Measure1d::Grid(g) => {
                if g.dim() != 1 {
                    return Err(CboError::Unsupported(format!(
                        "Wasserstein distance in dimension {}",
                        g.dim()
                    )));
                }
                let mass = g.mass();
                if !(mass > 0.0) {
                    return Err(CboError::NonPositiveMass { mass });
                }
                let mut acc = CompensatedSum::new();
                let mut cum = vec![0.0];
                for &v in g.values() {
                    acc.add(v);
                    cum.push(acc.value());
                }
                let total = acc.value();
                cum.iter_mut().for_each(|c| *c /= total);
                let faces = (0..=g.cells_per_axis()).map(|i| g.axis_face(i)).collect();
                Ok(Quantile::Cdf { faces, cum })
            }
        }
    }

    /// Left-continuous inverse CDF at `q` in (0, 1).
    fn at(&self, q: f64) -> f64 {
        match self {
            Quantile::Sorted(v) => {
                let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
                v[idx]
            }
            Quantile::Cdf { faces, cum } => {
                // first cell whose upper cumulative value reaches q
                let i = cum[1..].partition_point(|&c| c < q).min(cum.len() - 2);
                let width = cum[i + 1] - cum[i];
                let frac = if width > 0.0 {
                    ((q - cum[i]) / width).clamp(0.0, 1.0)
                } else {
                    0.5
                };
                faces[i] + frac * (faces[i + 1] - faces[i])
            }
        }
    }
}

/// `W_2` between two 1-D probability measures (each normalized to unit
/// mass). Equal-size samples are matched exactly in sorted order; any other
/// pair is compared on [`QUANTILE_NODES`] midpoint quantiles.
pub fn wasserstein2_1d(mu: Measure1d<'_>, nu: Measure1d<'_>) -> Result<f64> {
    let a = Quantile::new(mu)?;
    let b = Quantile::new(nu)?;
    if let (Quantile::Sorted(x), Quantile::Sorted(y)) = (&a, &b) {
        if x.len() == y.len() {
            let s: CompensatedSum = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).collect();
            return Ok((s.value() / x.len() as f64).sqrt());
        }
    }
    let q = QUANTILE_NODES as f64;
    let s: CompensatedSum = (0..QUANTILE_NODES)
        .map(|k| {
            let t = (k as f64 + 0.5) / q;
            let d = a.at(t) - b.at(t);
            d * d
        })
        .collect();
    Ok((s.value() / q).sqrt())
}

/// Space-time test function `psi(t) g(x) chi(x)`, where
/// `g = exp(-|x - c|^2 / w^2)`, `chi = phi(|x - c| / r)` (support radius
/// `2r`), and `psi` is a smooth bump vanishing at both ends of the time window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BumpTestFunction {
    pub center: Vec<f64>,
    pub width: f64,
    pub radius: f64,
}

impl BumpTestFunction {
    pub fn new(center: Vec<f64>, width: f64, radius: f64) -> Result<Self> {
        if !(width > 0.0 && radius > 0.0) {
            return Err(CboError::param("test function", "width and radius must be positive"));
        }
        Ok(Self { center, width, radius })
    }

    /// `(value, gradient, laplacian)` of the spatial factor at `x`.
    pub fn spatial(&self, x: &[f64], grad: &mut [f64]) -> (f64, f64) {
        let d = x.len() as f64;
        let w2 = self.width * self.width;
        let mut r2 = 0.0;
        for k in 0..x.len() {
            let v = x[k] - self.center[k];
            grad[k] = v;
            r2 += v * v;
        }
        let r = r2.sqrt();
        let s = r / self.radius;
        let chi = CutoffProfile::value(s);
        if chi == 0.0 {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return (0.0, 0.0);
        }
        let g = (-r2 / w2).exp();
        let dchi = CutoffProfile::d1(s);
        let d2chi = CutoffProfile::d2(s);
        // radial parts: g'(r) = -2r/w^2 g, chi'(r) = phi'(s)/R
        let lap_g = (4.0 * r2 / (w2 * w2) - 2.0 * d / w2) * g;
        let (lap_chi, dchi_over_r) = if r > 0.0 {
            let dr = dchi / self.radius;
            (d2chi / (self.radius * self.radius) + (d - 1.0) * dr / r, dr / r)
        } else {
            (0.0, 0.0)
        };
        // grad(g chi) = v (chi (-2/w^2) g + g chi'/r)
        let radial = chi * (-2.0 / w2) * g + g * dchi_over_r;
        // 2 grad g . grad chi = 2 (-2 r/w^2 g)(chi'(r))
        let cross = if r > 0.0 {
            2.0 * (-2.0 * r / w2 * g) * (dchi / self.radius)
        } else {
            0.0
        };
        for gk in grad.iter_mut() {
            *gk *= radial;
        }
        (g * chi, chi * lap_g + cross + g * lap_chi)
    }

    fn inside(&self, rho: &GridDensity) -> bool {
        let l = rho.half_width();
        self.center.len() == rho.dim()
            && self
                .center
                .iter()
                .all(|&c| c - 2.0 * self.radius > -l && c + 2.0 * self.radius < l)
    }
}

/// `exp(1 - 1/(1 - u^2))` on `u` in (-1, 1), with the window mapped onto `[a, b]`.
fn time_window(t: f64, a: f64, b: f64) -> f64 {
    let u = (2.0 * t - a - b) / (b - a);
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// Largest absolute weak-form residual over `test_fns`:
///
/// `| int int d_t rho psi g + lambda (h rho) . grad(psi g) - (sigma^2/2) b rho lap(psi g) dx dt |`
///
/// with `h = x - m` and `b = |x - m|^2`, or, when `reg` is given, the
/// regularized coefficients `h^R` and `|h^R|^2 + eps^2`. Time derivatives are
/// centered differences between snapshots; the time integral is the
/// trapezoid rule over the interior snapshots.
pub fn weak_residual(
    snapshots: &[GridDensity],
    f: &ObjectiveSpec,
    lambda: f64,
    sigma: f64,
    consensus: ConsensusParams,
    reg: Option<&RegularizationParams>,
    test_fns: &[BumpTestFunction],
) -> Result<f64> {
    Ok(weak_residuals(snapshots, f, lambda, sigma, consensus, reg, test_fns)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// Per-test-function residuals (absolute values).
pub fn weak_residuals(
    snapshots: &[GridDensity],
    f: &ObjectiveSpec,
    lambda: f64,
    sigma: f64,
    consensus: ConsensusParams,
    reg: Option<&RegularizationParams>,
    test_fns: &[BumpTestFunction],
) -> Result<Vec<f64>> {
    if snapshots.len() < 3 {
        return Err(CboError::param("snapshots", "need at least 3 snapshots"));
    }
    let first = &snapshots[0];
    if snapshots.iter().any(|s| !s.same_layout(first)) {
        return Err(CboError::param("snapshots", "all snapshots must share one grid"));
    }
    if snapshots.windows(2).any(|w| !(w[1].time > w[0].time)) {
        return Err(CboError::param("snapshots", "times must increase strictly"));
    }
    for (i, phi) in test_fns.iter().enumerate() {
        if !phi.inside(first) {
            return Err(CboError::param(
                "test_fns",
                format!("test function {i} reaches the domain boundary"),
            ));
        }
    }
    let dim = first.dim();
    let vol = first.cell_volume();
    let (t_a, t_b) = (snapshots[0].time, snapshots[snapshots.len() - 1].time);
    let ms: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|s| consensus_of_density(s, f, consensus))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(test_fns.len());
    let mut x = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut h = vec![0.0; dim];
    for phi in test_fns {
        // spatial factor on the grid, shared by all snapshots
        let mut support = Vec::new();
        for k in 0..first.len() {
            first.center_into(k, &mut x);
            let (val, lap) = phi.spatial(&x, &mut grad);
            if val != 0.0 || lap != 0.0 || grad.iter().any(|g| *g != 0.0) {
                support.push((k, val, grad.clone(), lap));
            }
        }
        let mut total = CompensatedSum::new();
        for j in 1..snapshots.len() - 1 {
            let t = snapshots[j].time;
            let psi = time_window(t, t_a, t_b);
            if psi == 0.0 {
                continue;
            }
            let dt_c = snapshots[j + 1].time - snapshots[j - 1].time;
            let weight = 0.5 * dt_c;
            let (prev, cur, next) = (
                snapshots[j - 1].values(),
                snapshots[j].values(),
                snapshots[j + 1].values(),
            );
            let m = &ms[j];
            let mut acc = CompensatedSum::new();
            for (k, val, g, lap) in &support {
                let k = *k;
                first.center_into(k, &mut x);
                let b = match reg {
                    Some(r) => {
                        drift_field_into(&x, m, r.radius, &mut h);
                        norm_sq(&h) + r.epsilon * r.epsilon
                    }
                    None => {
                        for a in 0..dim {
                            h[a] = x[a] - m[a];
                        }
                        norm_sq(&h)
                    }
                };
                let drho = (next[k] - prev[k]) / dt_c;
                let adv: f64 = h.iter().zip(g).map(|(a, b)| a * b).sum();
                acc.add(drho * val + lambda * cur[k] * adv - 0.5 * sigma * sigma * b * cur[k] * lap);
            }
            total.add(weight * psi * acc.value() * vol);
        }
        out.push(total.value().abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::quadratic;

    #[test]
    fn uniform_moments() {
        let g = GridDensity::uniform(1, 4096, 4.0, 0.0, 4.0).unwrap();
        let m = moments_of_density(&g);
        assert!((m.mass - 1.0).abs() < 1e-12);
        assert!((m.m2 - 16.0 / 3.0).abs() < 1e-5);
        assert!((m.m4 - 51.2).abs() < 1e-4);
    }

    #[test]
    fn particle_moments() {
        let m = moments_of_particles(&[0.0], 1).unwrap();
        assert_eq!((m.m1[0], m.m2, m.m4), (0.0, 0.0, 0.0));
        let m = moments_of_particles(&[-1.0, 1.0], 1).unwrap();
        assert_eq!((m.m1[0], m.m2, m.m4, m.mass), (0.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn norms() {
        let g = GridDensity::uniform(1, 128, 4.0, 0.0, 4.0).unwrap();
        assert!((lp_norm(&g, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((lp_norm(&g, 1.0).unwrap() - g.mass()).abs() < 1e-14);
        let one = GridDensity::point_mass(1, 8, 1.0, &[0.1]).unwrap();
        assert_eq!(lp_norm(&one, f64::INFINITY).unwrap(), 4.0);
        assert!(lp_norm(&g, 0.5).is_err());
    }

    #[test]
    fn seminorms_of_smooth_profile() {
        // |sin|_{H1}^2 over [-pi, pi] = pi, |sin|_{H2}^2 = pi
        let n = 2048;
        let g = GridDensity::from_fn(1, n, std::f64::consts::PI, |x| 1.0 + x[0].sin()).unwrap();
        let pi = std::f64::consts::PI;
        assert!((h1_seminorm(&g) - pi.sqrt()).abs() < 1e-3);
        assert!((h2_seminorm(&g) - pi.sqrt()).abs() < 1e-2);
        let flat = GridDensity::uniform(2, 16, 1.0, -1.0, 1.0).unwrap();
        assert_eq!(h1_seminorm(&flat), 0.0);
        assert_eq!(h2_seminorm(&flat), 0.0);
    }

    #[test]
    fn w2_examples() {
        let w = wasserstein2_1d(Measure1d::Samples(&[0.0]), Measure1d::Samples(&[1.0])).unwrap();
        assert_eq!(w, 1.0);
        let s = [0.3, -1.0, 2.0];
        assert_eq!(
            wasserstein2_1d(Measure1d::Samples(&s), Measure1d::Samples(&s)).unwrap(),
            0.0
        );
        let a = GridDensity::uniform(1, 64, 4.0, 0.0, 1.0).unwrap();
        let b = GridDensity::uniform(1, 64, 4.0, 1.0, 2.0).unwrap();
        let w = wasserstein2_1d(Measure1d::Grid(&a), Measure1d::Grid(&b)).unwrap();
        assert!((w - 1.0).abs() < 1e-12, "{w}");
        let two = GridDensity::uniform(2, 8, 1.0, 0.0, 1.0).unwrap();
        assert!(wasserstein2_1d(Measure1d::Grid(&two), Measure1d::Grid(&two)).is_err());
    }

    #[test]
    fn w2_samples_against_grid() {
        let g = GridDensity::uniform(1, 256, 2.0, 0.0, 1.0).unwrap();
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let w = wasserstein2_1d(Measure1d::Samples(&s), Measure1d::Grid(&g)).unwrap();
        assert!(w < 2e-3, "{w}");
    }

    #[test]
    fn test_function_derivatives_match_differences() {
        let phi = BumpTestFunction::new(vec![0.2, -0.1], 0.7, 0.5).unwrap();
        let e = 1e-4;
        let mut g = [0.0; 2];
        let mut scratch = [0.0; 2];
        for x in [[0.3, 0.1], [0.9, -0.3], [0.2, -0.1], [-0.4, 0.35]] {
            let (v, lap) = phi.spatial(&x, &mut g);
            let mut fd_lap = 0.0;
            for a in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += e;
                xm[a] -= e;
                let vp = phi.spatial(&xp, &mut scratch).0;
                let vm = phi.spatial(&xm, &mut scratch).0;
                assert!(((vp - vm) / (2.0 * e) - g[a]).abs() < 1e-6);
                fd_lap += (vp - 2.0 * v + vm) / (e * e);
            }
            assert!((fd_lap - lap).abs() < 1e-4, "{fd_lap} vs {lap}");
        }
    }

    fn frames(g: &GridDensity, times: &[f64]) -> Vec<GridDensity> {
        times
            .iter()
            .map(|&t| {
                let mut s = g.clone();
                s.time = t;
                s
            })
            .collect()
    }

    #[test]
    fn residual_vanishes_for_static_density_without_dynamics() {
        let g = GridDensity::gaussian(1, 128, 4.0, &[0.0], 0.8).unwrap();
        let snaps = frames(&g, &[0.0, 0.5, 1.0, 1.5]);
        let tf = [BumpTestFunction::new(vec![0.3], 0.5, 0.6).unwrap()];
        let q = quadratic(&[0.0]).unwrap();
        let r = weak_residual(&snaps, &q, 0.0, 0.0, ConsensusParams::new(1.0).unwrap(), None, &tf).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn residual_vanishes_off_support() {
        let g = GridDensity::uniform(1, 128, 4.0, -3.5, -2.5).unwrap();
        let snaps = frames(&g, &[0.0, 0.5, 1.0]);
        let tf = [BumpTestFunction::new(vec![2.0], 0.5, 0.5).unwrap()];
        let q = quadratic(&[0.0]).unwrap();
        let r = weak_residual(&snaps, &q, 1.0, 1.0, ConsensusParams::new(1.0).unwrap(), None, &tf).unwrap();
        assert!(r <= 1e-14);
    }

    #[test]
    fn residual_preconditions() {
        let g = GridDensity::uniform(1, 32, 1.0, -0.5, 0.5).unwrap();
        let q = quadratic(&[0.0]).unwrap();
        let p = ConsensusParams::new(1.0).unwrap();
        let tf = [BumpTestFunction::new(vec![0.0], 0.2, 0.2).unwrap()];
        assert!(weak_residual(&frames(&g, &[0.0, 1.0]), &q, 1.0, 1.0, p, None, &tf).is_err());
        let wide = [BumpTestFunction::new(vec![0.0], 0.2, 0.6).unwrap()];
        assert!(weak_residual(&frames(&g, &[0.0, 1.0, 2.0]), &q, 1.0, 1.0, p, None, &wide).is_err());
    }
}
