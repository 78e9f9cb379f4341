//! Explicit finite-volume solver for
//! `d_t rho = lambda div(h rho) + (sigma^2/2) lap((|h|^2 + eps^2) rho)`
//! on `[-L, L]^d` with zero-flux walls.
//!
//! Advection is first-order upwind on faces, diffusion is the standard
//! `2d + 1` point Laplacian applied to `b rho` with
//! `b = (sigma^2/2)(|h|^2 + eps^2)` at cell centers. The update is assembled
//! as `rho_i (1 - dt out_i) + dt sum_j rate_ji rho_j` with nonnegative
//! rates, so every term is nonnegative once `dt out_i <= 1`.

use rayon::prelude::*;
use serde::Serialize;

use crate::consensus::{evaluate_all, weighted_consensus};
use crate::error::{CboError, Result};
use crate::grid::GridDensity;
use crate::metrics::{h1_seminorm, h2_seminorm, lp_norm, moments_of_density};
use crate::numerics::norm_sq;
use crate::objectives::ObjectiveSpec;
use crate::particles::CBOParams;
use crate::regularization::{drift_field_into, mollify_initial, RegularizationParams};

pub const DEFAULT_CFL_SAFETY: f64 = 0.4;

/// Cells above which per-step loops run on the rayon pool.
const PARALLEL_MIN_CELLS: usize = 16_384;

/// Output cells below this are treated as a scheme violation.
pub const NEGATIVITY_TOLERANCE: f64 = -1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// `lambda`, `sigma` and `alpha` are used; the particle fields are ignored.
    pub cbo: CBOParams,
    pub reg: RegularizationParams,
    pub dim: usize,
    pub half_width: f64,
    pub cells: usize,
    pub cfl_safety: f64,
    pub t_final: f64,
    /// Snapshot spacing; `None` keeps only the initial and final states.
    pub snapshot_interval: Option<f64>,
}

impl SolverConfig {
    /// Validates everything except the position of the consensus point.
    ///
    /// `cfl_safety` may exceed 1 so stability-breach experiments can be run;
    /// positivity is only guaranteed up to 0.5.
    pub fn validate(&self) -> Result<()> {
        self.cbo.validate()?;
        self.reg.validate()?;
        if !(self.dim == 1 || self.dim == 2) {
            return Err(CboError::Unsupported(format!("solver dimension {}", self.dim)));
        }
        if self.cells < 3 {
            return Err(CboError::param("cells", "need at least 3 cells per axis"));
        }
        if self.dim == 2 && self.cells > 256 {
            return Err(CboError::param("cells", "2-D grids are limited to 256 cells per axis"));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(CboError::param("half_width", "must be finite and positive"));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety.is_finite()) {
            return Err(CboError::param("cfl_safety", "must be finite and positive"));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(CboError::param("t_final", "must be finite and nonnegative"));
        }
        if let Some(s) = self.snapshot_interval {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CboError::param("snapshot_interval", "must be finite and positive"));
            }
        }
        let need = self.margin_requirement(0.0);
        if need > self.half_width {
            return Err(CboError::Margin(format!(
                "2R + 4eps = {need} exceeds the half width L = {}",
                self.half_width
            )));
        }
        Ok(())
    }

    /// `2R + |m|_inf + 4 eps`, the half width the cutoff support needs.
    pub fn margin_requirement(&self, m_inf: f64) -> f64 {
        2.0 * self.reg.radius + m_inf + 4.0 * self.reg.epsilon
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    fn check_layout(&self, rho: &GridDensity) -> Result<()> {
        if rho.dim() != self.dim || rho.cells_per_axis() != self.cells || rho.half_width() != self.half_width {
            return Err(CboError::param(
                "rho",
                "grid layout differs from the solver configuration",
            ));
        }
        Ok(())
    }
}

/// `s min(dx / A, dx^2 / (2 d B))`, where `A` bounds the summed face speeds
/// `lambda sum_a max|h_a|` and `B` bounds `b`. Infinite when both vanish.
pub fn cfl_time_step(dx: f64, dim: usize, drift_bound: f64, diffusion_bound: f64, safety: f64) -> f64 {
    let adv = if drift_bound > 0.0 {
        dx / drift_bound
    } else {
        f64::INFINITY
    };
    let dif = if diffusion_bound > 0.0 {
        dx * dx / (2.0 * dim as f64 * diffusion_bound)
    } else {
        f64::INFINITY
    };
    safety * adv.min(dif)
}

/// Geometry plus the time-independent objective values at cell centers.
struct Layout {
    dim: usize,
    n: usize,
    dx: f64,
    centers: Vec<f64>,
    f_values: Vec<f64>,
}

impl Layout {
    fn new(cfg: &SolverConfig, f: &ObjectiveSpec) -> Result<Self> {
        let g = GridDensity::zeros(cfg.dim, cfg.cells, cfg.half_width)?;
        let mut centers = vec![0.0; g.len() * cfg.dim];
        for (k, c) in centers.chunks_exact_mut(cfg.dim).enumerate() {
            g.center_into(k, c);
        }
        let f_values = evaluate_all(&centers, cfg.dim, f)?;
        if let Some(i) = f_values.iter().position(|v| v.is_nan()) {
            return Err(CboError::NanObjective { index: i });
        }
        Ok(Self {
            dim: cfg.dim,
            n: cfg.cells,
            dx: g.dx(),
            centers,
            f_values,
        })
    }

    fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Flat stride and per-axis index of cell `k` along axis `a`.
    #[inline]
    fn axis(&self, k: usize, a: usize) -> (usize, usize) {
        let stride = if self.dim == 1 || a == 1 { 1 } else { self.n };
        (stride, (k / stride) % self.n)
    }

    fn consensus(&self, rho: &[f64], alpha: f64) -> Result<Vec<f64>> {
        Ok(weighted_consensus(&self.centers, self.dim, &self.f_values, Some(rho), alpha)?.point)
    }
}

/// Per-step coefficients for a frozen consensus point.
struct Fields {
    /// `vel[a][k]`: velocity `-lambda h_a` on the upper axis-`a` face of cell
    /// `k` (zero on the wall).
    vel: Vec<Vec<f64>>,
    /// `(sigma^2/2)(|h|^2 + eps^2)` at cell centers.
    b: Vec<f64>,
    drift_bound: f64,
    diffusion_bound: f64,
}

impl Fields {
    fn new(layout: &Layout, m: &[f64], cfg: &SolverConfig) -> Self {
        let dim = layout.dim;
        let len = layout.len();
        let lambda = cfg.cbo.lambda;
        let half_s2 = 0.5 * cfg.cbo.sigma * cfg.cbo.sigma;
        let eps2 = cfg.reg.epsilon * cfg.reg.epsilon;
        let radius = cfg.reg.radius;
        let half_dx = 0.5 * layout.dx;

        let cell_b = |k: usize| {
            let mut h = [0.0; 2];
            drift_field_into(&layout.centers[k * dim..(k + 1) * dim], m, radius, &mut h[..dim]);
            half_s2 * (norm_sq(&h[..dim]) + eps2)
        };
        let face_v = |k: usize, a: usize| {
            let (_, i) = layout.axis(k, a);
            if i + 1 == layout.n {
                return 0.0;
            }
            let mut x = [0.0; 2];
            x[..dim].copy_from_slice(&layout.centers[k * dim..(k + 1) * dim]);
            x[a] += half_dx;
            let mut h = [0.0; 2];
            drift_field_into(&x[..dim], m, radius, &mut h[..dim]);
            -lambda * h[a]
        };
        let (b, vel): (Vec<f64>, Vec<Vec<f64>>) = if len >= PARALLEL_MIN_CELLS {
            (
                (0..len).into_par_iter().map(cell_b).collect(),
                (0..dim)
                    .map(|a| (0..len).into_par_iter().map(|k| face_v(k, a)).collect())
                    .collect(),
            )
        } else {
            (
                (0..len).map(cell_b).collect(),
                (0..dim).map(|a| (0..len).map(|k| face_v(k, a)).collect()).collect(),
            )
        };
        let drift_bound = vel
            .iter()
            .map(|v| v.iter().fold(0.0f64, |acc, u| acc.max(u.abs())))
            .sum();
        let diffusion_bound = b.iter().copied().fold(0.0, f64::max);
        Self {
            vel,
            b,
            drift_bound,
            diffusion_bound,
        }
    }

    fn stable_dt(&self, layout: &Layout, safety: f64) -> f64 {
        cfl_time_step(layout.dx, layout.dim, self.drift_bound, self.diffusion_bound, safety)
    }

    /// One explicit step; returns the new values (possibly with negative
    /// entries, which the caller inspects).
    fn apply(&self, layout: &Layout, rho: &[f64], dt: f64) -> Vec<f64> {
        let n = layout.n;
        let dim = layout.dim;
        let a_coef = dt / layout.dx;
        let d_coef = dt / (layout.dx * layout.dx);
        let cell = |k: usize| {
            let mut outflow = 0.0;
            let mut inflow = 0.0;
            for a in 0..dim {
                let (s, i) = layout.axis(k, a);
                let v = &self.vel[a];
                if i + 1 < n {
                    let up = v[k];
                    outflow += a_coef * up.max(0.0) + d_coef * self.b[k];
                    inflow += a_coef * (-up).max(0.0) * rho[k + s] + d_coef * self.b[k + s] * rho[k + s];
                }
                if i > 0 {
                    let lo = v[k - s];
                    outflow += a_coef * (-lo).max(0.0) + d_coef * self.b[k];
                    inflow += a_coef * lo.max(0.0) * rho[k - s] + d_coef * self.b[k - s] * rho[k - s];
                }
            }
            rho[k] * (1.0 - outflow) + inflow
        };
        if rho.len() >= PARALLEL_MIN_CELLS {
            (0..rho.len()).into_par_iter().map(cell).collect()
        } else {
            (0..rho.len()).map(cell).collect()
        }
    }
}

fn check_output(values: &[f64]) -> Result<f64> {
    let mut min = f64::INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(CboError::NonFiniteDensity { cell: i });
        }
        if v < NEGATIVITY_TOLERANCE {
            return Err(CboError::NegativeDensity { cell: i, value: v });
        }
        min = min.min(v);
    }
    Ok(min)
}

/// CFL step for the current density (consensus computed from `rho`).
pub fn stable_dt(rho: &GridDensity, f: &ObjectiveSpec, cfg: &SolverConfig) -> Result<f64> {
    cfg.validate()?;
    cfg.check_layout(rho)?;
    let layout = Layout::new(cfg, f)?;
    let m = layout.consensus(rho.values(), cfg.cbo.alpha)?;
    Ok(Fields::new(&layout, &m, cfg).stable_dt(&layout, cfg.cfl_safety))
}

/// One step of size `dt`.
pub fn step_density_with_dt(rho: &GridDensity, f: &ObjectiveSpec, cfg: &SolverConfig, dt: f64) -> Result<GridDensity> {
    cfg.validate()?;
    cfg.check_layout(rho)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CboError::param("dt", "must be finite and positive"));
    }
    let layout = Layout::new(cfg, f)?;
    let m = layout.consensus(rho.values(), cfg.cbo.alpha)?;
    let fields = Fields::new(&layout, &m, cfg);
    let values = fields.apply(&layout, rho.values(), dt);
    check_output(&values)?;
    // tolerated tiny negatives are kept, not clamped
    let mut out = rho.clone();
    out.values_mut().copy_from_slice(&values);
    out.time = rho.time + dt;
    Ok(out)
}

/// One step with the CFL time step.
pub fn step_density(rho: &GridDensity, f: &ObjectiveSpec, cfg: &SolverConfig) -> Result<GridDensity> {
    let dt = stable_dt(rho, f, cfg)?;
    step_density_with_dt(rho, f, cfg, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub t: f64,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    pub consensus: Vec<f64>,
    pub m2: f64,
    pub m4: f64,
    pub l2: f64,
    pub linf: f64,
    pub h1: f64,
    pub h2: f64,
}

/// Whole-run extremes, tracked at every step rather than only at snapshots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub initial_mass: f64,
    /// Smallest cell value seen, including a rejected step's output.
    pub min_value: f64,
    /// `max_t |mass(t) - mass(0)| / mass(0)`.
    pub max_mass_drift: f64,
    /// Largest relative mass change of a single step.
    pub max_step_mass_drift: f64,
    /// `sup_t |m(t)|^2`.
    pub max_consensus_sq: f64,
    pub min_dt: f64,
    pub max_dt: f64,
}

/// A solver run in progress, starting from the mollified initial datum.
pub struct PdeRun<'f> {
    cfg: SolverConfig,
    f: &'f ObjectiveSpec,
    layout: Layout,
    rho: GridDensity,
    consensus: Vec<f64>,
    stats: RunStats,
}

impl<'f> PdeRun<'f> {
    pub fn new(rho0: &GridDensity, f: &'f ObjectiveSpec, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.check_layout(rho0)?;
        let mut rho = mollify_initial(rho0, cfg.reg.epsilon)?;
        rho.time = 0.0;
        let layout = Layout::new(cfg, f)?;
        let consensus = layout.consensus(rho.values(), cfg.cbo.alpha)?;
        let m_inf = consensus.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let need = cfg.margin_requirement(m_inf);
        if need > cfg.half_width {
            return Err(CboError::Margin(format!(
                "2R + |m0| + 4eps = {need} exceeds the half width L = {}",
                cfg.half_width
            ))
            .at_step(0));
        }
        let mass = rho.mass();
        let stats = RunStats {
            steps: 0,
            initial_mass: mass,
            min_value: rho.min_value(),
            max_mass_drift: 0.0,
            max_step_mass_drift: 0.0,
            max_consensus_sq: norm_sq(&consensus),
            min_dt: f64::INFINITY,
            max_dt: 0.0,
        };
        Ok(Self {
            cfg: cfg.clone(),
            f,
            layout,
            rho,
            consensus,
            stats,
        })
    }

    pub fn density(&self) -> &GridDensity {
        &self.rho
    }

    pub fn time(&self) -> f64 {
        self.rho.time
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn consensus(&self) -> &[f64] {
        &self.consensus
    }

    pub fn objective(&self) -> &ObjectiveSpec {
        self.f
    }

    pub fn diagnostics(&self) -> Diagnostics {
        let mom = moments_of_density(&self.rho);
        Diagnostics {
            t: self.rho.time,
            mass: mom.mass,
            min: self.rho.min_value(),
            max: self.rho.max_value(),
            consensus: self.consensus.clone(),
            m2: mom.m2,
            m4: mom.m4,
            l2: lp_norm(&self.rho, 2.0).unwrap_or(f64::NAN),
            linf: lp_norm(&self.rho, f64::INFINITY).unwrap_or(f64::NAN),
            h1: h1_seminorm(&self.rho),
            h2: h2_seminorm(&self.rho),
        }
    }

    /// One step of at most `max_dt`; returns the step size taken.
    pub fn step(&mut self, max_dt: f64) -> Result<f64> {
        let k = self.stats.steps + 1;
        let fields = Fields::new(&self.layout, &self.consensus, &self.cfg);
        let dt = fields.stable_dt(&self.layout, self.cfg.cfl_safety).min(max_dt);
        if !(dt > 0.0) {
            return Err(CboError::param("dt", "non-positive time step").at_step(k));
        }
        let before = self.rho.mass();
        let values = fields.apply(&self.layout, self.rho.values(), dt);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if min.is_finite() {
            self.stats.min_value = self.stats.min_value.min(min);
        }
        check_output(&values).map_err(|e| e.at_step(k))?;
        self.rho.values_mut().copy_from_slice(&values);
        self.rho.time += dt;
        self.stats.steps = k;
        self.stats.min_dt = self.stats.min_dt.min(dt);
        self.stats.max_dt = self.stats.max_dt.max(dt);

        let after = self.rho.mass();
        let m0 = self.stats.initial_mass;
        self.stats.max_step_mass_drift = self.stats.max_step_mass_drift.max((after - before).abs() / m0);
        self.stats.max_mass_drift = self.stats.max_mass_drift.max((after - m0).abs() / m0);

        self.consensus = self
            .layout
            .consensus(self.rho.values(), self.cfg.cbo.alpha)
            .map_err(|e| e.at_step(k))?;
        self.stats.max_consensus_sq = self.stats.max_consensus_sq.max(norm_sq(&self.consensus));
        let limit = self.cfg.half_width - 2.0 * self.cfg.reg.epsilon;
        let m_inf = self.consensus.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m_inf > limit {
            return Err(CboError::Margin(format!(
                "consensus point reached |m| = {m_inf}, within 2 eps of the wall"
            ))
            .at_step(k));
        }
        Ok(dt)
    }

    /// Steps until time `t` (reached exactly).
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        let tol = 1e-12 * t.abs().max(1.0);
        while self.rho.time < t - tol {
            let remaining = t - self.rho.time;
            self.step(remaining)?;
            if (self.rho.time - t).abs() <= tol {
                self.rho.time = t;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub snapshots: Vec<GridDensity>,
    pub diagnostics: Vec<Diagnostics>,
    pub stats: RunStats,
}

pub type SnapshotObserver<'o> = dyn FnMut(&GridDensity, &Diagnostics) + 'o;

/// Snapshot times: multiples of the interval below `t_final`, then `t_final`.
pub fn snapshot_times(cfg: &SolverConfig) -> Vec<f64> {
    let mut times = vec![0.0];
    if cfg.t_final == 0.0 {
        return times;
    }
    if let Some(s) = cfg.snapshot_interval {
        let mut k = 1;
        loop {
            let t = k as f64 * s;
            if t >= cfg.t_final * (1.0 - 1e-12) {
                break;
            }
            times.push(t);
            k += 1;
        }
    }
    times.push(cfg.t_final);
    times
}

/// Mollifies `rho0` and integrates to `cfg.t_final`.
pub fn solve(
    rho0: &GridDensity,
    f: &ObjectiveSpec,
    cfg: &SolverConfig,
    observers: &mut [&mut SnapshotObserver<'_>],
) -> Result<Solution> {
    let mut run = PdeRun::new(rho0, f, cfg)?;
    let mut snapshots = Vec::new();
    let mut diagnostics = Vec::new();
    for t in snapshot_times(cfg) {
        run.advance_to(t)?;
        let d = run.diagnostics();
        for obs in observers.iter_mut() {
            obs(run.density(), &d);
        }
        snapshots.push(run.density().clone());
        diagnostics.push(d);
    }
    Ok(Solution {
        snapshots,
        diagnostics,
        stats: run.stats().clone(),
    })
}

/// CSV with one row per cell: centers then value.
pub fn snapshot_csv(rho: &GridDensity) -> String {
    let mut out = String::from(if rho.dim() == 1 { "x,rho\n" } else { "x,y,rho\n" });
    for (k, v) in rho.values().iter().enumerate() {
        for c in rho.center(k) {
            out.push_str(&format!("{c},"));
        }
        out.push_str(&format!("{v}\n"));
    }
    out
}
