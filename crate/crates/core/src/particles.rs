//! Euler-Maruyama simulation of the interacting particle system
//! `dX = -lambda (X - m) dt + sigma |X - m| dB`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{particle_consensus, ConsensusParams};
use crate::error::{CboError, Result};
use crate::grid::GridDensity;
use crate::numerics::{norm_sq, CompensatedSum};
use crate::objectives::ObjectiveSpec;
use crate::regularization::{drift_field_into, RegularizationParams};

/// Below this many coordinates a step runs on the calling thread.
const PARALLEL_MIN_COORDS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CBOParams {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub dt: f64,
    pub t_final: f64,
    pub n_particles: usize,
    pub seed: u64,
}

impl CBOParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CboError::param("lambda", "must be finite and nonnegative"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(CboError::param("sigma", "must be finite and nonnegative"));
        }
        self.consensus().validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CboError::param("dt", "must be finite and positive"));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(CboError::param("t_final", "must be finite and nonnegative"));
        }
        if self.t_final > 0.0 && self.dt > self.t_final {
            return Err(CboError::param("dt", "must not exceed t_final"));
        }
        if self.n_particles == 0 {
            return Err(CboError::param("n_particles", "need at least one particle"));
        }
        Ok(())
    }

    pub fn consensus(&self) -> ConsensusParams {
        ConsensusParams { alpha: self.alpha }
    }

    /// Number of steps to reach `t_final`: `ceil(T / dt)`, ignoring a
    /// rounding excess of a few ulps in the ratio.
    pub fn n_steps(&self) -> usize {
        if self.t_final == 0.0 {
            return 0;
        }
        let k = self.t_final / self.dt;
        let r = k.round();
        if (k - r).abs() <= 1e-9 * r.max(1.0) {
            r as usize
        } else {
            k.ceil() as usize
        }
    }
}

/// Initial law for the particles.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    /// Independent `U(low, high)` coordinates.
    Uniform { low: f64, high: f64 },
    /// Isotropic normal.
    Gaussian { mean: Vec<f64>, sd: f64 },
    /// Piecewise-constant density: a cell drawn by mass, then uniform inside it.
    Grid(GridDensity),
}

impl Sampler {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Sampler::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(CboError::param("sampler", "uniform needs finite low < high"));
                }
            }
            Sampler::Gaussian { mean, sd } => {
                if mean.len() != dim {
                    return Err(CboError::DimensionMismatch {
                        expected: dim,
                        got: mean.len(),
                    });
                }
                if !(*sd > 0.0 && sd.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
                    return Err(CboError::param("sampler", "gaussian needs finite mean and sd > 0"));
                }
            }
            Sampler::Grid(g) => {
                if g.dim() != dim {
                    return Err(CboError::DimensionMismatch {
                        expected: dim,
                        got: g.dim(),
                    });
                }
                let mass = g.mass();
                if !(mass > 0.0) {
                    return Err(CboError::NonPositiveMass { mass });
                }
            }
        }
        Ok(())
    }
}

/// Independent stream for particle `index`: one ChaCha key per seed, one
/// stream id per particle, so draws never depend on scheduling.
pub fn particle_stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<f64>,
    pub time: f64,
    streams: Vec<ChaCha8Rng>,
}

impl ParticleEnsemble {
    /// Wraps given positions; streams are derived from `seed`.
    pub fn from_positions(positions: Vec<f64>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || positions.is_empty() {
            return Err(CboError::Empty);
        }
        if !positions.len().is_multiple_of(dim) {
            return Err(CboError::DimensionMismatch {
                expected: dim * positions.len().div_ceil(dim),
                got: positions.len(),
            });
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(CboError::NonFinitePosition { particle: i / dim });
        }
        let n = positions.len() / dim;
        Ok(Self {
            dim,
            positions,
            time: 0.0,
            streams: (0..n).map(|i| particle_stream(seed, i)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    /// Flat row-major positions, `dim` coordinates per particle.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Mean squared distance to the ensemble mean.
    pub fn variance(&self) -> f64 {
        let n = self.len() as f64;
        let mean: Vec<f64> = (0..self.dim)
            .map(|k| {
                self.positions
                    .iter()
                    .skip(k)
                    .step_by(self.dim)
                    .copied()
                    .collect::<CompensatedSum>()
                    .value()
                    / n
            })
            .collect();
        let ss: CompensatedSum = self
            .positions
            .chunks_exact(self.dim)
            .map(|x| x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        ss.value() / n
    }

    /// Largest pairwise distance bound: the diagonal of the bounding box.
    pub fn diameter(&self) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.dim {
            let it = self.positions.iter().skip(k).step_by(self.dim);
            let lo = it.clone().copied().fold(f64::INFINITY, f64::min);
            let hi = it.copied().fold(f64::NEG_INFINITY, f64::max);
            acc += (hi - lo) * (hi - lo);
        }
        acc.sqrt()
    }
}

/// Draws `n_particles` i.i.d. points from `sampler`, particle `i` from its
/// own stream.
pub fn init_ensemble(sampler: &Sampler, params: &CBOParams, dim: usize) -> Result<ParticleEnsemble> {
    if params.n_particles == 0 || dim == 0 {
        return Err(CboError::Empty);
    }
    sampler.validate(dim)?;
    let cdf = match sampler {
        Sampler::Grid(g) => {
            let mut acc = CompensatedSum::new();
            let mut c: Vec<f64> = g
                .values()
                .iter()
                .map(|&v| {
                    acc.add(v);
                    acc.value()
                })
                .collect();
            let total = acc.value();
            c.iter_mut().for_each(|v| *v /= total);
            c
        }
        _ => Vec::new(),
    };
    let mut streams: Vec<ChaCha8Rng> = (0..params.n_particles)
        .map(|i| particle_stream(params.seed, i))
        .collect();
    let mut positions = vec![0.0; params.n_particles * dim];
    for (x, rng) in positions.chunks_exact_mut(dim).zip(streams.iter_mut()) {
        match sampler {
            Sampler::Uniform { low, high } => {
                for v in x.iter_mut() {
                    *v = rng.random_range(*low..*high);
                }
            }
            Sampler::Gaussian { mean, sd } => {
                for (v, mu) in x.iter_mut().zip(mean) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = mu + sd * z;
                }
            }
            Sampler::Grid(g) => {
                let u: f64 = rng.random();
                let cell = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                g.center_into(cell, x);
                let dx = g.dx();
                for v in x.iter_mut() {
                    let w: f64 = rng.random();
                    *v += (w - 0.5) * dx;
                }
            }
        }
    }
    Ok(ParticleEnsemble {
        dim,
        positions,
        time: 0.0,
        streams,
    })
}

/// Drift and noise law applied around a frozen consensus point.
#[derive(Debug, Clone, Copy)]
enum Law<'a> {
    Plain,
    Regularized(&'a RegularizationParams),
}

fn advance(ens: &mut ParticleEnsemble, m: &[f64], lambda: f64, sigma: f64, dt: f64, law: Law<'_>) -> Result<()> {
    let dim = ens.dim;
    if m.len() != dim {
        return Err(CboError::DimensionMismatch {
            expected: dim,
            got: m.len(),
        });
    }
    let sqrt_dt = dt.sqrt();
    let update = |(x, rng): (&mut [f64], &mut ChaCha8Rng)| {
        let mut h = [0.0; 8];
        let mut hv = vec![];
        let h: &mut [f64] = if dim <= 8 {
            &mut h[..dim]
        } else {
            hv.resize(dim, 0.0);
            &mut hv
        };
        let amp = match law {
            Law::Plain => {
                for k in 0..dim {
                    h[k] = x[k] - m[k];
                }
                sigma * norm_sq(h).sqrt()
            }
            Law::Regularized(reg) => {
                drift_field_into(x, m, reg.radius, h);
                sigma * (norm_sq(h) + reg.epsilon * reg.epsilon).sqrt()
            }
        };
        for k in 0..dim {
            let xi: f64 = rng.sample(StandardNormal);
            x[k] += -lambda * h[k] * dt + amp * sqrt_dt * xi;
        }
    };
    if ens.positions.len() >= PARALLEL_MIN_COORDS {
        ens.positions
            .par_chunks_exact_mut(dim)
            .zip(ens.streams.par_iter_mut())
            .for_each(update);
    } else {
        ens.positions
            .chunks_exact_mut(dim)
            .zip(ens.streams.iter_mut())
            .for_each(update);
    }
    if let Some(i) = ens.positions.iter().position(|x| !x.is_finite()) {
        return Err(CboError::NonFinitePosition { particle: i / dim });
    }
    ens.time += dt;
    Ok(())
}

/// One step with a caller-supplied consensus point held fixed.
pub fn step_with_consensus(ens: &mut ParticleEnsemble, m: &[f64], params: &CBOParams) -> Result<()> {
    advance(ens, m, params.lambda, params.sigma, params.dt, Law::Plain)
}

/// One synchronous step: `m` from the pre-step positions, then every
/// particle moves. Returns the consensus point used.
pub fn step(ens: &mut ParticleEnsemble, f: &ObjectiveSpec, params: &CBOParams) -> Result<Vec<f64>> {
    let c = particle_consensus(&ens.positions, ens.dim, f, params.consensus())?;
    advance(ens, &c.point, params.lambda, params.sigma, params.dt, Law::Plain)?;
    Ok(c.point)
}

/// One step of the particle system behind the regularized equation: drift
/// `-lambda h(X)` and noise amplitude `sigma sqrt(|h(X)|^2 + eps^2)`.
pub fn step_regularized(
    ens: &mut ParticleEnsemble,
    f: &ObjectiveSpec,
    params: &CBOParams,
    reg: &RegularizationParams,
) -> Result<Vec<f64>> {
    let c = particle_consensus(&ens.positions, ens.dim, f, params.consensus())?;
    advance(
        ens,
        &c.point,
        params.lambda,
        params.sigma,
        params.dt,
        Law::Regularized(reg),
    )?;
    Ok(c.point)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub consensus: Vec<f64>,
    pub variance: f64,
    pub best_f: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'a> {
    /// Record every `stride` steps; the first and last states are always kept.
    pub stride: usize,
    /// Use the regularized dynamics instead of the plain ones.
    pub regularization: Option<&'a RegularizationParams>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self {
            stride: 1,
            regularization: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    /// `m_alpha(rho_T^N)`, the optimizer output.
    pub final_consensus: Vec<f64>,
    pub ensemble: ParticleEnsemble,
    /// `max |m|^2` over every step, not just recorded ones.
    pub max_consensus_sq: f64,
}

pub type Observer<'o> = dyn FnMut(&ParticleEnsemble, &TrajectoryRecord) + 'o;

/// Runs `ceil(T / dt)` steps; the last one is shortened to land on `T`.
pub fn run(
    mut ens: ParticleEnsemble,
    f: &ObjectiveSpec,
    params: &CBOParams,
    options: RunOptions<'_>,
    observers: &mut [&mut Observer<'_>],
) -> Result<RunOutput> {
    params.validate()?;
    if options.stride == 0 {
        return Err(CboError::param("stride", "must be at least 1"));
    }
    let steps = params.n_steps();
    let t0 = ens.time;
    let mut best = f64::INFINITY;
    let mut max_m_sq: f64 = 0.0;
    let mut records = Vec::with_capacity(steps / options.stride + 2);
    let mut k = 0;
    loop {
        let c = particle_consensus(&ens.positions, ens.dim, f, params.consensus()).map_err(|e| e.at_step(k))?;
        best = best.min(c.min_value);
        max_m_sq = max_m_sq.max(norm_sq(&c.point));
        if k % options.stride == 0 || k == steps {
            let rec = TrajectoryRecord {
                t: ens.time,
                consensus: c.point.clone(),
                variance: ens.variance(),
                best_f: best,
            };
            for obs in observers.iter_mut() {
                obs(&ens, &rec);
            }
            records.push(rec);
        }
        if k == steps {
            return Ok(RunOutput {
                records,
                final_consensus: c.point,
                ensemble: ens,
                max_consensus_sq: max_m_sq,
            });
        }
        let dt = if k + 1 == steps {
            (params.t_final - (ens.time - t0)).min(params.dt)
        } else {
            params.dt
        };
        let law = match options.regularization {
            Some(r) => Law::Regularized(r),
            None => Law::Plain,
        };
        advance(&mut ens, &c.point, params.lambda, params.sigma, dt, law).map_err(|e| e.at_step(k + 1))?;
        if k + 1 == steps {
            ens.time = t0 + params.t_final;
        }
        k += 1;
    }
}

/// CSV with columns `t, m_1..m_d, var, best_f`.
pub fn trajectory_csv(records: &[TrajectoryRecord]) -> String {
    let dim = records.first().map_or(1, |r| r.consensus.len());
    let mut out = String::from("t");
    for k in 1..=dim {
        out.push_str(&format!(",m_{k}"));
    }
    out.push_str(",var,best_f\n");
    for r in records {
        out.push_str(&format!("{}", r.t));
        for v in &r.consensus {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", r.variance, r.best_f));
    }
    out
}
