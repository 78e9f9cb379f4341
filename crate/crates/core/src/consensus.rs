//! The weighted consensus point `m = sum x_i exp(-a f(x_i)) / sum exp(-a f(x_i))`.
//!
//! Weights are formed as `exp(-a (f_i - min_j f_j))`, so the heaviest weight
//! is exactly one and nothing overflows, whatever the size of `a`.

use serde::{Deserialize, Serialize};

use crate::error::{CboError, Result};
use crate::grid::GridDensity;
use crate::numerics::CompensatedSum;
use crate::objectives::ObjectiveSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusParams {
    pub alpha: f64,
}

impl ConsensusParams {
    pub fn new(alpha: f64) -> Result<Self> {
        let p = Self { alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CboError::param("alpha", "must be finite and positive"));
        }
        Ok(())
    }
}

/// Consensus point plus the minimizing sample it was anchored to.
#[derive(Debug, Clone, PartialEq)]
pub struct Consensus {
    pub point: Vec<f64>,
    /// Smallest objective value among contributing points.
    pub min_value: f64,
    /// Lowest index attaining `min_value`.
    pub argmin: usize,
}

/// Weighted mean of `points` (flat, `dim` coordinates each) with weights
/// `mass_i * exp(-alpha (f_i - f_min))`; points with zero mass are ignored.
///
/// The result is clamped to the per-coordinate range of the contributing
/// points so rounding can never push it outside their convex hull.
pub fn weighted_consensus(
    points: &[f64],
    dim: usize,
    values: &[f64],
    masses: Option<&[f64]>,
    alpha: f64,
) -> Result<Consensus> {
    let count = values.len();
    if count == 0 || dim == 0 {
        return Err(CboError::Empty);
    }
    if points.len() != count * dim {
        return Err(CboError::DimensionMismatch {
            expected: count * dim,
            got: points.len(),
        });
    }
    let active = |i: usize| masses.is_none_or(|m| m[i] > 0.0);

    let mut min_value = f64::INFINITY;
    let mut argmin = usize::MAX;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            return Err(CboError::NanObjective { index: i });
        }
        if active(i) && v < min_value {
            min_value = v;
            argmin = i;
        }
    }
    if argmin == usize::MAX {
        return Err(CboError::Empty);
    }

    let mut den = CompensatedSum::new();
    let mut num = vec![CompensatedSum::new(); dim];
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for i in 0..count {
        if !active(i) {
            continue;
        }
        let mut w = (-alpha * (values[i] - min_value)).exp();
        if let Some(m) = masses {
            w *= m[i];
        }
        let x = &points[i * dim..(i + 1) * dim];
        for k in 0..dim {
            lo[k] = lo[k].min(x[k]);
            hi[k] = hi[k].max(x[k]);
        }
        if w == 0.0 {
            continue;
        }
        den.add(w);
        for k in 0..dim {
            num[k].add(w * x[k]);
        }
    }
    let den = den.value();
    let point = num
        .iter()
        .enumerate()
        .map(|(k, s)| (s.value() / den).clamp(lo[k], hi[k]))
        .collect();
    Ok(Consensus {
        point,
        min_value,
        argmin,
    })
}

pub(crate) fn evaluate_all(points: &[f64], dim: usize, f: &ObjectiveSpec) -> Result<Vec<f64>> {
    if f.dim != dim {
        return Err(CboError::DimensionMismatch {
            expected: f.dim,
            got: dim,
        });
    }
    Ok(points.chunks_exact(dim).map(|x| f.eval(x)).collect())
}

/// Full consensus record for a particle cloud (flat positions, `dim` each).
pub fn particle_consensus(
    positions: &[f64],
    dim: usize,
    f: &ObjectiveSpec,
    params: ConsensusParams,
) -> Result<Consensus> {
    params.validate()?;
    if positions.iter().any(|x| !x.is_finite()) {
        return Err(CboError::param("positions", "all coordinates must be finite"));
    }
    let values = evaluate_all(positions, dim, f)?;
    weighted_consensus(positions, dim, &values, None, params.alpha)
}

pub fn consensus_of_particles(
    positions: &[f64],
    dim: usize,
    f: &ObjectiveSpec,
    params: ConsensusParams,
) -> Result<Vec<f64>> {
    Ok(particle_consensus(positions, dim, f, params)?.point)
}

/// Midpoint-rule version over grid cells, each weighted by its mass.
pub fn consensus_of_density(rho: &GridDensity, f: &ObjectiveSpec, params: ConsensusParams) -> Result<Vec<f64>> {
    params.validate()?;
    let mass = rho.mass();
    if !(mass > 0.0) {
        return Err(CboError::NonPositiveMass { mass });
    }
    let dim = rho.dim();
    let mut centers = vec![0.0; rho.len() * dim];
    for (k, c) in centers.chunks_exact_mut(dim).enumerate() {
        rho.center_into(k, c);
    }
    let values = evaluate_all(&centers, dim, f)?;
    Ok(weighted_consensus(&centers, dim, &values, Some(rho.values()), params.alpha)?.point)
}

/// Distance from the consensus point to the best particle (lowest index on
/// ties).
pub fn laplace_gap(positions: &[f64], dim: usize, f: &ObjectiveSpec, params: ConsensusParams) -> Result<f64> {
    let c = particle_consensus(positions, dim, f, params)?;
    let best = &positions[c.argmin * dim..(c.argmin + 1) * dim];
    Ok(crate::numerics::dist(&c.point, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::quadratic;

    fn q0() -> ObjectiveSpec {
        quadratic(&[0.0]).unwrap()
    }

    #[test]
    fn single_particle_is_its_own_consensus() {
        for alpha in [1e-3, 1.0, 1e15] {
            let m = consensus_of_particles(&[2.0], 1, &q0(), ConsensusParams::new(alpha).unwrap()).unwrap();
            assert_eq!(m, vec![2.0]);
        }
    }

    #[test]
    fn symmetric_pair_gives_midpoint() {
        for alpha in [1.0, 1e3, 1e15] {
            let m = consensus_of_particles(&[-1.0, 1.0], 1, &q0(), ConsensusParams::new(alpha).unwrap()).unwrap();
            assert_eq!(m, vec![0.0]);
        }
    }

    #[test]
    fn three_point_value() {
        // (0 + e^-1 + 2 e^-4) / (1 + e^-1 + e^-4), from a 40-digit evaluation
        let expected = 0.291_813_702_679_820_8;
        let m = consensus_of_particles(&[0.0, 1.0, 2.0], 1, &q0(), ConsensusParams::new(1.0).unwrap()).unwrap();
        assert!((m[0] - expected).abs() < 1e-15, "{}", m[0]);
    }

    #[test]
    fn empty_and_nan_rejected() {
        let p = ConsensusParams::new(1.0).unwrap();
        assert!(matches!(consensus_of_particles(&[], 1, &q0(), p), Err(CboError::Empty)));
        let nan = crate::objectives::ObjectiveSpec::new("nan", 1, |_| f64::NAN, 0.0, q0().lipschitz, q0().growth, None)
            .unwrap();
        assert!(matches!(
            consensus_of_particles(&[1.0], 1, &nan, p),
            Err(CboError::NanObjective { index: 0 })
        ));
    }

    #[test]
    fn invalid_alpha_rejected() {
        assert!(ConsensusParams::new(0.0).is_err());
        assert!(ConsensusParams::new(f64::INFINITY).is_err());
    }

    #[test]
    fn laplace_gap_cases() {
        let big = ConsensusParams::new(1e15).unwrap();
        assert!(laplace_gap(&[0.0, 1.0, 2.0], 1, &q0(), big).unwrap() <= 1e-12);
        assert_eq!(laplace_gap(&[3.0], 1, &q0(), big).unwrap(), 0.0);
        // tie: argmin is the first of the two, consensus is the midpoint
        let gap = laplace_gap(&[-1.0, 1.0], 1, &q0(), big).unwrap();
        assert_eq!(gap, 1.0);
    }

    #[test]
    fn density_point_mass_and_symmetry() {
        let p = ConsensusParams::new(1.0).unwrap();
        let g = GridDensity::point_mass(1, 8, 4.0, &[1.5]).unwrap();
        assert_eq!(g.center(g.locate(&[1.5]).unwrap()), vec![1.5]);
        let m = consensus_of_density(&g, &q0(), p).unwrap();
        assert_eq!(m, vec![1.5]);

        let sym = GridDensity::gaussian(1, 64, 4.0, &[0.0], 1.0).unwrap();
        let m = consensus_of_density(&sym, &q0(), p).unwrap();
        assert!(m[0].abs() < 1e-12);
    }

    #[test]
    fn density_zero_mass_rejected() {
        let g = GridDensity::zeros(1, 8, 1.0).unwrap();
        assert!(matches!(
            consensus_of_density(&g, &q0(), ConsensusParams::new(1.0).unwrap()),
            Err(CboError::NonPositiveMass { .. })
        ));
    }
}
