//! Objective functions and their growth/regularity metadata.
//!
//! Every [`ObjectiveSpec`] carries the constants of the standing assumption
//! on the cost function: a lower bound `f_min`, a local Lipschitz bound
//! `|f(x) - f(y)| <= L_f (1 + |x| + |y|)^s |x - y|`, and two-sided growth
//! `c_l (|x|^l - c_0) <= f(x) - f_min <= c_u (|x|^l + 1)`.
//! [`check_assumption`] spot-checks those inequalities on random samples.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CboError, Result};
use crate::numerics::{dist, norm};

pub type ObjectiveFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzData {
    pub l_f: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthData {
    pub c_l: f64,
    pub c_u: f64,
    pub c_0: f64,
    pub ell: f64,
}

/// An objective together with its declared regularity constants.
///
/// Immutable once built; clones share the evaluation closure.
#[derive(Clone)]
pub struct ObjectiveSpec {
    name: String,
    eval: Arc<ObjectiveFn>,
    pub dim: usize,
    pub lower_bound: f64,
    pub lipschitz: LipschitzData,
    pub growth: GrowthData,
    pub known_minimizer: Option<Vec<f64>>,
}

impl fmt::Debug for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("lower_bound", &self.lower_bound)
            .field("lipschitz", &self.lipschitz)
            .field("growth", &self.growth)
            .field("known_minimizer", &self.known_minimizer)
            .finish()
    }
}

impl ObjectiveSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        lower_bound: f64,
        lipschitz: LipschitzData,
        growth: GrowthData,
        known_minimizer: Option<Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(CboError::param("dim", "must be at least 1"));
        }
        if let Some(xm) = &known_minimizer {
            if xm.len() != dim {
                return Err(CboError::DimensionMismatch {
                    expected: dim,
                    got: xm.len(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            eval: Arc::new(eval),
            dim,
            lower_bound,
            lipschitz,
            growth,
            known_minimizer,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// Same objective plus a constant offset; the metadata shifts with it.
    pub fn offset(&self, c: f64) -> Self {
        let inner = Arc::clone(&self.eval);
        Self {
            name: format!("{}+{}", self.name, c),
            eval: Arc::new(move |x: &[f64]| inner(x) + c),
            lower_bound: self.lower_bound + c,
            ..self.clone()
        }
    }

    /// Replace the declared Lipschitz data (used to exercise the checker with
    /// deliberately wrong metadata).
    pub fn with_lipschitz(mut self, lipschitz: LipschitzData) -> Self {
        self.lipschitz = lipschitz;
        self
    }
}

/// Shifted Rastrigin, summed per coordinate:
/// `f(x) = sum_i 10 + (x_i - a)^2 - 10 cos(2 pi (x_i - a))`.
///
/// Constants: the gradient is bounded by `2|x - a| + 20 pi sqrt(d)`, giving
/// `s = 1` and `L_f = max(2, 2|a| sqrt(d) + 20 pi sqrt(d))`. Since
/// `0 <= 10 - 10 cos <= 20`, `|x - a|^2 <= f <= |x - a|^2 + 20 d`, which yields
/// `l = 2`, `c_l = 1/2`, `c_0 = 2 d a^2 + 1`, `c_u = max(2, 2 d a^2 + 20 d)`.
pub fn rastrigin(shift: f64, dim: usize) -> Result<ObjectiveSpec> {
    if dim == 0 {
        return Err(CboError::param("dim", "must be at least 1"));
    }
    let d = dim as f64;
    let eval = move |x: &[f64]| {
        x.iter()
            .map(|&xi| {
                let y = xi - shift;
                10.0 + y * y - 10.0 * (2.0 * PI * y).cos()
            })
            .sum()
    };
    let l_f = f64::max(2.0, 2.0 * shift.abs() * d.sqrt() + 20.0 * PI * d.sqrt());
    let a2 = shift * shift;
    ObjectiveSpec::new(
        "rastrigin",
        dim,
        eval,
        0.0,
        LipschitzData { l_f, s: 1.0 },
        GrowthData {
            c_l: 0.5,
            c_u: f64::max(2.0, 2.0 * d * a2 + 20.0 * d),
            c_0: 2.0 * d * a2 + 1.0,
            ell: 2.0,
        },
        Some(vec![shift; dim]),
    )
}

/// `f(x) = |x - center|^2`.
///
/// Constants: `|f(x) - f(y)| <= (|x| + |y| + 2|c|)|x - y|` so `s = 1`,
/// `L_f = max(1, 2|c|)`; `|x|^2/2 - |c|^2 <= f <= 2|x|^2 + 2|c|^2` gives
/// `c_l = 1/2`, `c_0 = 2|c|^2 + 1`, `c_u = max(2, 2|c|^2)`, `l = 2`.
pub fn quadratic(center: &[f64]) -> Result<ObjectiveSpec> {
    let c = center.to_vec();
    let c2: f64 = c.iter().map(|v| v * v).sum();
    let cn = c2.sqrt();
    let cc = c.clone();
    let eval = move |x: &[f64]| x.iter().zip(&cc).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
    ObjectiveSpec::new(
        "quadratic",
        center.len(),
        eval,
        0.0,
        LipschitzData {
            l_f: f64::max(1.0, 2.0 * cn),
            s: 1.0,
        },
        GrowthData {
            c_l: 0.5,
            c_u: f64::max(2.0, 2.0 * c2),
            c_0: 2.0 * c2 + 1.0,
            ell: 2.0,
        },
        Some(c),
    )
}

/// Largest observed violation of each inequality; `<= 0` means consistent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub box_radius: f64,
    /// `max(f_min - f(x))`.
    pub lower_bound_margin: f64,
    /// `max(|f(x)-f(y)| - L_f (1+|x|+|y|)^s |x-y|)`.
    pub lipschitz_margin: f64,
    /// `max` over both sides of the two-sided growth bound.
    pub growth_margin: f64,
}

impl AssumptionReport {
    pub fn consistent(&self) -> bool {
        self.lower_bound_margin <= 0.0 && self.lipschitz_margin <= 0.0 && self.growth_margin <= 0.0
    }
}

pub const DEFAULT_SAMPLE_BOX: f64 = 10.0;

pub fn check_assumption(spec: &ObjectiveSpec, samples: usize, seed: u64) -> Result<AssumptionReport> {
    check_assumption_in_box(spec, samples, seed, DEFAULT_SAMPLE_BOX)
}

/// Draws `samples` pairs uniformly in `[-box_radius, box_radius]^d`.
///
/// Half of the second points are placed close to the first one so the
/// Lipschitz ratio is probed at short range too.
pub fn check_assumption_in_box(
    spec: &ObjectiveSpec,
    samples: usize,
    seed: u64,
    box_radius: f64,
) -> Result<AssumptionReport> {
    if samples < 2 {
        return Err(CboError::param("samples", "need at least 2"));
    }
    if !(box_radius > 0.0) {
        return Err(CboError::param("box_radius", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dim;
    let LipschitzData { l_f, s } = spec.lipschitz;
    let GrowthData { c_l, c_u, c_0, ell } = spec.growth;
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut lower = f64::NEG_INFINITY;
    let mut lip = f64::NEG_INFINITY;
    let mut growth = f64::NEG_INFINITY;
    for k in 0..samples {
        for xi in x.iter_mut() {
            *xi = rng.random_range(-box_radius..=box_radius);
        }
        if k % 2 == 0 {
            for yi in y.iter_mut() {
                *yi = rng.random_range(-box_radius..=box_radius);
            }
        } else {
            let h = 10f64.powf(rng.random_range(-4.0..0.0));
            for (yi, xi) in y.iter_mut().zip(&x) {
                *yi = xi + h * rng.random_range(-1.0..=1.0);
            }
        }
        let fx = spec.eval(&x);
        let fy = spec.eval(&y);
        lower = lower.max(spec.lower_bound - fx).max(spec.lower_bound - fy);

        let (nx, ny) = (norm(&x), norm(&y));
        let bound = l_f * (1.0 + nx + ny).powf(s) * dist(&x, &y);
        lip = lip.max((fx - fy).abs() - bound);

        for (p, fp) in [(nx, fx), (ny, fy)] {
            let gap = fp - spec.lower_bound;
            let r = p.powf(ell);
            growth = growth.max(c_l * (r - c_0) - gap).max(gap - c_u * (r + 1.0));
        }
    }
    Ok(AssumptionReport {
        samples,
        box_radius,
        lower_bound_margin: lower,
        lipschitz_margin: lip,
        growth_margin: growth,
    })
}

/// Built-in objective by name, as used in run configurations.
pub fn by_name(name: &str, dim: usize, shift: Option<f64>, center: Option<&[f64]>) -> Result<ObjectiveSpec> {
    match name {
        "rastrigin" => rastrigin(shift.unwrap_or(1.0), dim),
        "quadratic" => match center {
            Some(c) => {
                if c.len() != dim {
                    return Err(CboError::DimensionMismatch {
                        expected: dim,
                        got: c.len(),
                    });
                }
                quadratic(c)
            }
            None => quadratic(&vec![0.0; dim]),
        },
        other => Err(CboError::param("objective", format!("unknown objective `{other}`"))),
    }
}
