//! Versioned pass/fail thresholds used by the verification harness and the
//! acceptance suite.

use serde::Serialize;

pub const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    /// Part of the fixed benchmark setting.
    Benchmark,
    /// Follows from an analytic argument or an exact oracle.
    Derived,
    /// Fixed from repeated runs at build time.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub name: &'static str,
    pub value: f64,
    pub origin: Origin,
}

const fn t(name: &'static str, value: f64, origin: Origin) -> Threshold {
    Threshold { name, value, origin }
}

/// Success radius around the known minimizer for the optimizer output.
pub const OPTIMIZER_RADIUS: Threshold = t("optimizer success radius", 0.25, Origin::Calibrated);
/// Required fraction of successful seeds (18 of 20).
pub const OPTIMIZER_SUCCESS_FRACTION: Threshold = t("optimizer success fraction", 0.9, Origin::Calibrated);
/// Rastrigin benchmark setting.
pub const BENCH_PARTICLES: Threshold = t("particles", 100.0, Origin::Benchmark);
pub const BENCH_ALPHA: Threshold = t("alpha", 1e15, Origin::Benchmark);
pub const BENCH_DT: Threshold = t("time step", 0.01, Origin::Benchmark);
pub const BENCH_HORIZON: Threshold = t("horizon", 100.0, Origin::Benchmark);

pub const MASS_DRIFT: Threshold = t("relative mass drift over a run", 1e-10, Origin::Derived);
pub const STEP_MASS_DRIFT: Threshold = t("relative mass drift per step", 1e-13, Origin::Derived);
pub const MIN_DENSITY: Threshold = t("minimum cell value", 0.0, Origin::Derived);
pub const ORACLE_AGREEMENT: Threshold = t("dense oracle agreement per cell", 1e-13, Origin::Derived);
/// Rounding allowance on envelope ratios (`measured / envelope <= 1 + tol`).
pub const ENVELOPE_ROUNDING: Threshold = t("envelope rounding allowance", 1e-12, Origin::Derived);
pub const H2_GROWTH: Threshold = t("H2 seminorm growth factor", 10.0, Origin::Calibrated);
pub const WEAK_RESIDUAL: Threshold = t("weak residual", 0.05, Origin::Calibrated);
pub const MEAN_FIELD_W2: Threshold = t("W2 at the largest particle count", 0.1, Origin::Calibrated);
pub const LAPLACE_GAP: Threshold = t("Laplace gap at alpha = 1e15", 1e-12, Origin::Derived);
pub const REFINEMENT_RATIO_MIN: Threshold = t("refinement error ratio, lower", 1.5, Origin::Derived);
pub const REFINEMENT_RATIO_MAX: Threshold = t("refinement error ratio, upper", 3.0, Origin::Derived);

pub fn all() -> Vec<Threshold> {
    vec![
        OPTIMIZER_RADIUS,
        OPTIMIZER_SUCCESS_FRACTION,
        BENCH_PARTICLES,
        BENCH_ALPHA,
        BENCH_DT,
        BENCH_HORIZON,
        MASS_DRIFT,
        STEP_MASS_DRIFT,
        MIN_DENSITY,
        ORACLE_AGREEMENT,
        ENVELOPE_ROUNDING,
        H2_GROWTH,
        WEAK_RESIDUAL,
        MEAN_FIELD_W2,
        LAPLACE_GAP,
        REFINEMENT_RATIO_MIN,
        REFINEMENT_RATIO_MAX,
    ]
}

/// Successes needed out of `runs` seeds.
pub fn required_successes(runs: usize) -> usize {
    (OPTIMIZER_SUCCESS_FRACTION.value * runs as f64 - 1e-9).ceil() as usize
}
