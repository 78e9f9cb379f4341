//! Runs the solver and particle system and checks the analytic estimates
//! on the output, collecting the outcome in an [`InvariantReport`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::envelopes::{
    fourth_moment_envelope, l2_envelope, linf_envelope, lp_envelope, second_moment_envelope, MomentInputs,
};
use crate::error::{CboError, Result};
use crate::grid::GridDensity;
use crate::metrics::{moments_of_particles, wasserstein2_1d, BumpTestFunction, Measure1d};
use crate::objectives::ObjectiveSpec;
use crate::particles::{
    init_ensemble, run, CBOParams, ParticleEnsemble, RunOptions, RunOutput, Sampler, TrajectoryRecord,
};
use crate::regularization::{mollify_initial, RegularizationParams};
use crate::solver::{snapshot_times, Diagnostics, PdeRun, RunStats, SolverConfig};
use crate::thresholds;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Hard,
    Soft,
}

/// The analytic result a check exercises, or `artifact` for checks of the
/// implementation itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    #[serde(rename = "non-negativity")]
    NonNegativity,
    #[serde(rename = "mass conservation")]
    MassConservation,
    #[serde(rename = "uniform L2 estimate")]
    L2Estimate,
    #[serde(rename = "boundedness of moments")]
    MomentBounds,
    #[serde(rename = "L-infinity boundedness")]
    LinfBound,
    #[serde(rename = "H2 regularity")]
    H2Regularity,
    #[serde(rename = "weak formulation")]
    WeakFormulation,
    #[serde(rename = "mean-field limit")]
    MeanField,
    #[serde(rename = "regularization limit")]
    RegularizationLimit,
    #[serde(rename = "uniqueness")]
    Uniqueness,
    #[serde(rename = "optimizer output")]
    OptimizerOutput,
    #[serde(rename = "artifact")]
    Artifact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    pub anchor: Anchor,
    pub measured: f64,
    pub relation: Relation,
    pub allowed: f64,
    pub pass: bool,
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    pub fn new(
        name: impl Into<String>,
        anchor: Anchor,
        severity: Severity,
        measured: f64,
        relation: Relation,
        allowed: f64,
    ) -> Self {
        let pass = match relation {
            Relation::AtMost => measured <= allowed,
            Relation::Below => measured < allowed,
            Relation::AtLeast => measured >= allowed,
        };
        Self {
            name: name.into(),
            anchor,
            measured,
            relation,
            allowed,
            pass,
            severity,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantReport {
    pub schema_version: u32,
    pub generated_at: String,
    pub run_config: Value,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

fn timestamp() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

impl InvariantReport {
    pub fn new(run_config: Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            generated_at: timestamp(),
            run_config,
            checks: Vec::new(),
            notes: Vec::new(),
            details: Value::Null,
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn hard_failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.severity == Severity::Hard && !c.pass)
    }

    pub fn passed(&self) -> bool {
        self.hard_failures().next().is_none()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values serialize")
    }

    /// Strict parse: unknown fields and checks without a recognized anchor
    /// are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CboError::ConfigParse {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }
}

fn env_allowed() -> f64 {
    1.0 + thresholds::ENVELOPE_ROUNDING.value
}

fn solver_provenance(cfg: &SolverConfig, f: &ObjectiveSpec) -> Value {
    json!({
        "solver": cfg,
        "objective": f.name(),
        "objective_dim": f.dim,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "thresholds_version": thresholds::FIXTURE_VERSION,
    })
}

/// What a (possibly aborted) solver run left behind.
struct PdeOutcome {
    diagnostics: Vec<Diagnostics>,
    snapshots: Vec<GridDensity>,
    stats: Option<RunStats>,
    reached: f64,
    error: Option<CboError>,
}

fn run_pde(rho0: &GridDensity, f: &ObjectiveSpec, cfg: &SolverConfig) -> PdeOutcome {
    let mut out = PdeOutcome {
        diagnostics: Vec::new(),
        snapshots: Vec::new(),
        stats: None,
        reached: 0.0,
        error: None,
    };
    let mut run = match PdeRun::new(rho0, f, cfg) {
        Ok(r) => r,
        Err(e) => {
            out.error = Some(e);
            return out;
        }
    };
    for t in snapshot_times(cfg) {
        if let Err(e) = run.advance_to(t) {
            out.error = Some(e);
            break;
        }
        out.diagnostics.push(run.diagnostics());
        out.snapshots.push(run.density().clone());
    }
    out.reached = run.time();
    out.stats = Some(run.stats().clone());
    out
}

fn max_ratio(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    pairs.fold(0.0, |acc, (m, e)| {
        if e > 0.0 {
            acc.max(m / e)
        } else if m > 0.0 {
            f64::INFINITY
        } else {
            acc
        }
    })
}

/// Five spatial test functions spread around the initial consensus point,
/// kept clear of the walls. Their support spans about nine cells even on a
/// 128-cell grid of half-width 22.
pub fn default_test_functions(cfg: &SolverConfig, around: &[f64]) -> Vec<BumpTestFunction> {
    let width = 1.0;
    let radius = 1.5;
    let limit = cfg.half_width - 2.0 * radius - cfg.dx();
    [-1.0, -0.5, 0.0, 0.5, 1.0]
        .iter()
        .map(|&o| {
            let c = around.iter().map(|m| (m + o).clamp(-limit, limit)).collect();
            BumpTestFunction {
                center: c,
                width,
                radius,
            }
        })
        .collect()
}

/// Solves the regularized equation from `rho0` and checks positivity, mass,
/// the moment and L2 envelopes (hard), and the L-infinity/Lp envelopes, the
/// H2 growth factor and the weak residual (soft). Solver aborts produce a
/// failed report.
pub fn verify_pde_run(cfg: &SolverConfig, f: &ObjectiveSpec, rho0: &GridDensity) -> Result<InvariantReport> {
    cfg.validate()?;
    let mut report = InvariantReport::new(solver_provenance(cfg, f));
    let out = run_pde(rho0, f, cfg);

    let completed = Check::new(
        "solver reached the horizon",
        Anchor::Artifact,
        Severity::Hard,
        out.reached,
        Relation::AtLeast,
        cfg.t_final,
    );
    let completed = match &out.error {
        Some(e) => completed.with_note(e.to_string()),
        None => completed,
    };
    let completed = Check {
        pass: out.error.is_none() && completed.pass,
        ..completed
    };
    report.push(completed);

    let neg_from_error = match &out.error {
        Some(CboError::Step { source, .. }) => match **source {
            CboError::NegativeDensity { value, .. } => Some(value),
            _ => None,
        },
        _ => None,
    };
    let min_value = out
        .stats
        .as_ref()
        .map(|s| s.min_value)
        .into_iter()
        .chain(neg_from_error)
        .fold(f64::INFINITY, f64::min);
    if let Some(stats) = &out.stats {
        report.push(Check::new(
            "minimum cell value over all steps",
            Anchor::NonNegativity,
            Severity::Hard,
            min_value,
            Relation::AtLeast,
            thresholds::MIN_DENSITY.value,
        ));
        report.push(Check::new(
            "relative mass drift",
            Anchor::MassConservation,
            Severity::Hard,
            stats.max_mass_drift,
            Relation::AtMost,
            thresholds::MASS_DRIFT.value,
        ));
        report.push(Check::new(
            "relative mass drift per step",
            Anchor::MassConservation,
            Severity::Hard,
            stats.max_step_mass_drift,
            Relation::AtMost,
            thresholds::STEP_MASS_DRIFT.value,
        ));
    } else {
        report.push(
            Check::new(
                "minimum cell value over all steps",
                Anchor::NonNegativity,
                Severity::Hard,
                f64::NAN,
                Relation::AtLeast,
                0.0,
            )
            .with_note("solver did not start"),
        );
    }

    if let (Some(stats), Some(first)) = (&out.stats, out.diagnostics.first()) {
        let (lambda, sigma, d) = (cfg.cbo.lambda, cfg.cbo.sigma, cfg.dim);
        let inputs = MomentInputs {
            dim: d,
            lambda,
            sigma,
            epsilon: cfg.reg.epsilon,
            mass: stats.initial_mass,
            consensus_sq_bound: stats.max_consensus_sq,
        };
        let e2 = second_moment_envelope(&inputs, first.m2);
        let m2_sup = e2.at(cfg.t_final);
        let e4 = fourth_moment_envelope(&inputs, first.m4, m2_sup);
        // the envelopes equal the data at t = 0, so later snapshots carry the margin
        let diag = if out.diagnostics.len() > 1 {
            &out.diagnostics[1..]
        } else {
            &out.diagnostics[..]
        };
        report.push(Check::new(
            "second moment / envelope",
            Anchor::MomentBounds,
            Severity::Hard,
            max_ratio(diag.iter().map(|s| (s.m2, e2.at(s.t)))),
            Relation::AtMost,
            env_allowed(),
        ));
        report.push(Check::new(
            "fourth moment / envelope",
            Anchor::MomentBounds,
            Severity::Hard,
            max_ratio(diag.iter().map(|s| (s.m4, e4.at(s.t)))),
            Relation::AtMost,
            env_allowed(),
        ));
        let l2_ratio = max_ratio(
            diag.iter()
                .map(|s| (s.l2, l2_envelope(s.t, first.l2, d, lambda, sigma).unwrap_or(f64::NAN))),
        );
        report.push(Check::new(
            "L2 norm / envelope",
            Anchor::L2Estimate,
            Severity::Hard,
            l2_ratio,
            Relation::AtMost,
            env_allowed(),
        ));

        let l1 = first.mass;
        let linf0 = first.linf;
        report.push(Check::new(
            "L-infinity norm / envelope",
            Anchor::LinfBound,
            Severity::Soft,
            max_ratio(
                diag.iter()
                    .map(|s| (s.linf, linf_envelope(s.t, d, lambda, sigma, l1, linf0))),
            ),
            Relation::AtMost,
            env_allowed(),
        ));
        report.push(Check::new(
            "L2 norm / interpolated envelope",
            Anchor::LinfBound,
            Severity::Soft,
            max_ratio(
                diag.iter()
                    .map(|s| (s.l2, lp_envelope(s.t, 2.0, d, lambda, sigma, l1, linf0))),
            ),
            Relation::AtMost,
            env_allowed(),
        ));
        let h2_growth = if first.h2 > 0.0 {
            diag.iter().map(|s| s.h2 / first.h2).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        report.push(Check::new(
            "H2 seminorm growth factor",
            Anchor::H2Regularity,
            Severity::Soft,
            h2_growth,
            Relation::AtMost,
            thresholds::H2_GROWTH.value,
        ));
        if out.snapshots.len() >= 3 {
            let tf = default_test_functions(cfg, &first.consensus);
            match crate::metrics::weak_residual(
                &out.snapshots,
                f,
                lambda,
                sigma,
                cfg.cbo.consensus(),
                Some(&cfg.reg),
                &tf,
            ) {
                Ok(r) => report.push(Check::new(
                    "weak residual",
                    Anchor::WeakFormulation,
                    Severity::Soft,
                    r,
                    Relation::AtMost,
                    thresholds::WEAK_RESIDUAL.value,
                )),
                Err(e) => report.notes.push(format!("weak residual skipped: {e}")),
            }
        }
    }
    report.details = json!({
        "stats": out.stats,
        "diagnostics": out.diagnostics,
    });
    Ok(report)
}

/// Particle-versus-PDE comparison at `cfg.t_final`, in one dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanFieldEntry {
    pub n_particles: usize,
    pub w2: Vec<f64>,
    pub mean_w2: f64,
}

/// Compares empirical measures of the regularized particle system (same
/// `lambda`, `sigma`, `alpha`, `eps`, `R`; particles drawn from the mollified
/// initial density; time step `cfg.cbo.dt`) against the PDE solution at
/// `cfg.t_final`, averaging `W2` over `seeds` runs per particle count.
pub fn verify_mean_field(
    cfg: &SolverConfig,
    f: &ObjectiveSpec,
    rho0: &GridDensity,
    n_list: &[usize],
    seeds: usize,
) -> Result<(InvariantReport, Vec<MeanFieldEntry>)> {
    cfg.validate()?;
    if cfg.dim != 1 {
        return Err(CboError::Unsupported("mean-field comparison needs d = 1".into()));
    }
    if n_list.is_empty() || n_list.contains(&0) || seeds == 0 {
        return Err(CboError::param(
            "n_list",
            "need positive particle counts and at least one seed",
        ));
    }
    let mut report = InvariantReport::new(json!({
        "solver": cfg,
        "objective": f.name(),
        "n_list": n_list,
        "seeds": seeds,
        "base_seed": cfg.cbo.seed,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "thresholds_version": thresholds::FIXTURE_VERSION,
    }));
    let pde_cfg = SolverConfig {
        snapshot_interval: None,
        ..cfg.clone()
    };
    let pde = run_pde(rho0, f, &pde_cfg);
    if let Some(e) = pde.error {
        report.push(
            Check::new(
                "PDE run completed",
                Anchor::Artifact,
                Severity::Hard,
                pde.reached,
                Relation::AtLeast,
                cfg.t_final,
            )
            .with_note(e.to_string()),
        );
        let fail = Check {
            pass: false,
            ..report.checks[0].clone()
        };
        report.checks[0] = fail;
        return Ok((report, Vec::new()));
    }
    let final_rho = pde.snapshots.last().expect("final snapshot");
    let start = mollify_initial(rho0, cfg.reg.epsilon)?;
    let sampler = Sampler::Grid(start);
    let jobs: Vec<(usize, usize)> = n_list
        .iter()
        .enumerate()
        .flat_map(|(i, _)| (0..seeds).map(move |s| (i, s)))
        .collect();
    let w2: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let params = CBOParams {
                n_particles: n_list[i],
                seed: cfg.cbo.seed.wrapping_add(s as u64),
                t_final: cfg.t_final,
                ..cfg.cbo
            };
            let ens = init_ensemble(&sampler, &params, 1)?;
            let out = run(
                ens,
                f,
                &params,
                RunOptions {
                    stride: usize::MAX,
                    regularization: Some(&cfg.reg),
                },
                &mut [],
            )?;
            wasserstein2_1d(Measure1d::Samples(out.ensemble.positions()), Measure1d::Grid(final_rho))
        })
        .collect::<Result<_>>()?;
    let entries: Vec<MeanFieldEntry> = n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let w = w2[i * seeds..(i + 1) * seeds].to_vec();
            let mean_w2 = w.iter().sum::<f64>() / seeds as f64;
            MeanFieldEntry {
                n_particles: n,
                w2: w,
                mean_w2,
            }
        })
        .collect();
    report.push(Check::new(
        "PDE run completed",
        Anchor::Artifact,
        Severity::Hard,
        pde.reached,
        Relation::AtLeast,
        cfg.t_final,
    ));
    for pair in entries.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.n_particles == b.n_particles {
            let diff = a.w2.iter().zip(&b.w2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            report.push(Check::new(
                format!("W2 identical for repeated N = {}", a.n_particles),
                Anchor::Artifact,
                Severity::Hard,
                diff,
                Relation::AtMost,
                0.0,
            ));
        } else {
            report.push(Check::new(
                format!("mean W2 at N = {} below N = {}", b.n_particles, a.n_particles),
                Anchor::MeanField,
                Severity::Hard,
                b.mean_w2,
                Relation::Below,
                a.mean_w2,
            ));
        }
    }
    let largest = entries.iter().max_by_key(|e| e.n_particles).expect("non-empty");
    report.push(Check::new(
        format!("mean W2 at N = {}", largest.n_particles),
        Anchor::MeanField,
        Severity::Hard,
        largest.mean_w2,
        Relation::AtMost,
        thresholds::MEAN_FIELD_W2.value,
    ));
    report.details = json!({ "entries": entries });
    Ok((report, entries))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizationGap {
    pub eps_from: f64,
    pub eps_to: f64,
    pub l1: f64,
    pub w2: Option<f64>,
}

/// Solves with linked `R = 1/eps` for each entry of the strictly decreasing
/// `eps_list` on the grid of `cfg` and checks that consecutive `L1` gaps
/// shrink (hard) and that `W2` gaps shrink (soft, 1-D only).
pub fn verify_regularization_limit(
    eps_list: &[f64],
    cfg: &SolverConfig,
    f: &ObjectiveSpec,
    rho0: &GridDensity,
) -> Result<(InvariantReport, Vec<RegularizationGap>)> {
    if eps_list.is_empty() {
        return Err(CboError::param("eps_list", "must not be empty"));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(CboError::param("eps_list", "must be strictly decreasing"));
    }
    let configs: Vec<SolverConfig> = eps_list
        .iter()
        .map(|&e| {
            Ok(SolverConfig {
                reg: RegularizationParams::linked(e)?,
                snapshot_interval: None,
                ..cfg.clone()
            })
        })
        .collect::<Result<_>>()?;
    for c in &configs {
        c.validate()?;
    }
    let mut report = InvariantReport::new(json!({
        "solver": cfg,
        "objective": f.name(),
        "eps_list": eps_list,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "thresholds_version": thresholds::FIXTURE_VERSION,
    }));
    let outcomes: Vec<PdeOutcome> = configs.par_iter().map(|c| run_pde(rho0, f, c)).collect();
    let mut finals = Vec::new();
    for (eps, o) in eps_list.iter().zip(outcomes) {
        let ok = o.error.is_none();
        let mut c = Check::new(
            format!("PDE run completed for eps = {eps}"),
            Anchor::Artifact,
            Severity::Hard,
            o.reached,
            Relation::AtLeast,
            cfg.t_final,
        );
        if let Some(e) = &o.error {
            c = c.with_note(e.to_string());
            c.pass = false;
        }
        report.push(c);
        if ok {
            finals.push(o.snapshots.last().cloned().expect("final snapshot"));
        }
    }
    if finals.len() != eps_list.len() {
        return Ok((report, Vec::new()));
    }
    let mut gaps = Vec::new();
    for i in 1..finals.len() {
        let l1 = finals[i].l1_distance(&finals[i - 1])?;
        let w2 = if cfg.dim == 1 {
            Some(wasserstein2_1d(
                Measure1d::Grid(&finals[i]),
                Measure1d::Grid(&finals[i - 1]),
            )?)
        } else {
            None
        };
        gaps.push(RegularizationGap {
            eps_from: eps_list[i - 1],
            eps_to: eps_list[i],
            l1,
            w2,
        });
    }
    for pair in gaps.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        report.push(Check::new(
            format!(
                "L1 gap eps {} -> {} below eps {} -> {}",
                b.eps_from, b.eps_to, a.eps_from, a.eps_to
            ),
            Anchor::RegularizationLimit,
            Severity::Hard,
            b.l1,
            Relation::Below,
            a.l1,
        ));
        if let (Some(wa), Some(wb)) = (a.w2, b.w2) {
            report.push(Check::new(
                format!(
                    "W2 gap eps {} -> {} below eps {} -> {}",
                    b.eps_from, b.eps_to, a.eps_from, a.eps_to
                ),
                Anchor::RegularizationLimit,
                Severity::Soft,
                wb,
                Relation::Below,
                wa,
            ));
        }
    }
    if gaps.len() < 2 {
        report.notes.push("fewer than two gaps: nothing to compare".into());
    }
    report.details = json!({ "gaps": gaps });
    Ok((report, gaps))
}

/// `L1` errors of the solutions at `n` and `2n` cells against the one at `4n`
/// (all averaged onto `n` cells) and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementStudy {
    pub coarse_error: f64,
    pub fine_error: f64,
    pub ratio: f64,
}

/// Runs `cfg` at `n`, `2n` and `4n` cells from initial densities produced by
/// `initial(cells)` and compares successive differences, a proxy for
/// first-order convergence towards a unique limit.
pub fn verify_refinement(
    cfg: &SolverConfig,
    f: &ObjectiveSpec,
    initial: impl Fn(usize) -> Result<GridDensity> + Sync,
) -> Result<(InvariantReport, RefinementStudy)> {
    let levels = [cfg.cells, 2 * cfg.cells, 4 * cfg.cells];
    let finals: Vec<GridDensity> = levels
        .par_iter()
        .map(|&n| {
            let c = SolverConfig {
                cells: n,
                snapshot_interval: None,
                ..cfg.clone()
            };
            let rho0 = initial(n)?;
            let sol = crate::solver::solve(&rho0, f, &c, &mut [])?;
            Ok(sol.snapshots.last().cloned().expect("final snapshot"))
        })
        .collect::<Result<_>>()?;
    let d01 = finals[1].coarsen(2)?.l1_distance(&finals[0])?;
    let d12 = finals[2].coarsen(2)?.l1_distance(&finals[1])?;
    let study = RefinementStudy {
        coarse_error: d01,
        fine_error: d12,
        ratio: d01 / d12,
    };
    let mut report = InvariantReport::new(solver_provenance(cfg, f));
    report.push(Check::new(
        "refinement error ratio (lower)",
        Anchor::Uniqueness,
        Severity::Hard,
        study.ratio,
        Relation::AtLeast,
        thresholds::REFINEMENT_RATIO_MIN.value,
    ));
    report.push(Check::new(
        "refinement error ratio (upper)",
        Anchor::Uniqueness,
        Severity::Hard,
        study.ratio,
        Relation::AtMost,
        thresholds::REFINEMENT_RATIO_MAX.value,
    ));
    report.details = json!({ "study": study });
    Ok((report, study))
}

#[derive(Debug, Clone)]
pub struct OptimizerSetup {
    pub objective: ObjectiveSpec,
    pub params: CBOParams,
    pub sampler: Sampler,
    pub seeds: Vec<u64>,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizerStudy {
    pub report: InvariantReport,
    pub runs: Vec<(u64, RunOutput)>,
}

/// Buckets of `|m_out - x*|` for the report histogram.
const HISTOGRAM_EDGES: [f64; 6] = [0.0, 0.05, 0.1, 0.25, 0.5, 1.0];

/// Seeded optimizer runs: at least 90% of them must end within the success
/// radius of the known minimizer. Also checks the particle second moment
/// against its envelope.
pub fn verify_optimizer(setup: &OptimizerSetup) -> Result<OptimizerStudy> {
    setup.params.validate()?;
    let f = &setup.objective;
    let target = f
        .known_minimizer
        .clone()
        .ok_or_else(|| CboError::param("objective", "needs a known minimizer"))?;
    if setup.seeds.is_empty() {
        return Err(CboError::param("seeds", "need at least one seed"));
    }
    let sampler = match &setup.sampler {
        Sampler::Grid(_) => return Err(CboError::param("sampler", "use a uniform or gaussian initial law")),
        s => s,
    };
    let mut report = InvariantReport::new(json!({
        "objective": f.name(),
        "objective_dim": f.dim,
        "params": setup.params,
        "sampler": format!("{:?}", sampler),
        "seeds": setup.seeds,
        "record_stride": setup.stride,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "thresholds_version": thresholds::FIXTURE_VERSION,
    }));

    struct SeedRun {
        seed: u64,
        out: RunOutput,
        m2_ratio: f64,
    }
    let results: Vec<SeedRun> = setup
        .seeds
        .par_iter()
        .map(|&seed| {
            let params = CBOParams { seed, ..setup.params };
            let ens = init_ensemble(sampler, &params, f.dim)?;
            let mut m2 = Vec::new();
            let mut obs = |e: &ParticleEnsemble, r: &TrajectoryRecord| {
                if let Ok(m) = moments_of_particles(e.positions(), e.dim()) {
                    m2.push((r.t, m.m2));
                }
            };
            let out = run(
                ens,
                f,
                &params,
                RunOptions {
                    stride: setup.stride,
                    regularization: None,
                },
                &mut [&mut obs],
            )?;
            let inputs = MomentInputs {
                dim: f.dim,
                lambda: params.lambda,
                sigma: params.sigma,
                epsilon: 0.0,
                mass: 1.0,
                consensus_sq_bound: out.max_consensus_sq,
            };
            let env = second_moment_envelope(&inputs, m2.first().map_or(0.0, |p| p.1));
            let later = if m2.len() > 1 { &m2[1..] } else { &m2[..] };
            let m2_ratio = max_ratio(later.iter().map(|&(t, v)| (v, env.at(t))));
            Ok(SeedRun { seed, out, m2_ratio })
        })
        .collect::<Result<_>>()?;

    let distances: Vec<f64> = results
        .iter()
        .map(|r| crate::numerics::dist(&r.out.final_consensus, &target))
        .collect();
    let radius = thresholds::OPTIMIZER_RADIUS.value;
    let successes = distances.iter().filter(|&&d| d < radius).count();
    let needed = thresholds::required_successes(results.len());
    let mut histogram = vec![0usize; HISTOGRAM_EDGES.len()];
    for &d in &distances {
        let b = HISTOGRAM_EDGES.iter().rposition(|&e| d >= e).unwrap_or(0);
        histogram[b] += 1;
    }
    if setup.params.t_final == 0.0 {
        report
            .notes
            .push("degenerate horizon T = 0: success check skipped".into());
    } else {
        report.push(
            Check::new(
                format!("runs ending within {radius} of the minimizer"),
                Anchor::OptimizerOutput,
                Severity::Hard,
                successes as f64,
                Relation::AtLeast,
                needed as f64,
            )
            .with_note(format!("{successes} of {} runs", results.len())),
        );
    }
    report.push(Check::new(
        "particle second moment / envelope",
        Anchor::MomentBounds,
        Severity::Hard,
        results.iter().map(|r| r.m2_ratio).fold(0.0, f64::max),
        Relation::AtMost,
        env_allowed(),
    ));
    report.details = json!({
        "distances": distances,
        "final_consensus": results.iter().map(|r| r.out.final_consensus.clone()).collect::<Vec<_>>(),
        "histogram_edges": HISTOGRAM_EDGES,
        "histogram": histogram,
    });
    Ok(OptimizerStudy {
        report,
        runs: results.into_iter().map(|r| (r.seed, r.out)).collect(),
    })
}

/// Checks the assumption metadata of `f` on random samples.
pub fn verify_assumption(f: &ObjectiveSpec, samples: usize, seed: u64) -> Result<InvariantReport> {
    let r = crate::objectives::check_assumption(f, samples, seed)?;
    let mut report = InvariantReport::new(json!({
        "objective": f.name(),
        "objective_dim": f.dim,
        "samples": samples,
        "seed": seed,
        "crate_version": env!("CARGO_PKG_VERSION"),
    }));
    for (name, v) in [
        ("lower bound margin", r.lower_bound_margin),
        ("Lipschitz margin", r.lipschitz_margin),
        ("growth margin", r.growth_margin),
    ] {
        report.push(Check::new(
            name,
            Anchor::Artifact,
            Severity::Hard,
            v,
            Relation::AtMost,
            0.0,
        ));
    }
    report.details = serde_json::to_value(r).unwrap_or(Value::Null);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations() {
        assert!(Check::new("a", Anchor::Artifact, Severity::Hard, 1.0, Relation::AtMost, 1.0).pass);
        assert!(!Check::new("a", Anchor::Artifact, Severity::Hard, 1.0, Relation::Below, 1.0).pass);
        assert!(!Check::new("a", Anchor::Artifact, Severity::Hard, f64::NAN, Relation::AtLeast, 0.0).pass);
    }

    #[test]
    fn report_round_trip_and_strictness() {
        let mut r = InvariantReport::new(json!({"k": 1}));
        r.push(Check::new(
            "x",
            Anchor::MassConservation,
            Severity::Soft,
            0.5,
            Relation::AtMost,
            1.0,
        ));
        let text = r.to_json();
        assert_eq!(InvariantReport::from_json(&text).unwrap(), r);
        let unanchored = text.replace("\"anchor\": \"mass conservation\",", "");
        assert!(InvariantReport::from_json(&unanchored).is_err());
        let unknown = text.replace("mass conservation", "folklore");
        assert!(InvariantReport::from_json(&unknown).is_err());
    }

    #[test]
    fn soft_failures_do_not_fail_the_report() {
        let mut r = InvariantReport::new(Value::Null);
        r.push(Check::new(
            "s",
            Anchor::LinfBound,
            Severity::Soft,
            2.0,
            Relation::AtMost,
            1.0,
        ));
        assert!(r.passed());
        r.push(Check::new(
            "h",
            Anchor::NonNegativity,
            Severity::Hard,
            -1.0,
            Relation::AtLeast,
            0.0,
        ));
        assert!(!r.passed());
        assert_eq!(r.hard_failures().count(), 1);
    }
}
