//! Strict JSON run configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{CboError, Result};
use crate::grid::GridDensity;
use crate::objectives::{by_name, ObjectiveSpec};
use crate::particles::{CBOParams, Sampler};
use crate::regularization::RegularizationParams;
use crate::solver::SolverConfig;
use crate::thresholds;

pub const DEFAULT_CFL_SAFETY: f64 = 0.4;
pub const DEFAULT_MEAN_FIELD_SEEDS: usize = 10;
pub const DEFAULT_ASSUMPTION_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Particle,
    Pde,
    VerifyPde,
    VerifyMeanfield,
    VerifyReg,
    VerifyOptimizer,
    AssumptionCheck,
}

impl Mode {
    fn needs_grid(self) -> bool {
        matches!(
            self,
            Mode::Pde | Mode::VerifyPde | Mode::VerifyMeanfield | Mode::VerifyReg
        )
    }

    fn needs_init(self) -> bool {
        !matches!(self, Mode::AssumptionCheck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// `rastrigin` or `quadratic`.
    pub name: String,
    #[serde(default = "one")]
    pub dim: usize,
    /// Rastrigin minimizer coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    /// Quadratic minimizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

impl ObjectiveConfig {
    pub fn build(&self) -> Result<ObjectiveSpec> {
        by_name(&self.name, self.dim, self.shift, self.center.as_deref())
    }
}

/// Initial law: sampled for particles, rendered on the grid for the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitConfig {
    Uniform { low: f64, high: f64 },
    Gaussian { mean: Vec<f64>, sd: f64 },
}

impl InitConfig {
    pub fn sampler(&self, dim: usize) -> Sampler {
        match self {
            InitConfig::Uniform { low, high } => Sampler::Uniform { low: *low, high: *high },
            InitConfig::Gaussian { mean, sd } => Sampler::Gaussian {
                mean: if mean.len() == 1 {
                    vec![mean[0]; dim]
                } else {
                    mean.clone()
                },
                sd: *sd,
            },
        }
    }

    pub fn density(&self, dim: usize, cells: usize, half_width: f64) -> Result<GridDensity> {
        match self {
            InitConfig::Uniform { low, high } => GridDensity::uniform(dim, cells, half_width, *low, *high),
            InitConfig::Gaussian { mean, sd } => {
                let m = if mean.len() == 1 {
                    vec![mean[0]; dim]
                } else {
                    mean.clone()
                };
                GridDensity::gaussian(dim, cells, half_width, &m, *sd)
            }
        }
    }

    fn problems(&self, dim: usize, out: &mut Vec<String>) {
        match self {
            InitConfig::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    out.push(format!("init: need finite low < high, got [{low}, {high}]"));
                }
            }
            InitConfig::Gaussian { mean, sd } => {
                if !(mean.len() == 1 || mean.len() == dim) {
                    out.push(format!("init.mean: expected 1 or {dim} entries, got {}", mean.len()));
                }
                if !(*sd > 0.0 && sd.is_finite()) {
                    out.push(format!("init.sd: must be finite and positive, got {sd}"));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Half width `L` of the box `[-L, L]^d`.
    pub half_width: f64,
    /// Cells per axis.
    pub cells: usize,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
}

fn default_cfl() -> f64 {
    DEFAULT_CFL_SAFETY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub objective: ObjectiveConfig,
    pub cbo: CBOParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<RegularizationParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Seeds for particle and optimizer runs; defaults to `cbo.seed` alone,
    /// or `0..=19` for `verify-optimizer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Record every `stride`-th particle step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    /// Seeds per particle count in `verify-meanfield`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_field_seeds: Option<usize>,
    /// Random points for `assumption-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

/// Parses and validates `text`. Syntax and type errors carry the key path;
/// validation reports every violated rule at once.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        CboError::ConfigParse {
            path,
            message: format!("{inner} (line {}, column {})", inner.line(), inner.column()),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config values serialize")
    }

    pub fn seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.mode) {
            (Some(s), _) => s.clone(),
            (None, Mode::VerifyOptimizer) => (0..20).collect(),
            (None, _) => vec![self.cbo.seed],
        }
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(1)
    }

    pub fn objective(&self) -> Result<ObjectiveSpec> {
        self.objective.build()
    }

    /// Solver settings for grid modes.
    pub fn solver(&self) -> Result<SolverConfig> {
        let grid = self
            .grid
            .ok_or_else(|| CboError::param("grid", "required for this mode"))?;
        let reg = self
            .reg
            .ok_or_else(|| CboError::param("reg", "required for this mode"))?;
        Ok(SolverConfig {
            cbo: self.cbo,
            reg,
            dim: self.objective.dim,
            half_width: grid.half_width,
            cells: grid.cells,
            cfl_safety: grid.cfl_safety,
            t_final: self.cbo.t_final,
            snapshot_interval: self.snapshot_interval,
        })
    }

    pub fn initial_density(&self) -> Result<GridDensity> {
        let grid = self
            .grid
            .ok_or_else(|| CboError::param("grid", "required for this mode"))?;
        let init = self
            .init
            .as_ref()
            .ok_or_else(|| CboError::param("init", "required for this mode"))?;
        init.density(self.objective.dim, grid.cells, grid.half_width)
    }

    /// Collects every violated rule.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        let dim = self.objective.dim;
        let objective = self.objective.build();
        if let Err(e) = &objective {
            p.push(format!("objective: {e}"));
        }
        if let Err(e) = self.cbo.validate() {
            p.push(format!("cbo: {e}"));
        }
        if let Some(r) = &self.reg {
            if let Err(e) = r.validate() {
                p.push(format!("reg: {e}"));
            }
        }
        match &self.init {
            Some(init) => init.problems(dim, &mut p),
            None if self.mode.needs_init() => p.push("init: required for this mode".into()),
            None => {}
        }
        if self.stride == Some(0) {
            p.push("stride: must be positive".into());
        }
        if let Some(s) = self.snapshot_interval {
            if !(s > 0.0 && s.is_finite()) {
                p.push(format!("snapshot_interval: must be finite and positive, got {s}"));
            }
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            p.push("seeds: must not be empty".into());
        }
        if self.mode.needs_grid() {
            if self.reg.is_none() {
                p.push("reg: required for this mode".into());
            }
            match &self.grid {
                None => p.push("grid: required for this mode".into()),
                Some(g) => {
                    if !(g.cfl_safety > 0.0 && g.cfl_safety <= 1.0) {
                        p.push(format!("grid.cfl_safety: must lie in (0, 1], got {}", g.cfl_safety));
                    }
                    if let (Some(r), true) = (&self.reg, g.half_width > 0.0) {
                        let need = 2.0 * r.radius + 4.0 * r.epsilon;
                        if need > g.half_width {
                            p.push(format!(
                                "grid.half_width: margin rule 2R + 4eps <= L violated ({need} > {})",
                                g.half_width
                            ));
                        }
                    }
                    let parts_ok = self.cbo.validate().is_ok() && self.reg.is_some_and(|r| r.validate().is_ok());
                    if parts_ok && g.cfl_safety > 0.0 && g.cfl_safety <= 1.0 {
                        if let Ok(s) = self.solver() {
                            match s.validate() {
                                Err(CboError::Margin(_)) | Ok(()) => {}
                                Err(e) => p.push(format!("grid: {e}")),
                            }
                        }
                    }
                }
            }
        }
        match self.mode {
            Mode::VerifyMeanfield => {
                if dim != 1 {
                    p.push("objective.dim: verify-meanfield needs d = 1".into());
                }
                match &self.n_list {
                    None => p.push("n_list: required for verify-meanfield".into()),
                    Some(n) if n.is_empty() || n.contains(&0) => p.push("n_list: need positive particle counts".into()),
                    _ => {}
                }
                if self.mean_field_seeds == Some(0) {
                    p.push("mean_field_seeds: must be positive".into());
                }
            }
            Mode::VerifyReg => match &self.eps_list {
                None => p.push("eps_list: required for verify-reg".into()),
                Some(e) => {
                    if e.is_empty() {
                        p.push("eps_list: must not be empty".into());
                    }
                    if e.windows(2).any(|w| !(w[1] < w[0])) {
                        p.push("eps_list: must be strictly decreasing".into());
                    }
                    if e.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                        p.push("eps_list: entries must be finite and positive".into());
                    }
                }
            },
            Mode::VerifyOptimizer => {
                if let Ok(f) = &objective {
                    if f.known_minimizer.is_none() {
                        p.push("objective: verify-optimizer needs a known minimizer".into());
                    }
                }
            }
            Mode::AssumptionCheck if self.samples == Some(0) => {
                p.push("samples: must be positive".into());
            }
            _ => {}
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(CboError::ConfigInvalid(p))
        }
    }
}

/// Benchmark setting: Rastrigin with minimizer 1, uniform start on `[0, 4]`.
pub fn rastrigin_benchmark_config() -> RunConfig {
    RunConfig {
        mode: Mode::VerifyOptimizer,
        objective: ObjectiveConfig {
            name: "rastrigin".into(),
            dim: 1,
            shift: Some(1.0),
            center: None,
        },
        cbo: CBOParams {
            lambda: 1.0,
            sigma: 1.0,
            alpha: thresholds::BENCH_ALPHA.value,
            dt: thresholds::BENCH_DT.value,
            t_final: thresholds::BENCH_HORIZON.value,
            n_particles: thresholds::BENCH_PARTICLES.value as usize,
            seed: 0,
        },
        init: Some(InitConfig::Uniform { low: 0.0, high: 4.0 }),
        reg: None,
        grid: None,
        output_dir: None,
        seeds: None,
        stride: Some(10),
        snapshot_interval: None,
        n_list: None,
        eps_list: None,
        mean_field_seeds: None,
        samples: None,
    }
}
