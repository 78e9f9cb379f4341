//! Executes a [`RunConfig`] and writes its artifacts plus a hashed manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Mode, RunConfig, DEFAULT_ASSUMPTION_SAMPLES, DEFAULT_MEAN_FIELD_SEEDS};
use crate::error::{CboError, Result};
use crate::particles::{init_ensemble, run, trajectory_csv, CBOParams, RunOptions};
use crate::solver::{snapshot_csv, solve};
use crate::verify::{
    verify_assumption, verify_mean_field, verify_optimizer, verify_pde_run, verify_regularization_limit,
    InvariantReport, OptimizerSetup,
};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn text(name: impl Into<String>, text: String) -> Self {
        Self {
            name: name.into(),
            bytes: text.into_bytes(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// False iff the report has a hard failure.
    pub passed: bool,
    pub report: Option<InvariantReport>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub crate_version: String,
    pub config: RunConfig,
    pub passed: bool,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn report_outcome(report: InvariantReport, mut artifacts: Vec<Artifact>) -> RunOutcome {
    artifacts.insert(0, Artifact::text("report.json", report.to_json()));
    RunOutcome {
        passed: report.passed(),
        report: Some(report),
        artifacts,
    }
}

/// Runs the configured mode without touching the file system.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let f = cfg.objective()?;
    let dim = cfg.objective.dim;
    match cfg.mode {
        Mode::Particle => {
            let sampler = cfg.init.as_ref().expect("validated").sampler(dim);
            let seeds = cfg.seeds();
            let outs = seeds
                .par_iter()
                .map(|&seed| {
                    let params = CBOParams { seed, ..cfg.cbo };
                    let ens = init_ensemble(&sampler, &params, dim)?;
                    let out = run(
                        ens,
                        &f,
                        &params,
                        RunOptions {
                            stride: cfg.stride(),
                            regularization: cfg.reg.as_ref(),
                        },
                        &mut [],
                    )?;
                    Ok((seed, out))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut artifacts: Vec<Artifact> = outs
                .iter()
                .map(|(seed, out)| Artifact::text(format!("trajectory_seed{seed}.csv"), trajectory_csv(&out.records)))
                .collect();
            let finals: Vec<_> = outs
                .iter()
                .map(|(seed, o)| json!({"seed": seed, "final_consensus": o.final_consensus}))
                .collect();
            artifacts.push(Artifact::text(
                "final_consensus.json",
                serde_json::to_string_pretty(&finals).expect("serializable"),
            ));
            Ok(RunOutcome {
                passed: true,
                report: None,
                artifacts,
            })
        }
        Mode::Pde => {
            let solver = cfg.solver()?;
            let sol = solve(&cfg.initial_density()?, &f, &solver, &mut [])?;
            let mut artifacts: Vec<Artifact> = sol
                .snapshots
                .iter()
                .enumerate()
                .map(|(k, s)| Artifact::text(format!("snapshot_{k:04}.csv"), snapshot_csv(s)))
                .collect();
            artifacts.push(Artifact::text(
                "diagnostics.json",
                serde_json::to_string_pretty(&json!({"diagnostics": sol.diagnostics, "stats": sol.stats}))
                    .expect("serializable"),
            ));
            Ok(RunOutcome {
                passed: true,
                report: None,
                artifacts,
            })
        }
        Mode::VerifyPde => {
            let report = verify_pde_run(&cfg.solver()?, &f, &cfg.initial_density()?)?;
            Ok(report_outcome(report, Vec::new()))
        }
        Mode::VerifyMeanfield => {
            let n_list = cfg.n_list.as_deref().expect("validated");
            let seeds = cfg.mean_field_seeds.unwrap_or(DEFAULT_MEAN_FIELD_SEEDS);
            let (report, entries) = verify_mean_field(&cfg.solver()?, &f, &cfg.initial_density()?, n_list, seeds)?;
            let mut csv = String::from("n_particles,mean_w2\n");
            for e in &entries {
                csv.push_str(&format!("{},{}\n", e.n_particles, e.mean_w2));
            }
            Ok(report_outcome(report, vec![Artifact::text("mean_field_w2.csv", csv)]))
        }
        Mode::VerifyReg => {
            let eps = cfg.eps_list.as_deref().expect("validated");
            let (report, gaps) = verify_regularization_limit(eps, &cfg.solver()?, &f, &cfg.initial_density()?)?;
            let mut csv = String::from("eps_from,eps_to,l1,w2\n");
            for g in &gaps {
                let w2 = g.w2.map_or(String::new(), |w| w.to_string());
                csv.push_str(&format!("{},{},{},{}\n", g.eps_from, g.eps_to, g.l1, w2));
            }
            Ok(report_outcome(
                report,
                vec![Artifact::text("regularization_gaps.csv", csv)],
            ))
        }
        Mode::VerifyOptimizer => {
            let setup = OptimizerSetup {
                objective: f,
                params: cfg.cbo,
                sampler: cfg.init.as_ref().expect("validated").sampler(dim),
                seeds: cfg.seeds(),
                stride: cfg.stride(),
            };
            let study = verify_optimizer(&setup)?;
            let artifacts = study
                .runs
                .iter()
                .map(|(seed, out)| Artifact::text(format!("trajectory_seed{seed}.csv"), trajectory_csv(&out.records)))
                .collect();
            Ok(report_outcome(study.report, artifacts))
        }
        Mode::AssumptionCheck => {
            let samples = cfg.samples.unwrap_or(DEFAULT_ASSUMPTION_SAMPLES);
            let report = verify_assumption(&f, samples, cfg.cbo.seed)?;
            Ok(report_outcome(report, Vec::new()))
        }
    }
}

/// Removes what a failed write left behind.
struct Cleanup {
    created_root: Option<PathBuf>,
    files: Vec<PathBuf>,
    armed: bool,
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if let Some(root) = &self.created_root {
            let _ = fs::remove_dir_all(root);
        }
    }
}

fn first_missing_ancestor(dir: &Path) -> Option<PathBuf> {
    let mut missing = None;
    let mut cur = Some(dir);
    while let Some(p) = cur {
        if p.as_os_str().is_empty() || p.exists() {
            break;
        }
        missing = Some(p.to_path_buf());
        cur = p.parent();
    }
    missing
}

/// Writes the artifacts and, last, the manifest. On any I/O error every file
/// written here (and any directory created here) is removed again.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, outcome: &RunOutcome) -> Result<Manifest> {
    let mut guard = Cleanup {
        created_root: first_missing_ancestor(dir),
        files: Vec::new(),
        armed: true,
    };
    fs::create_dir_all(dir).map_err(|e| CboError::io(dir, e))?;
    let mut files = Vec::with_capacity(outcome.artifacts.len());
    for a in &outcome.artifacts {
        let path = dir.join(&a.name);
        guard.files.push(path.clone());
        fs::write(&path, &a.bytes).map_err(|e| CboError::io(&path, e))?;
        files.push(ManifestEntry {
            path: a.name.clone(),
            sha256: sha256_hex(&a.bytes),
            bytes: a.bytes.len() as u64,
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        passed: outcome.passed,
        files,
    };
    let path = dir.join(MANIFEST_NAME);
    guard.files.push(path.clone());
    let text = serde_json::to_string_pretty(&manifest).expect("serializable");
    fs::write(&path, text).map_err(|e| CboError::io(&path, e))?;
    guard.armed = false;
    Ok(manifest)
}

/// Executes `cfg` and writes into `dir`. Nothing is written if the run
/// aborts.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path) -> Result<(RunOutcome, Manifest)> {
    let outcome = execute(cfg)?;
    let manifest = write_outputs(dir, cfg, &outcome)?;
    Ok((outcome, manifest))
}

/// Files in `dir` whose contents no longer match the manifest.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| CboError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CboError::ConfigParse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut bad = Vec::new();
    for entry in &manifest.files {
        match fs::read(dir.join(&entry.path)) {
            Ok(bytes) if sha256_hex(&bytes) == entry.sha256 => {}
            _ => bad.push(entry.path.clone()),
        }
    }
    Ok(bad)
}
