//! Experiment orchestration: configs in, run directories out.
//!
//! A run directory holds `manifest.json`, `report.json`,
//! `diagnostics/<idx>.csv` for every completed path and, when requested,
//! `paths/<idx>.csv`. Path `idx` is driven by the stream `(master_seed, idx)`,
//! so outputs do not depend on the number of worker threads.

mod config;
mod summary;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    load_config, parse_config, ConvergenceConfig, DiagnosticsConfig, Discretization, Ensemble, ExperimentConfig,
    ExperimentKind, GradcheckConfig,
};
pub use summary::{report_summary, violation_ladder, LadderEntry, RunSummary, ViolationLadder};

use crate::assumptions::{check_assumptions, AssumptionReport, CheckOptions, SCHEMA_VERSION};
use crate::diagnostics::{
    compute_series, gradcheck, martingale_normalization, spectral_limit_from_samples, BackwardProbeReport, BoundConstants,
    DiagnosticOptions, GapTable, GradcheckReport, HittingTime, InequalityCheck, LimitSample, MartingaleCheck, ProbePath,
    SpectralLimitReport,
};
use crate::error::{Error, Result};
use crate::integrator::{integrate, strong_error_ladder, write_trajectory_csv, ConvergenceReport, Scheme, TimeGrid};
use crate::spectral::{assemble_tilde_a, spectrum};
use crate::systems::SystemSpec;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "SQLAB_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum PathStatus {
    Completed,
    BlowUp { time: f64 },
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub index: usize,
    pub seed: u64,
    pub stream_id: u64,
    #[serde(flatten)]
    pub status: PathStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub code_version: String,
    pub kind: ExperimentKind,
    pub system: Option<String>,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    pub paths: Vec<PathRecord>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Files written, relative to `output_dir`.
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self> {
        let path = run_dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|_| Error::MissingFile { path: path.clone() })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn completed(&self) -> usize {
        self.paths.iter().filter(|p| p.status == PathStatus::Completed).count()
    }
}

/// Violations of one inequality summed over steps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InequalityTally {
    pub violations: usize,
    pub checked: usize,
}

impl InequalityTally {
    fn of(check: &InequalityCheck) -> Self {
        InequalityTally { violations: check.violations(), checked: check.checked_steps() }
    }

    fn add(&mut self, other: InequalityTally) {
        self.violations += other.violations;
        self.checked += other.checked;
    }

    pub fn rate(&self) -> Option<f64> {
        (self.checked > 0).then(|| self.violations as f64 / self.checked as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSummary {
    pub eps: f64,
    pub final_quotient: Option<f64>,
    pub x_bound: Option<InequalityTally>,
    pub envelope: Option<InequalityTally>,
    pub gaps: Option<GapTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub index: usize,
    pub final_norm: f64,
    /// `⟨Ãu,u⟩/|u|²` at `T`.
    pub final_rayleigh: Option<f64>,
    pub martingale_terminal: Option<f64>,
    pub vanishing_steps: usize,
    pub integrability: Option<f64>,
    /// Largest `|u|_D` along the path; the discrete regularity monitor.
    pub max_norm_d: f64,
    pub hitting: Vec<HittingTime>,
    pub per_eps: Vec<EpsSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsTally {
    pub eps: f64,
    pub x_bound: Option<InequalityTally>,
    pub x_violation_rate: Option<f64>,
    pub envelope: Option<InequalityTally>,
    pub envelope_violation_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub requested: usize,
    pub completed: usize,
    pub blown_up: usize,
    pub failed: usize,
    /// Mean-one test of `M_δ(T)` over completed paths.
    pub martingale: Option<MartingaleCheck>,
    pub delta: f64,
    pub inequalities: Vec<EpsTally>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub system: Option<String>,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumptions: Option<AssumptionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub paths: Vec<PathSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectral_limit: Option<SpectralLimitReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backward_probe: Option<BackwardProbeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradcheckReport>,
}

/// Hex SHA-256 of the canonical TOML form of `config`.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(config.to_toml()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Where `run` writes: the config's `output`, else
/// `$SQLAB_OUTPUT_ROOT/<kind>-<hash8>`, else `runs/<kind>-<hash8>`.
pub fn output_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    if let Some(dir) = &config.output {
        return Ok(dir.clone());
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
    let hash = config_hash(config)?;
    Ok(root.join(format!("{}-{}", config.kind.name(), &hash[..8])))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs the experiment and writes its directory.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    let dir = output_dir(config)?;
    run_in(config, &dir)
}

/// As [`run`] with an explicit output directory.
pub fn run_in(config: &ExperimentConfig, dir: &Path) -> Result<RunManifest> {
    let started_unix = unix_now();
    let config_hash = config_hash(config)?;
    fs::create_dir_all(dir)?;
    let system = match config.kind {
        ExperimentKind::Gradcheck => None,
        _ => {
            let modes = config.discretization.as_ref().and_then(|d| d.modes);
            Some(config.system()?.build(modes)?)
        }
    };
    let mut report = RunReport {
        schema_version: SCHEMA_VERSION,
        kind: config.kind,
        system: system.as_ref().map(|s| s.name.clone()),
        config_hash: config_hash.clone(),
        assumptions: None,
        ensemble: None,
        paths: Vec::new(),
        spectral_limit: None,
        backward_probe: None,
        convergence: None,
        gradcheck: None,
    };
    let seed = config.ensemble.master_seed;
    let mut records = Vec::new();
    let mut files = Vec::new();
    match config.kind {
        ExperimentKind::Gradcheck => {
            report.gradcheck = Some(gradcheck(config.gradcheck.trials, config.gradcheck.dim, seed)?);
        }
        ExperimentKind::Check => {
            let system = system.as_ref().expect("built above");
            report.assumptions = Some(check_assumptions(system, &CheckOptions { seed, ..CheckOptions::default() })?);
        }
        ExperimentKind::Convergence => {
            let system = system.as_ref().expect("built above");
            let d = config.discretization()?;
            report.convergence = Some(strong_error_ladder(
                system,
                d.scheme,
                d.t_end,
                d.dt,
                config.convergence.levels,
                config.ensemble.paths,
                seed,
            )?);
        }
        ExperimentKind::Simulate | ExperimentKind::SpectralLimit | ExperimentKind::BackwardProbe => {
            let system = system.as_ref().expect("built above");
            let ensemble = run_ensemble(config, system, dir, &mut report)?;
            records = ensemble.records;
            files = ensemble.files;
        }
    }
    write_json(&dir.join(REPORT_FILE), &report)?;
    files.push(REPORT_FILE.to_string());
    files.push(MANIFEST_FILE.to_string());
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: config.kind,
        system: report.system.clone(),
        output_dir: dir.to_path_buf(),
        master_seed: seed,
        paths: records,
        started_unix,
        finished_unix: unix_now(),
        files,
        config: config.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

struct EnsembleOutput {
    records: Vec<PathRecord>,
    files: Vec<String>,
}

struct PathOutcome {
    status: PathStatus,
    files: Vec<String>,
    summary: Option<PathSummary>,
    limit: Option<LimitSample>,
    probe: Option<ProbePath>,
}

struct PathContext<'a> {
    config: &'a ExperimentConfig,
    system: &'a SystemSpec,
    grid: TimeGrid,
    scheme: Scheme,
    constants: Option<BoundConstants>,
    dir: &'a Path,
}

fn diagnostics_file(index: usize, k: usize) -> String {
    if k == 0 {
        format!("diagnostics/{index}.csv")
    } else {
        format!("diagnostics/{index}-eps{k}.csv")
    }
}

impl PathContext<'_> {
    fn run_path(&self, index: usize) -> PathOutcome {
        match self.try_path(index) {
            Ok(outcome) => outcome,
            Err(e) => {
                let status = match e {
                    Error::BlowUp { t } => PathStatus::BlowUp { time: t },
                    other => PathStatus::Failed { message: other.to_string() },
                };
                PathOutcome { status, files: Vec::new(), summary: None, limit: None, probe: None }
            }
        }
    }

    fn try_path(&self, index: usize) -> Result<PathOutcome> {
        let seed = self.config.ensemble.master_seed;
        let traj = integrate(self.system, self.scheme, &self.grid, seed, index as u64)?;
        let mut files = Vec::new();
        if self.config.write_paths {
            let name = format!("paths/{index}.csv");
            write_trajectory_csv(fs::File::create(self.dir.join(&name))?, &traj)?;
            files.push(name);
        }
        let diag = &self.config.diagnostics;
        let mut per_eps = Vec::with_capacity(diag.eps_list.len());
        let mut head = None;
        for (k, &eps) in diag.eps_list.iter().enumerate() {
            let opts = DiagnosticOptions {
                eps,
                delta: diag.delta,
                tau_index: diag.tau_index,
                r_list: diag.r_list.clone(),
                n_list: diag.n_list.clone(),
                tol_constant: diag.tol_constant,
            };
            let series = compute_series(&traj, self.system, self.constants.as_ref(), &opts)?;
            let name = diagnostics_file(index, k);
            series.write_csv(fs::File::create(self.dir.join(&name))?)?;
            files.push(name);
            per_eps.push(EpsSummary {
                eps,
                final_quotient: series.quotient.last().copied().filter(|q| q.is_finite()),
                x_bound: series.x_check.as_ref().map(InequalityTally::of),
                envelope: series.envelope.as_ref().map(InequalityTally::of),
                gaps: series.gaps.clone(),
            });
            if k == 0 {
                head = Some(series);
            }
        }
        let head = head.expect("eps_list is nonempty");
        let finite = |v: f64| v.is_finite().then_some(v);
        let summary = PathSummary {
            index,
            final_norm: *head.norm_h.last().expect("nonempty"),
            final_rayleigh: head.rayleigh.last().copied().and_then(finite),
            martingale_terminal: head.martingale.last().copied().and_then(finite),
            vanishing_steps: head.vanishing_steps,
            integrability: finite(head.integrability),
            max_norm_d: head.norm_d.iter().copied().fold(0.0, f64::max),
            hitting: head.hitting.clone(),
            per_eps,
        };
        let limit = (self.config.kind == ExperimentKind::SpectralLimit).then(|| LimitSample::from_series(&head));
        let probe = (self.config.kind == ExperimentKind::BackwardProbe).then(|| ProbePath::from_trajectory(index, &traj));
        Ok(PathOutcome { status: PathStatus::Completed, files, summary: Some(summary), limit, probe })
    }
}

fn run_ensemble(config: &ExperimentConfig, system: &SystemSpec, dir: &Path, report: &mut RunReport) -> Result<EnsembleOutput> {
    let grid = config.grid()?;
    let d = config.discretization()?;
    if d.scheme == Scheme::Milstein && !system.commuting_noise {
        return Err(Error::NonCommutingNoise { scheme: d.scheme.name().into() });
    }
    let diag = &config.diagnostics;
    if let Some(&bad) = diag.n_list.iter().find(|&&n| n > system.basis.dim()) {
        return Err(Error::TruncationTooLarge { requested: bad, dim: system.basis.dim() });
    }
    let constants = if diag.bounds {
        let assumptions = check_assumptions(system, &CheckOptions { seed: config.ensemble.master_seed, ..CheckOptions::default() })?;
        let c = BoundConstants::from_report(&assumptions);
        report.assumptions = Some(assumptions);
        Some(c)
    } else {
        None
    };
    fs::create_dir_all(dir.join("diagnostics"))?;
    if config.write_paths {
        fs::create_dir_all(dir.join("paths"))?;
    }
    let ctx = PathContext { config, system, grid, scheme: d.scheme, constants, dir };
    let outcomes: Vec<PathOutcome> = (0..config.ensemble.paths).into_par_iter().map(|i| ctx.run_path(i)).collect();

    let seed = config.ensemble.master_seed;
    let mut records = Vec::with_capacity(outcomes.len());
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    let mut limits = Vec::new();
    let mut probes = Vec::new();
    for (index, o) in outcomes.into_iter().enumerate() {
        records.push(PathRecord { index, seed, stream_id: index as u64, status: o.status });
        files.extend(o.files);
        summaries.extend(o.summary);
        limits.extend(o.limit);
        probes.extend(o.probe);
    }
    let count = |f: fn(&PathStatus) -> bool| records.iter().filter(|r| f(&r.status)).count();
    let terminal_m: Vec<f64> = summaries.iter().filter_map(|s| s.martingale_terminal).collect();
    let inequalities = diag
        .eps_list
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let mut x: Option<InequalityTally> = None;
            let mut env: Option<InequalityTally> = None;
            for s in &summaries {
                if let Some(t) = s.per_eps[k].x_bound {
                    x.get_or_insert_with(InequalityTally::default).add(t);
                }
                if let Some(t) = s.per_eps[k].envelope {
                    env.get_or_insert_with(InequalityTally::default).add(t);
                }
            }
            EpsTally {
                eps,
                x_violation_rate: x.and_then(|t| t.rate()),
                x_bound: x,
                envelope_violation_rate: env.and_then(|t| t.rate()),
                envelope: env,
            }
        })
        .collect();
    report.ensemble = Some(EnsembleSummary {
        dt: grid.dt(),
        t_end: grid.t_end(),
        scheme: d.scheme,
        requested: config.ensemble.paths,
        completed: count(|s| *s == PathStatus::Completed),
        blown_up: count(|s| matches!(s, PathStatus::BlowUp { .. })),
        failed: count(|s| matches!(s, PathStatus::Failed { .. })),
        martingale: if terminal_m.len() >= 2 { Some(martingale_normalization(&terminal_m)?) } else { None },
        delta: diag.delta,
        inequalities,
    });
    if config.kind == ExperimentKind::SpectralLimit && !limits.is_empty() {
        let tilde = assemble_tilde_a(&system.ops, grid.t_end())?;
        report.spectral_limit = Some(spectral_limit_from_samples(&limits, &spectrum(&tilde.sym_part, true)?)?);
    }
    if config.kind == ExperimentKind::BackwardProbe && !probes.is_empty() {
        report.backward_probe = Some(crate::diagnostics::backward_probe(probes)?);
    }
    report.paths = summaries;
    Ok(EnsembleOutput { records, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diagonal_config(kind: &str, paths: usize) -> ExperimentConfig {
        parse_config(&format!(
            r#"
kind = "{kind}"

[system]
name = "diagonal"
tilde_eigs = [1.0, 4.0, 9.0]
noise = [[0.3, 0.2, 0.1]]

[discretization]
T = 2.0
dt = 0.01

[ensemble]
paths = {paths}
master_seed = 3

[diagnostics]
r_list = [0.1]
N_list = [1, 2, 3]
"#
        ))
        .unwrap()
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = diagonal_config("simulate", 2);
        let b = diagonal_config("simulate", 3);
        assert_eq!(config_hash(&a).unwrap(), config_hash(&a.clone()).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn simulate_writes_the_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = diagonal_config("simulate", 3);
        cfg.write_paths = true;
        let m = run_in(&cfg, dir.path()).unwrap();
        assert_eq!(m.completed(), 3);
        for f in &m.files {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(dir.path().join("paths/2.csv").exists());
        let loaded = RunManifest::load(dir.path()).unwrap();
        assert_eq!(loaded.paths, m.paths);
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(report["schema_version"], SCHEMA_VERSION);
        assert_eq!(report["ensemble"]["completed"], 3);
        assert!(report["assumptions"]["ac4"].is_object());
    }

    #[test]
    fn blow_up_is_recorded_per_path() {
        // explicit Euler far beyond its stability limit
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config(
            r#"
kind = "simulate"
[system]
name = "diagonal"
tilde_eigs = [1.0, 1e6]
[discretization]
T = 1.0
dt = 0.01
scheme = "euler-maruyama"
[ensemble]
paths = 2
[diagnostics]
bounds = false
"#,
        )
        .unwrap();
        let m = run_in(&cfg, dir.path()).unwrap();
        assert!(m.paths.iter().all(|p| matches!(p.status, PathStatus::BlowUp { .. })));
        assert!(dir.path().join(REPORT_FILE).exists());
    }

    #[test]
    fn milstein_on_noncommuting_noise_is_rejected() {
        // cos(y)∂x and ∂y do not commute
        let cfg = parse_config(
            r#"
kind = "simulate"
[system]
name = "torus-gradient-noise"
dim = 2
sigma = [{ terms = [{ amp = 0.3, wave = [0, 1], kind = "cos" }] }, { constant = 0.5 }]
[discretization]
T = 0.1
dt = 0.01
modes = 5
scheme = "milstein"
"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let r = run_in(&cfg, dir.path());
        assert!(matches!(r, Err(Error::NonCommutingNoise { .. })), "{r:?}");
    }

    #[test]
    fn gradcheck_and_check_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config("kind = \"gradcheck\"\n[gradcheck]\ntrials = 10\n").unwrap();
        let m = run_in(&cfg, dir.path()).unwrap();
        assert!(m.paths.is_empty());
        let report: RunReport = serde_json::from_str(&fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
        assert!(report.gradcheck.unwrap().passes(1e-6, 1e-5));
        let dir = tempfile::tempdir().unwrap();
        let m = run_in(&diagonal_config("check", 1), dir.path()).unwrap();
        assert_eq!(m.system.as_deref(), Some("diagonal"));
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(report["assumptions"]["ac2"]["status"], "certified");
    }

    #[test]
    fn output_root_defaults_to_kind_and_hash() {
        let cfg = diagonal_config("simulate", 1);
        let dir = output_dir(&cfg).unwrap();
        let name = dir.file_name().unwrap().to_str().unwrap().to_string();
        assert!(name.starts_with("simulate-") && name.len() == "simulate-".len() + 8, "{name}");
        let mut explicit = cfg.clone();
        explicit.output = Some(PathBuf::from("/tmp/x"));
        assert_eq!(output_dir(&explicit).unwrap(), PathBuf::from("/tmp/x"));
    }
}
