//! Experiment configuration files.
//!
//! A config is a single TOML document. Key reference:
//!
//! ```toml
//! kind = "simulate"        # simulate | spectral-limit | backward-probe | check | convergence | gradcheck
//! output = "runs/demo"     # optional; defaults to $SQLAB_OUTPUT_ROOT/<kind>-<hash8>
//! write_paths = false      # also write paths/<idx>.csv
//!
//! [system]                 # registry name plus its parameters
//! name = "diagonal"
//! tilde_eigs = [1.0, 4.0, 9.0]
//! noise = [[0.3, 0.2, 0.1]]
//!
//! [discretization]
//! T = 1.0
//! dt = 1e-3
//! modes = 32               # optional truncation for torus-type systems
//! scheme = "drift-implicit"
//!
//! [ensemble]
//! paths = 1
//! master_seed = 0
//!
//! [diagnostics]
//! eps_list = [1e-8]
//! delta = 1e-8
//! r_list = []
//! N_list = []
//! tau_index = 0
//! tol_constant = 1.0
//! bounds = true
//!
//! [convergence]
//! levels = 4
//!
//! [gradcheck]
//! trials = 100
//! dim = 6
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::DEFAULT_TOL_CONSTANT;
use crate::error::{Error, Result};
use crate::integrator::{Scheme, TimeGrid};
use crate::systems::SystemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    SpectralLimit,
    BackwardProbe,
    Check,
    Convergence,
    Gradcheck,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::SpectralLimit => "spectral-limit",
            ExperimentKind::BackwardProbe => "backward-probe",
            ExperimentKind::Check => "check",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Gradcheck => "gradcheck",
        }
    }

    /// Whether the kind integrates an ensemble of paths.
    pub fn integrates_paths(&self) -> bool {
        matches!(self, ExperimentKind::Simulate | ExperimentKind::SpectralLimit | ExperimentKind::BackwardProbe)
    }

    fn needs_system(&self) -> bool {
        !matches!(self, ExperimentKind::Gradcheck)
    }

    fn needs_grid(&self) -> bool {
        self.integrates_paths() || matches!(self, ExperimentKind::Convergence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    #[serde(default)]
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    #[serde(default = "one")]
    pub paths: usize,
    #[serde(default)]
    pub master_seed: u64,
}

impl Default for Ensemble {
    fn default() -> Self {
        Ensemble { paths: 1, master_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub r_list: Vec<f64>,
    #[serde(default, rename = "N_list", alias = "n_list")]
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub tau_index: usize,
    #[serde(default = "default_tol_constant")]
    pub tol_constant: f64,
    /// Evaluate the bound process and envelope with constants from the
    /// assumption checks.
    #[serde(default = "yes")]
    pub bounds: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            eps_list: default_eps_list(),
            delta: default_delta(),
            r_list: Vec::new(),
            n_list: Vec::new(),
            tau_index: 0,
            tol_constant: default_tol_constant(),
            bounds: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(default = "default_levels")]
    pub levels: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig { levels: default_levels() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_gradcheck_dim")]
    pub dim: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { trials: default_trials(), dim: default_gradcheck_dim() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub write_paths: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discretization: Option<Discretization>,
    #[serde(default)]
    pub ensemble: Ensemble,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_eps_list() -> Vec<f64> {
    vec![1e-8]
}

fn default_delta() -> f64 {
    1e-8
}

fn default_tol_constant() -> f64 {
    DEFAULT_TOL_CONSTANT
}

fn default_levels() -> usize {
    4
}

fn default_trials() -> usize {
    100
}

fn default_gradcheck_dim() -> usize {
    6
}

impl ExperimentConfig {
    /// The `[system]` block; present for every kind but `gradcheck`.
    pub fn system(&self) -> Result<&SystemConfig> {
        self.system.as_ref().ok_or_else(|| Error::Config { line: None, msg: "missing [system] block".into() })
    }

    pub fn discretization(&self) -> Result<&Discretization> {
        self.discretization.as_ref().ok_or_else(|| Error::Config { line: None, msg: "missing [discretization] block".into() })
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        let d = self.discretization()?;
        TimeGrid::new(d.t_end, d.dt)
    }

    /// Re-targets the config at another experiment kind and revalidates.
    pub fn with_kind(mut self, kind: ExperimentKind) -> Result<Self> {
        self.kind = kind;
        self.validate(None)?;
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config { line: None, msg: e.to_string() })
    }

    /// Checks the invariants that do not need the system to be built.
    /// `src` is the text the config came from, used to locate offending keys.
    fn validate(&self, src: Option<&str>) -> Result<()> {
        let at = |table: &str, key: &str| src.and_then(|s| locate_key(s, table, key));
        let fail = |line: Option<usize>, msg: String| Err(Error::Config { line, msg });
        if self.kind.needs_system() && self.system.is_none() {
            return fail(None, format!("kind `{}` needs a [system] block", self.kind.name()));
        }
        if self.kind.needs_grid() {
            let Some(d) = &self.discretization else {
                return fail(None, format!("kind `{}` needs a [discretization] block", self.kind.name()));
            };
            if !(d.dt > 0.0 && d.dt.is_finite()) {
                return fail(at("discretization", "dt"), format!("dt = {} must be positive", d.dt));
            }
            if !(d.t_end > 0.0 && d.t_end.is_finite()) {
                return fail(at("discretization", "T"), format!("T = {} must be positive", d.t_end));
            }
            if TimeGrid::new(d.t_end, d.dt).is_err() {
                return fail(at("discretization", "dt"), format!("dt = {} does not divide T = {}", d.dt, d.t_end));
            }
            if d.modes == Some(0) {
                return fail(at("discretization", "modes"), "modes must be at least 1".into());
            }
        }
        if self.ensemble.paths == 0 {
            return fail(at("ensemble", "paths"), "paths must be at least 1".into());
        }
        let diag = &self.diagnostics;
        if diag.eps_list.is_empty() {
            return fail(at("diagnostics", "eps_list"), "eps_list must not be empty".into());
        }
        if let Some(e) = diag.eps_list.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return fail(at("diagnostics", "eps_list"), format!("eps_list value {e} must be nonnegative"));
        }
        if !(diag.delta >= 0.0 && diag.delta.is_finite()) {
            return fail(at("diagnostics", "delta"), format!("delta = {} must be nonnegative", diag.delta));
        }
        if let Some(r) = diag.r_list.iter().find(|r| !(**r > 0.0)) {
            return fail(at("diagnostics", "r_list"), format!("r_list value {r} must be positive"));
        }
        if diag.n_list.contains(&0) {
            return fail(at("diagnostics", "N_list").or(at("diagnostics", "n_list")), "N_list values must be positive".into());
        }
        if self.kind == ExperimentKind::Convergence && self.convergence.levels < 2 {
            return fail(at("convergence", "levels"), "levels must be at least 2".into());
        }
        if self.kind == ExperimentKind::Gradcheck && (self.gradcheck.trials == 0 || self.gradcheck.dim == 0) {
            return fail(at("gradcheck", "trials"), "trials and dim must be at least 1".into());
        }
        Ok(())
    }
}

/// Parses and validates a config from TOML text.
pub fn parse_config(src: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| Error::Config {
        line: e.span().map(|s| line_of_offset(src, s.start)),
        msg: e.message().trim().to_string(),
    })?;
    cfg.validate(Some(src))?;
    Ok(cfg)
}

/// Reads, parses and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let src = std::fs::read_to_string(path.as_ref())?;
    parse_config(&src)
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// 1-based line of `key = ...` inside `[table]` (`""` for the root table).
fn locate_key(src: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == table {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "simulate"

[system]
name = "diagonal"
tilde_eigs = [1.0, 4.0, 9.0]

[discretization]
T = 1.0
dt = 0.01
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.discretization().unwrap().scheme, Scheme::DriftImplicit);
        assert_eq!(cfg.diagnostics.eps_list, vec![1e-8]);
        assert_eq!(cfg.ensemble.paths, 1);
        assert_eq!(cfg.system().unwrap().name(), "diagonal");
    }

    #[test]
    fn non_dividing_dt_names_both_values_and_line() {
        let src = MINIMAL.replace("dt = 0.01", "dt = 0.3");
        let err = parse_config(&src).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0.3") && msg.contains("T = 1"), "{msg}");
        assert!(matches!(err, Error::Config { line: Some(10), .. }), "{err:?}");
    }

    #[test]
    fn unknown_system_and_missing_keys_are_located() {
        let err = parse_config(&MINIMAL.replace("\"diagonal\"", "\"klein-bottle\"")).unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(_), .. }), "{err:?}");
        assert!(err.to_string().contains("klein-bottle"));
        let err = parse_config(&MINIMAL.replace("dt = 0.01\n", "")).unwrap_err();
        assert!(err.to_string().contains("dt"), "{err}");
        let err = parse_config("kind = \"simulate\"\n").unwrap_err();
        assert!(err.to_string().contains("[system]"));
    }

    #[test]
    fn invariants_are_enforced() {
        let bad_paths = format!("{MINIMAL}\n[ensemble]\npaths = 0\n");
        assert!(matches!(parse_config(&bad_paths).unwrap_err(), Error::Config { line: Some(13), .. }));
        let bad_eps = format!("{MINIMAL}\n[diagnostics]\neps_list = [-1.0]\n");
        assert!(parse_config(&bad_eps).is_err());
    }

    #[test]
    fn round_trip_preserves_the_config() {
        let src = format!(
            "{MINIMAL}\n[ensemble]\npaths = 3\nmaster_seed = 9\n\n[diagnostics]\neps_list = [1e-8, 1e-4]\nN_list = [1, 2]\nr_list = [0.5]\n"
        );
        let cfg = parse_config(&src).unwrap();
        let again = parse_config(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        for entry in crate::systems::registry() {
            let cfg = ExperimentConfig {
                kind: ExperimentKind::Check,
                output: None,
                write_paths: false,
                system: Some(entry.example.clone()),
                discretization: None,
                ensemble: Ensemble::default(),
                diagnostics: DiagnosticsConfig::default(),
                convergence: ConvergenceConfig::default(),
                gradcheck: GradcheckConfig::default(),
            };
            let text = cfg.to_toml().unwrap();
            assert_eq!(parse_config(&text).unwrap(), cfg, "{}:\n{text}", entry.name);
        }
    }

    #[test]
    fn gradcheck_needs_no_system() {
        let cfg = parse_config("kind = \"gradcheck\"\n[gradcheck]\ntrials = 5\n").unwrap();
        assert_eq!(cfg.gradcheck.trials, 5);
        assert!(cfg.system().is_err());
    }
}
