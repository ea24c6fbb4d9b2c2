//! Aggregates of a finished run directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ExperimentKind, PathStatus, RunManifest, REPORT_FILE};
use crate::assumptions::SCHEMA_VERSION;
use crate::diagnostics::{HistogramBin, MartingaleCheck};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub run_dir: PathBuf,
    pub kind: ExperimentKind,
    pub system: Option<String>,
    pub config_hash: String,
    pub dt: Option<f64>,
    pub paths_requested: usize,
    pub completed: usize,
    /// `(path index, blow-up time)`.
    pub blown_up: Vec<(usize, f64)>,
    pub failed: usize,
    /// Settled-path counts over the distinct eigenvalues of `sym(Ã)`.
    pub histogram: Option<Vec<HistogramBin>>,
    pub settled: Option<usize>,
    pub min_margin: Option<f64>,
    pub underflow_events: Option<usize>,
    pub martingale: Option<MartingaleCheck>,
    /// Violation rates of the first `ε` in the run.
    pub x_violation_rate: Option<f64>,
    pub envelope_violation_rate: Option<f64>,
    pub convergence_slope: Option<f64>,
    pub gradcheck: Option<(f64, f64)>,
}

impl RunSummary {
    /// Fraction of settled paths on `eigenvalue`.
    pub fn histogram_mass(&self, eigenvalue: f64) -> Option<f64> {
        let hist = self.histogram.as_ref()?;
        let total: usize = hist.iter().map(|b| b.count).sum();
        if total == 0 {
            return None;
        }
        let hit: usize =
            hist.iter().filter(|b| (b.eigenvalue - eigenvalue).abs() <= 1e-9 * eigenvalue.abs().max(1.0)).map(|b| b.count).sum();
        Some(hit as f64 / total as f64)
    }
}

fn get<T: serde::de::DeserializeOwned>(v: &Value) -> Option<T> {
    if v.is_null() {
        None
    } else {
        serde_json::from_value(v.clone()).ok()
    }
}

/// Reads `manifest.json` and `report.json` of a run directory.
pub fn report_summary(run_dir: impl AsRef<Path>) -> Result<RunSummary> {
    let dir = run_dir.as_ref();
    let manifest = RunManifest::load(dir)?;
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingFile { path: path.clone() })?;
    let report: Value = serde_json::from_str(&text)?;
    for f in &manifest.files {
        if !dir.join(f).exists() {
            return Err(Error::MissingFile { path: dir.join(f) });
        }
    }
    let completed = manifest.completed();
    if manifest.kind.integrates_paths() && completed == 0 {
        return Err(Error::EmptyEnsemble(format!("no completed paths in {}", dir.display())));
    }
    let first_eps = &report["ensemble"]["inequalities"][0];
    let gradcheck = &report["gradcheck"];
    Ok(RunSummary {
        schema_version: SCHEMA_VERSION,
        run_dir: dir.to_path_buf(),
        kind: manifest.kind,
        system: manifest.system.clone(),
        config_hash: manifest.config_hash.clone(),
        dt: manifest.config.discretization.as_ref().map(|d| d.dt),
        paths_requested: if manifest.kind.integrates_paths() { manifest.config.ensemble.paths } else { 0 },
        completed,
        blown_up: manifest
            .paths
            .iter()
            .filter_map(|p| match p.status {
                PathStatus::BlowUp { time } => Some((p.index, time)),
                _ => None,
            })
            .collect(),
        failed: manifest.paths.iter().filter(|p| matches!(p.status, PathStatus::Failed { .. })).count(),
        histogram: get(&report["spectral_limit"]["histogram"]),
        settled: get(&report["spectral_limit"]["settled"]),
        min_margin: get(&report["backward_probe"]["min_margin"]),
        underflow_events: get(&report["backward_probe"]["underflow_events"]),
        martingale: get(&report["ensemble"]["martingale"]),
        x_violation_rate: get(&first_eps["x_violation_rate"]),
        envelope_violation_rate: get(&first_eps["envelope_violation_rate"]),
        convergence_slope: get(&report["convergence"]["slope"]),
        gradcheck: match (get(&gradcheck["max_rel_err_d1"]), get(&gradcheck["max_rel_err_d2"])) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        },
    })
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "run      {}", self.run_dir.display())?;
        writeln!(f, "kind     {}", self.kind.name())?;
        if let Some(s) = &self.system {
            writeln!(f, "system   {s}")?;
        }
        writeln!(f, "config   {}", &self.config_hash[..self.config_hash.len().min(16)])?;
        if let Some(dt) = self.dt {
            writeln!(f, "dt       {dt:e}")?;
        }
        if self.kind.integrates_paths() {
            writeln!(f, "paths    {}/{} completed, {} blown up, {} failed", self.completed, self.paths_requested, self.blown_up.len(), self.failed)?;
            for (i, t) in &self.blown_up {
                writeln!(f, "  path {i} blew up at t = {t}")?;
            }
        }
        if let Some(m) = &self.martingale {
            writeln!(f, "M(T)     mean {:.6} ± {:.2e} (z = {:.2}, {} paths)", m.mean, m.stderr, m.z, m.paths)?;
        }
        if let Some(r) = self.x_violation_rate {
            writeln!(f, "X bound  violation rate {r:.3e}")?;
        }
        if let Some(r) = self.envelope_violation_rate {
            writeln!(f, "envelope violation rate {r:.3e}")?;
        }
        if let Some(h) = &self.histogram {
            writeln!(f, "limit    {} settled", self.settled.unwrap_or(0))?;
            for b in h.iter().filter(|b| b.count > 0) {
                writeln!(f, "  λ = {:<12.6} {}", b.eigenvalue, b.count)?;
            }
        }
        if let Some(m) = self.min_margin {
            writeln!(f, "probe    min |u| {m:.3e}, {} underflow events", self.underflow_events.unwrap_or(0))?;
        }
        if let Some(s) = self.convergence_slope {
            writeln!(f, "slope    {s:.3}")?;
        }
        if let Some((a, b)) = self.gradcheck {
            writeln!(f, "gradcheck d1 {a:.2e}, d2 {b:.2e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub dt: f64,
    pub x_violation_rate: Option<f64>,
    pub envelope_violation_rate: Option<f64>,
}

/// Violation rates of runs that differ in `dt`, coarsest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationLadder {
    pub rows: Vec<LadderEntry>,
    /// Some rate failed to decrease strictly from one `dt` to the next
    /// finer one.
    pub flagged: bool,
}

pub fn violation_ladder(runs: &[RunSummary]) -> Result<ViolationLadder> {
    let mut rows: Vec<LadderEntry> = runs
        .iter()
        .map(|r| {
            r.dt.map(|dt| LadderEntry {
                dt,
                x_violation_rate: r.x_violation_rate,
                envelope_violation_rate: r.envelope_violation_rate,
            })
            .ok_or_else(|| Error::InvalidParameter(format!("run {} has no time step", r.run_dir.display())))
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyEnsemble("violation ladder over zero runs".into()));
    }
    rows.sort_by(|a, b| b.dt.total_cmp(&a.dt));
    let strict = |f: fn(&LadderEntry) -> Option<f64>| {
        rows.windows(2).all(|w| match (f(&w[0]), f(&w[1])) {
            (Some(c), Some(r)) => r < c,
            (None, None) => true,
            _ => false,
        })
    };
    let flagged = !(strict(|e| e.x_violation_rate) && strict(|e| e.envelope_violation_rate));
    Ok(ViolationLadder { rows, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(dt: f64, x: Option<f64>) -> RunSummary {
        RunSummary {
            schema_version: SCHEMA_VERSION,
            run_dir: PathBuf::from(format!("r{dt}")),
            kind: ExperimentKind::Simulate,
            system: None,
            config_hash: "0".repeat(64),
            dt: Some(dt),
            paths_requested: 1,
            completed: 1,
            blown_up: Vec::new(),
            failed: 0,
            histogram: None,
            settled: None,
            min_margin: None,
            underflow_events: None,
            martingale: None,
            x_violation_rate: x,
            envelope_violation_rate: None,
            convergence_slope: None,
            gradcheck: None,
        }
    }

    #[test]
    fn ladder_orders_by_dt_and_flags() {
        let l = violation_ladder(&[summary(0.5, Some(0.01)), summary(1.0, Some(0.02))]).unwrap();
        assert_eq!(l.rows[0].dt, 1.0);
        assert!(!l.flagged);
        let l = violation_ladder(&[summary(0.5, Some(0.02)), summary(1.0, Some(0.02))]).unwrap();
        assert!(l.flagged);
        assert!(violation_ladder(&[]).is_err());
    }

    #[test]
    fn missing_run_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report_summary(dir.path()), Err(Error::MissingFile { .. })));
    }
}
