//! Spectral-limit verdicts and the backward-uniqueness probe.

use serde::{Deserialize, Serialize};

use super::{DiagnosticSeries, TerminalForms};
use crate::assumptions::SCHEMA_VERSION;
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::spectral::linalg::mean_and_stderr;
use crate::spectral::Spectrum;

/// Fraction of the run used as the settling window.
pub const SETTLE_FRACTION: f64 = 0.2;
/// Window standard deviation must stay below this fraction of the smallest
/// spectral gap.
pub const SETTLE_GAP_FRACTION: f64 = 0.1;
/// `|u|` at or below this counts as an underflow event.
pub const UNDERFLOW_NORM: f64 = 1e-300;
const DISTINCT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLimit {
    pub index: usize,
    pub settled: bool,
    pub lambda_estimate: f64,
    pub window_std: f64,
    pub final_quotient: f64,
    pub matched_eigenvalue: Option<f64>,
    pub gap: Option<f64>,
    /// Residual at the final quotient.
    pub residual_final: f64,
    /// Residual at the matched eigenvalue.
    pub residual_matched: Option<f64>,
    pub integrability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub eigenvalue: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralLimitReport {
    pub schema_version: u32,
    pub spectrum: Vec<f64>,
    pub min_gap: f64,
    pub window_tolerance: f64,
    pub paths: Vec<PathLimit>,
    pub settled: usize,
    pub histogram: Vec<HistogramBin>,
}

impl SpectralLimitReport {
    /// Fraction of settled paths whose gap is below `tol`.
    pub fn matched_fraction(&self, tol: f64) -> f64 {
        if self.settled == 0 {
            return 0.0;
        }
        let hits = self.paths.iter().filter(|p| p.settled && p.gap.is_some_and(|g| g < tol)).count();
        hits as f64 / self.settled as f64
    }

    /// Whether every settled path matched `eigenvalue` with gap below `tol`.
    pub fn all_match(&self, eigenvalue: f64, tol: f64) -> bool {
        self.settled > 0
            && self
                .paths
                .iter()
                .filter(|p| p.settled)
                .all(|p| p.matched_eigenvalue.is_some_and(|m| (m - eigenvalue).abs() < DISTINCT_TOL.max(1e-9 * eigenvalue.abs())) && p.gap.is_some_and(|g| g < tol))
    }
}

/// What the spectral-limit verdict needs from one path.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSample {
    /// The settling window of the `ε = 0` quotient.
    pub window: Vec<f64>,
    pub final_quotient: f64,
    pub terminal: TerminalForms,
    pub integrability: f64,
}

impl LimitSample {
    pub fn from_series(s: &DiagnosticSeries) -> Self {
        let n = s.len();
        let start = ((1.0 - SETTLE_FRACTION) * (n - 1) as f64).floor() as usize;
        LimitSample {
            window: s.rayleigh[start..].to_vec(),
            final_quotient: *s.rayleigh.last().unwrap_or(&f64::NAN),
            terminal: s.terminal,
            integrability: s.integrability,
        }
    }
}

/// Settles each path on the final window of its `ε = 0` quotient and matches
/// the window mean to `spectrum` (the spectrum of `sym(Ã_N)`).
pub fn spectral_limit_report(series: &[DiagnosticSeries], spectrum: &Spectrum) -> Result<SpectralLimitReport> {
    let samples: Vec<LimitSample> = series.iter().map(LimitSample::from_series).collect();
    spectral_limit_from_samples(&samples, spectrum)
}

pub fn spectral_limit_from_samples(samples: &[LimitSample], spectrum: &Spectrum) -> Result<SpectralLimitReport> {
    if samples.is_empty() {
        return Err(Error::EmptyEnsemble("spectral-limit report over zero paths".into()));
    }
    let distinct = spectrum.distinct(DISTINCT_TOL);
    if distinct.is_empty() {
        return Err(Error::InvalidParameter("empty spectrum".into()));
    }
    let min_gap = spectrum.min_gap(DISTINCT_TOL);
    let window_tolerance = if min_gap.is_finite() {
        SETTLE_GAP_FRACTION * min_gap
    } else {
        SETTLE_GAP_FRACTION * distinct[0].abs().max(1.0)
    };
    let mut counts = vec![0usize; distinct.len()];
    let mut paths = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        let window: Vec<f64> = s.window.iter().copied().filter(|q| q.is_finite()).collect();
        let (mean, std) = if window.len() >= 2 {
            let (m, se) = mean_and_stderr(&window);
            (m, se * (window.len() as f64).sqrt())
        } else {
            (f64::NAN, f64::NAN)
        };
        let settled = std < window_tolerance;
        let (matched, gap, residual_matched) = if settled {
            let m = spectrum.nearest(mean).expect("nonempty spectrum");
            if let Some(i) = distinct.iter().position(|d| (d - m).abs() <= DISTINCT_TOL) {
                counts[i] += 1;
            }
            (Some(m), Some((mean - m).abs()), Some(s.terminal.residual(m)))
        } else {
            (None, None, None)
        };
        paths.push(PathLimit {
            index,
            settled,
            lambda_estimate: mean,
            window_std: std,
            final_quotient: s.final_quotient,
            matched_eigenvalue: matched,
            gap,
            residual_final: s.terminal.residual(s.final_quotient),
            residual_matched,
            integrability: s.integrability,
        });
    }
    Ok(SpectralLimitReport {
        schema_version: SCHEMA_VERSION,
        spectrum: distinct.clone(),
        min_gap,
        window_tolerance,
        settled: paths.iter().filter(|p| p.settled).count(),
        paths,
        histogram: distinct.into_iter().zip(counts).map(|(eigenvalue, count)| HistogramBin { eigenvalue, count }).collect(),
    })
}

/// One path of the backward-uniqueness probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePath {
    pub index: usize,
    pub min_norm: f64,
    pub min_time: f64,
    pub final_log_norm_sq: f64,
    /// The initial condition was zero and the path stayed exactly zero.
    pub zero_path: bool,
    pub underflow: bool,
}

impl ProbePath {
    pub fn from_trajectory(index: usize, traj: &Trajectory) -> Self {
        let norms = traj.norms_h();
        let (min_idx, min_norm) = norms
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("trajectory has at least one state");
        let zero_path = traj.states.iter().all(|u| u.iter().all(|&v| v == 0.0));
        ProbePath {
            index,
            min_norm,
            min_time: traj.times[min_idx],
            final_log_norm_sq: (norms[norms.len() - 1].powi(2)).ln(),
            zero_path,
            underflow: !zero_path && min_norm <= UNDERFLOW_NORM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardProbeReport {
    pub schema_version: u32,
    pub paths: Vec<ProbePath>,
    pub zero_paths: usize,
    pub underflow_events: usize,
    /// Smallest `min_t |u(t)|` over the nonzero paths.
    pub min_margin: f64,
    /// Every nonzero path stayed strictly away from zero.
    pub all_positive: bool,
}

pub fn backward_probe(paths: Vec<ProbePath>) -> Result<BackwardProbeReport> {
    if paths.is_empty() {
        return Err(Error::EmptyEnsemble("backward probe over zero paths".into()));
    }
    let nonzero: Vec<&ProbePath> = paths.iter().filter(|p| !p.zero_path).collect();
    let min_margin = nonzero.iter().map(|p| p.min_norm).fold(f64::INFINITY, f64::min);
    let underflow_events = paths.iter().filter(|p| p.underflow).count();
    Ok(BackwardProbeReport {
        schema_version: SCHEMA_VERSION,
        zero_paths: paths.len() - nonzero.len(),
        underflow_events,
        all_positive: nonzero.iter().all(|p| p.min_norm > UNDERFLOW_NORM),
        min_margin,
        paths,
    })
}
