//! The Gronwall bound process `X_ε` and the comparison envelope for `S_ε`.

use serde::{Deserialize, Serialize};

use super::{growth_integral, nonlinearity_bound, PathForms};
use crate::assumptions::{AssumptionReport, TimeTable};
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::spectral::{OperatorFamily, SpectralBasis};

/// Constants entering `X_ε` and `S_ε`, read from an assumption report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub k1: TimeTable,
    pub k2: f64,
    pub k6: TimeTable,
    pub k1_zero: bool,
}

impl BoundConstants {
    pub fn from_report(report: &AssumptionReport) -> Self {
        BoundConstants {
            k1: report.ac4.k1.clone(),
            k2: report.ac4.k2,
            k6: report.k6.k6.clone(),
            k1_zero: report.ac4.k1_zero,
        }
    }

    /// All constants zero.
    pub fn zero() -> Self {
        let table = TimeTable { times: vec![0.0], values: vec![0.0] };
        BoundConstants { k1: table.clone(), k2: 0.0, k6: table, k1_zero: true }
    }
}

/// Conservative lookup: the larger endpoint of the grid cell containing `t`.
fn table_at(table: &TimeTable, t: f64) -> Result<f64> {
    match table.values.len() {
        0 => Err(Error::MissingConstants("empty constant table".into())),
        1 => Ok(table.values[0]),
        n => {
            let i = table.times.partition_point(|&s| s <= t);
            Ok(match i {
                0 => table.values[0],
                i if i >= n => table.values[n - 1],
                i => table.values[i - 1].max(table.values[i]),
            })
        }
    }
}

fn growth_rate(c: &BoundConstants, times: &[f64], nl: &[f64]) -> Result<Vec<f64>> {
    times
        .iter()
        .zip(nl)
        .map(|(&t, n)| Ok(n * n + c.k2 + table_at(&c.k6, t)?))
        .collect()
}

/// A pointwise inequality `lhs ≤ rhs + tol` checked on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub tol: f64,
    pub violated: Vec<bool>,
    /// Steps left out of the verdict (floors).
    pub excluded: Vec<bool>,
}

impl InequalityCheck {
    fn new(times: Vec<f64>, lhs: Vec<f64>, rhs: Vec<f64>, tol: f64, excluded: Vec<bool>) -> Self {
        let violated = lhs
            .iter()
            .zip(&rhs)
            .zip(&excluded)
            .map(|((l, r), &ex)| !ex && !(l <= &(r + tol)))
            .collect();
        InequalityCheck { times, lhs, rhs, tol, violated, excluded }
    }

    pub fn checked_steps(&self) -> usize {
        self.excluded.iter().filter(|e| !**e).count()
    }

    pub fn excluded_steps(&self) -> usize {
        self.excluded.iter().filter(|e| **e).count()
    }

    pub fn violations(&self) -> usize {
        self.violated.iter().filter(|v| **v).count()
    }

    pub fn violation_rate(&self) -> f64 {
        let n = self.checked_steps();
        if n == 0 {
            0.0
        } else {
            self.violations() as f64 / n as f64
        }
    }
}

/// `tol(dt) = c·√dt`, scaled by the size of the starting value.
fn tolerance(c: f64, dt: f64, scale: f64) -> f64 {
    c * dt.sqrt() * scale.abs().max(1.0)
}

pub(super) fn x_from_forms(
    forms: &PathForms,
    c: &BoundConstants,
    nl: &[f64],
    m_eps: &[f64],
    eps: f64,
    tol_constant: f64,
) -> Result<InequalityCheck> {
    let n = forms.len();
    let q = forms.quotient(eps);
    if q[0].is_nan() {
        return Err(Error::VanishingState { norm: forms.norm_sq[0].sqrt() });
    }
    let g = growth_rate(c, &forms.times, nl)?;
    let big_g = growth_integral(&forms.times, &g);
    let k1: Vec<f64> = forms.times.iter().map(|&t| table_at(&c.k1, t)).collect::<Result<_>>()?;
    let drift: Vec<f64> = (0..n).map(|j| (-big_g[j]).exp() * k1[j] * m_eps[j]).collect();

    // Y = e^{−G} X solves dY = e^{−G}K₁M ds − e^{−G}M Σ 2⟨Ãu,B_k u⟩/(|u|²+ε) dw
    let mut y = m_eps[0] * q[0];
    let mut x = Vec::with_capacity(n);
    x.push(y);
    for j in 0..n - 1 {
        let h = forms.times[j + 1] - forms.times[j];
        let d = forms.norm_sq[j] + eps;
        let weight = (-big_g[j]).exp() * m_eps[j];
        let noise: f64 = forms.cross_form[j].iter().zip(&forms.increments[j]).map(|(a, dw)| 2.0 * a / d * dw).sum();
        y += 0.5 * h * (drift[j] + drift[j + 1]) - weight * noise;
        x.push(big_g[j + 1].exp() * y);
    }
    let lhs: Vec<f64> = m_eps.iter().zip(&q).map(|(m, q)| m * q).collect();
    let excluded = q.iter().map(|v| v.is_nan()).collect();
    let tol = tolerance(tol_constant, forms.dt, x[0]);
    Ok(InequalityCheck::new(forms.times.clone(), lhs, x, tol, excluded))
}

pub(super) fn s_and_n(
    forms: &PathForms,
    c: &BoundConstants,
    nl: &[f64],
    m_eps: &[f64],
    eps: f64,
    tau_index: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = forms.len();
    if tau_index >= n {
        return Err(Error::InvalidParameter(format!("tau index {tau_index} beyond {n} steps")));
    }
    let q = forms.quotient(eps);
    let g = growth_rate(c, &forms.times, nl)?;
    let big_g = growth_integral(&forms.times, &g);
    let s: Vec<f64> = (0..n).map(|j| (-big_g[j]).exp() * m_eps[j] * q[j]).collect();
    let integrand: Vec<f64> =
        (0..n).map(|j| m_eps[j] * forms.residual_sq(j, q[j]) / (forms.norm_sq[j] + eps)).collect();
    let mut n_part = vec![0.0; n];
    let mut acc = 0.0;
    for j in tau_index + 1..n {
        acc += 0.5 * (forms.times[j] - forms.times[j - 1]) * (integrand[j - 1] + integrand[j]);
        n_part[j] = (-big_g[j]).exp() * acc;
    }
    Ok((s, n_part))
}

/// Relative floor on `|⟨Ãu,u⟩|` below which envelope steps are excluded.
const FORM_FLOOR: f64 = 1e-12;

pub(super) fn envelope_from_forms(forms: &PathForms, s: &[f64], tau_index: usize, tol_constant: f64) -> Result<InequalityCheck> {
    let n = forms.len();
    if tau_index >= n {
        return Err(Error::InvalidParameter(format!("tau index {tau_index} beyond {n} steps")));
    }
    let mut env = vec![f64::NAN; n];
    let mut excluded = vec![true; n];
    let mut log_factor = 0.0;
    env[tau_index] = s[tau_index];
    excluded[tau_index] = false;
    for j in tau_index..n - 1 {
        let form = forms.tilde_form[j].abs();
        let floor = FORM_FLOOR * (forms.sym_image_sq[j] * forms.norm_sq[j]).sqrt();
        let skip = !(form > floor) || !(form > 0.0);
        if !skip {
            for (a, dw) in forms.cross_form[j].iter().zip(&forms.increments[j]) {
                let r = a / form;
                log_factor += -2.0 * r * dw - 2.0 * r * r * forms.dt;
            }
        }
        env[j + 1] = s[tau_index] * log_factor.exp();
        excluded[j + 1] = skip || s[j + 1].is_nan();
    }
    let tol = tolerance(tol_constant, forms.dt, s[tau_index]);
    Ok(InequalityCheck::new(forms.times.clone(), s.to_vec(), env, tol, excluded))
}

/// `X_ε(t)` and the verdict `M_ε Λ̃̃_ε ≤ X_ε + c√dt` along a trajectory.
pub fn bound_process_x(
    traj: &Trajectory,
    ops: &OperatorFamily,
    basis: &SpectralBasis,
    constants: &BoundConstants,
    eps: f64,
    tol_constant: f64,
) -> Result<InequalityCheck> {
    let forms = PathForms::new(traj, ops)?;
    let m = forms.martingale(eps)?;
    let nl = nonlinearity_bound(traj, ops, basis)?;
    x_from_forms(&forms, constants, &nl, &m, eps, tol_constant)
}

/// `S_ε(t)` against `S_ε(τ)·exp(−2∫Σ q_k dw − 2∫Σ q_k² ds)` with
/// `q_k = ⟨Ãu,B_k u⟩/|⟨Ãu,u⟩|`. Requires `K₁ ≡ 0`.
pub fn comparison_envelope(
    traj: &Trajectory,
    ops: &OperatorFamily,
    basis: &SpectralBasis,
    constants: &BoundConstants,
    tau_index: usize,
    eps: f64,
    tol_constant: f64,
) -> Result<InequalityCheck> {
    if !constants.k1_zero {
        return Err(Error::MissingConstants("the comparison envelope needs K1 = 0 certified".into()));
    }
    let forms = PathForms::new(traj, ops)?;
    let m = forms.martingale(eps)?;
    let nl = nonlinearity_bound(traj, ops, basis)?;
    let (s, _) = s_and_n(&forms, constants, &nl, &m, eps, tau_index)?;
    envelope_from_forms(&forms, &s, tau_index, tol_constant)
}

/// Violation rates at `dt` and `dt/factor` on the same Brownian path. A step
/// counts as persistently violated only when it fails at both resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedVerdict {
    pub coarse_rate: f64,
    pub fine_rate: f64,
    pub persistent: usize,
    pub persistent_rate: f64,
}

pub fn refined_violation(coarse: &InequalityCheck, fine: &InequalityCheck) -> Result<RefinedVerdict> {
    let cs = coarse.times.len().saturating_sub(1);
    let fs = fine.times.len().saturating_sub(1);
    if cs == 0 || !fs.is_multiple_of(cs) {
        return Err(Error::InvalidGrid(format!("{fs} fine steps do not refine {cs} coarse steps")));
    }
    let factor = fs / cs;
    let persistent = (0..=cs).filter(|&j| coarse.violated[j] && fine.violated[j * factor]).count();
    let checked = coarse.checked_steps().max(1);
    Ok(RefinedVerdict {
        coarse_rate: coarse.violation_rate(),
        fine_rate: fine.violation_rate(),
        persistent,
        persistent_rate: persistent as f64 / checked as f64,
    })
}
