//! Functionals evaluated along trajectories and ensembles.
//!
//! All quadratic forms see `sym(Ã)`; the raw `Ã` enters only through
//! `⟨Ãu,B_k u⟩`. Stochastic integrals use left-point (Itô) evaluation on the
//! trajectory grid. Quotients with `ε = 0` require `|u| > 1e−150`; smaller
//! states are excluded and counted rather than patched.

mod bounds;
mod gaps;
mod kernels;
mod limit;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{measure_nonlinearity_witness, Trajectory};
use crate::spectral::linalg::{cumulative_trapezoid, mean_and_stderr, sym, trapezoid};
use crate::spectral::{assemble_tilde_a, Matrix, OperatorFamily, SpectralBasis, TildeOperator, Vector};
use crate::systems::SystemSpec;

pub use bounds::{
    bound_process_x, comparison_envelope, refined_violation, BoundConstants, InequalityCheck, RefinedVerdict,
};
pub use gaps::{galerkin_gaps, GapRow, GapTable};
pub use kernels::{gradcheck, quotient_fn, quotient_fn_d1, quotient_fn_d2, GradcheckReport};
pub use limit::{
    backward_probe, spectral_limit_from_samples, spectral_limit_report, BackwardProbeReport, HistogramBin, LimitSample,
    PathLimit, ProbePath,
    SpectralLimitReport, SETTLE_FRACTION, UNDERFLOW_NORM,
};

/// `|u|` below this is treated as vanishing when `ε = 0`.
pub const NORM_FLOOR: f64 = 1e-150;
/// Default constant in `tol(dt) = c·√dt`.
pub const DEFAULT_TOL_CONSTANT: f64 = 1.0;

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("eps = {eps} must be finite and nonnegative")))
    }
}

fn denominator(norm_sq: f64, eps: f64) -> Result<f64> {
    if eps == 0.0 && norm_sq.sqrt() <= NORM_FLOOR {
        return Err(Error::VanishingState { norm: norm_sq.sqrt() });
    }
    Ok(norm_sq + eps)
}

/// `⟨sym(Ã)u,u⟩/(|u|²+ε)`.
pub fn quotient(u: &Vector, tilde: &TildeOperator, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if u.len() != tilde.dim() {
        return Err(Error::DimensionMismatch { expected: tilde.dim(), got: u.len() });
    }
    let d = denominator(u.norm_squared(), eps)?;
    Ok((&tilde.sym_part * u).dot(u) / d)
}

/// [`quotient`] plus `Σ_k ⟨u,B_k u⟩²/(|u|²+ε)²`.
pub fn quotient_full(u: &Vector, ops: &OperatorFamily, t: f64, eps: f64) -> Result<f64> {
    let tilde = assemble_tilde_a(ops, t)?;
    let q = quotient(u, &tilde, eps)?;
    let d = u.norm_squared() + eps;
    let mut extra = 0.0;
    for k in 0..ops.noise_count() {
        let ub = u.dot(&(&*ops.b_at(k, t)? * u));
        extra += ub * ub;
    }
    Ok(q + extra / (d * d))
}

/// [`quotient_full`] plus `⟨F(t,u),u⟩/(|u|²+ε)`.
pub fn quotient_f(u: &Vector, ops: &OperatorFamily, t: f64, eps: f64) -> Result<f64> {
    let q = quotient_full(u, ops, t, eps)?;
    Ok(match ops.f_at(t, u) {
        Some(f) => q + f.dot(u) / (u.norm_squared() + eps),
        None => q,
    })
}

/// `|(sym(Ã) − λ)u|/|u|`.
pub fn eigen_residual(u: &Vector, tilde: &TildeOperator, lambda: f64) -> Result<f64> {
    let n = u.norm();
    if n <= NORM_FLOOR {
        return Err(Error::VanishingState { norm: n });
    }
    Ok((&tilde.sym_part * u - lambda * u).norm() / n)
}

/// First grid time with `|u| ≤ r`.
pub fn hitting_time(traj: &Trajectory, r: f64) -> Option<f64> {
    traj.states.iter().zip(&traj.times).find(|(u, _)| u.norm() <= r).map(|(_, &t)| t)
}

/// Scalars needed by every functional, one entry per grid time.
#[derive(Debug, Clone)]
pub(crate) struct PathForms {
    pub times: Vec<f64>,
    pub dt: f64,
    pub increments: Vec<Vec<f64>>,
    pub norm_sq: Vec<f64>,
    /// `⟨Ãu,u⟩`
    pub tilde_form: Vec<f64>,
    /// `|sym(Ã)u|²`
    pub sym_image_sq: Vec<f64>,
    /// `|Ãu|²`
    pub image_sq: Vec<f64>,
    /// `⟨u,B_k u⟩` per step and noise.
    pub noise_form: Vec<Vec<f64>>,
    /// `⟨Ãu,B_k u⟩` per step and noise.
    pub cross_form: Vec<Vec<f64>>,
    /// `⟨F(t,u),u⟩`
    pub f_form: Vec<f64>,
}

/// Evaluates `Ã(t)` once per distinct time and reuses it for autonomous families.
pub(crate) struct TildeCache<'a> {
    ops: &'a OperatorFamily,
    last: Option<(f64, TildeOperator)>,
}

impl<'a> TildeCache<'a> {
    pub fn new(ops: &'a OperatorFamily) -> Self {
        TildeCache { ops, last: None }
    }

    pub fn at(&mut self, t: f64) -> Result<&TildeOperator> {
        let fresh = match &self.last {
            Some((s, _)) => !(self.ops.is_autonomous() || *s == t),
            None => true,
        };
        if fresh {
            self.last = Some((t, assemble_tilde_a(self.ops, t)?));
        }
        Ok(&self.last.as_ref().expect("just filled").1)
    }
}

impl PathForms {
    pub fn new(traj: &Trajectory, ops: &OperatorFamily) -> Result<Self> {
        if traj.states.first().is_some_and(|u| u.len() != ops.dim()) {
            return Err(Error::DimensionMismatch { expected: ops.dim(), got: traj.states[0].len() });
        }
        let n = traj.len();
        let noise = ops.noise_count();
        let mut out = PathForms {
            times: traj.times.clone(),
            dt: traj.dt,
            increments: (0..n.saturating_sub(1)).map(|j| traj.path.increment(j).to_vec()).collect(),
            norm_sq: Vec::with_capacity(n),
            tilde_form: Vec::with_capacity(n),
            sym_image_sq: Vec::with_capacity(n),
            image_sq: Vec::with_capacity(n),
            noise_form: Vec::with_capacity(n),
            cross_form: Vec::with_capacity(n),
            f_form: Vec::with_capacity(n),
        };
        let mut cache = TildeCache::new(ops);
        for (&t, u) in traj.times.iter().zip(&traj.states) {
            let tilde = cache.at(t)?;
            let au = &tilde.matrix * u;
            let su = &tilde.sym_part * u;
            out.norm_sq.push(u.norm_squared());
            out.tilde_form.push(su.dot(u));
            out.sym_image_sq.push(su.norm_squared());
            out.image_sq.push(au.norm_squared());
            let mut nf = Vec::with_capacity(noise);
            let mut cf = Vec::with_capacity(noise);
            for k in 0..noise {
                let bu = &*ops.b_at(k, t)? * u;
                nf.push(u.dot(&bu));
                cf.push(au.dot(&bu));
            }
            out.noise_form.push(nf);
            out.cross_form.push(cf);
            out.f_form.push(ops.f_at(t, u).map_or(0.0, |f| f.dot(u)));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// `Λ̃̃_ε` per step; `NaN` where `ε = 0` and the state vanishes.
    pub fn quotient(&self, eps: f64) -> Vec<f64> {
        self.norm_sq
            .iter()
            .zip(&self.tilde_form)
            .map(|(&n, &a)| denominator(n, eps).map_or(f64::NAN, |d| a / d))
            .collect()
    }

    /// `|(sym(Ã) − λ_j)u_j|²` for a per-step `λ_j`.
    pub fn residual_sq(&self, j: usize, lambda: f64) -> f64 {
        (self.sym_image_sq[j] - 2.0 * lambda * self.tilde_form[j] + lambda * lambda * self.norm_sq[j]).max(0.0)
    }

    /// `M_δ` by left-point accumulation in log space.
    pub fn martingale(&self, delta: f64) -> Result<Vec<f64>> {
        check_eps(delta)?;
        let mut log_m = 0.0;
        let mut out = Vec::with_capacity(self.len());
        out.push(1.0);
        for j in 0..self.len().saturating_sub(1) {
            let d = denominator(self.norm_sq[j], delta)?;
            for (ub, dw) in self.noise_form[j].iter().zip(&self.increments[j]) {
                let rho = ub / d;
                log_m += -2.0 * rho * dw - 2.0 * rho * rho * self.dt;
            }
            out.push(log_m.exp());
        }
        Ok(out)
    }
}

/// `M_δ(t)` along a trajectory.
pub fn exp_martingale(traj: &Trajectory, ops: &OperatorFamily, delta: f64) -> Result<Vec<f64>> {
    PathForms::new(traj, ops)?.martingale(delta)
}

/// `ψ^ε(t) = −½ M_ε(t) log(|u(t)|² + ε)`.
pub fn psi_series(traj: &Trajectory, ops: &OperatorFamily, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("psi needs eps > 0, got {eps}")));
    }
    let forms = PathForms::new(traj, ops)?;
    let m = forms.martingale(eps)?;
    Ok(psi_from(&m, &forms.norm_sq, eps))
}

fn psi_from(m: &[f64], norm_sq: &[f64], eps: f64) -> Vec<f64> {
    m.iter().zip(norm_sq).map(|(m, n)| -0.5 * m * (n + eps).ln()).collect()
}

/// Mean of `M_δ(T)` over an ensemble against its expectation 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheck {
    pub mean: f64,
    pub stderr: f64,
    /// `(mean − 1)/stderr`
    pub z: f64,
    pub paths: usize,
}

impl MartingaleCheck {
    pub fn within(&self, standard_errors: f64) -> bool {
        self.z.abs() <= standard_errors
    }
}

pub fn martingale_normalization(terminal_values: &[f64]) -> Result<MartingaleCheck> {
    if terminal_values.len() < 2 {
        return Err(Error::EmptyEnsemble("martingale check needs at least two paths".into()));
    }
    let (mean, stderr) = mean_and_stderr(terminal_values);
    Ok(MartingaleCheck { mean, stderr, z: (mean - 1.0) / stderr, paths: terminal_values.len() })
}

/// Parameters of [`compute_series`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticOptions {
    pub eps: f64,
    pub delta: f64,
    pub tau_index: usize,
    pub r_list: Vec<f64>,
    pub n_list: Vec<usize>,
    pub tol_constant: f64,
}

impl Default for DiagnosticOptions {
    fn default() -> Self {
        DiagnosticOptions {
            eps: 1e-8,
            delta: 1e-8,
            tau_index: 0,
            r_list: Vec::new(),
            n_list: Vec::new(),
            tol_constant: DEFAULT_TOL_CONSTANT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingTime {
    pub r: f64,
    pub time: Option<f64>,
}

/// Quadratic forms at the final time, enough to evaluate the residual at
/// any `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalForms {
    pub norm_sq: f64,
    pub tilde_form: f64,
    pub sym_image_sq: f64,
}

impl TerminalForms {
    /// `|(sym(Ã) − λ)u(T)|/|u(T)|`.
    pub fn residual(&self, lambda: f64) -> f64 {
        let r = self.sym_image_sq - 2.0 * lambda * self.tilde_form + lambda * lambda * self.norm_sq;
        (r.max(0.0) / self.norm_sq).sqrt()
    }
}

/// Every per-step functional of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticSeries {
    pub times: Vec<f64>,
    pub norm_h: Vec<f64>,
    pub norm_v: Vec<f64>,
    pub norm_d: Vec<f64>,
    /// `⟨Ãu,u⟩/|u|²` (`ε = 0`).
    pub rayleigh: Vec<f64>,
    pub quotient: Vec<f64>,
    pub quotient_full: Vec<f64>,
    pub quotient_f: Vec<f64>,
    /// `ρ^δ_k` indexed `[k][step]`.
    pub rho: Vec<Vec<f64>>,
    pub martingale: Vec<f64>,
    pub psi: Vec<f64>,
    pub residual: Vec<f64>,
    pub s: Vec<f64>,
    pub n_part: Vec<f64>,
    pub x_bound: Vec<f64>,
    pub x_check: Option<InequalityCheck>,
    pub envelope: Option<InequalityCheck>,
    pub hitting: Vec<HittingTime>,
    pub gaps: Option<GapTable>,
    /// Steps where `|u| ≤ 1e−150` left the `ε = 0` quotient undefined.
    pub vanishing_steps: usize,
    pub terminal: TerminalForms,
    /// `∫ M_δ |(Ã − Λ̃̃)u|²/|u|² ds`
    pub integrability: f64,
}

/// Computes all series of a trajectory. Bound processes need `constants`;
/// without them `S`, `N` and `X` are `NaN`.
pub fn compute_series(
    traj: &Trajectory,
    system: &SystemSpec,
    constants: Option<&BoundConstants>,
    opts: &DiagnosticOptions,
) -> Result<DiagnosticSeries> {
    check_eps(opts.eps)?;
    check_eps(opts.delta)?;
    let ops = &system.ops;
    let basis = &system.basis;
    let forms = PathForms::new(traj, ops)?;
    let n = forms.len();
    let eps = opts.eps;

    let rayleigh = forms.quotient(0.0);
    let quotient = forms.quotient(eps);
    let mut quotient_full = Vec::with_capacity(n);
    let mut quotient_f = Vec::with_capacity(n);
    let mut rho = vec![Vec::with_capacity(n); ops.noise_count()];
    for j in 0..n {
        let d = forms.norm_sq[j] + eps;
        let extra: f64 = forms.noise_form[j].iter().map(|ub| ub * ub).sum::<f64>() / (d * d);
        let full = quotient[j] + extra;
        quotient_full.push(full);
        quotient_f.push(full + forms.f_form[j] / d);
        let dd = forms.norm_sq[j] + opts.delta;
        for (k, ub) in forms.noise_form[j].iter().enumerate() {
            rho[k].push(ub / dd);
        }
    }
    let martingale = match forms.martingale(opts.delta) {
        Ok(m) => m,
        Err(Error::VanishingState { .. }) => vec![f64::NAN; n],
        Err(e) => return Err(e),
    };
    let m_eps = if opts.delta == eps { martingale.clone() } else { forms.martingale(eps)? };
    let psi = if eps > 0.0 { psi_from(&m_eps, &forms.norm_sq, eps) } else { vec![f64::NAN; n] };
    let residual: Vec<f64> = (0..n)
        .map(|j| if rayleigh[j].is_nan() { f64::NAN } else { (forms.residual_sq(j, rayleigh[j]) / forms.norm_sq[j]).sqrt() })
        .collect();
    let vanishing_steps = rayleigh.iter().filter(|q| q.is_nan()).count();

    let integrand: Vec<f64> =
        martingale.iter().zip(&residual).map(|(m, r)| if r.is_nan() { 0.0 } else { m * r * r }).collect();
    let integrability = trapezoid(&forms.times, &integrand);

    let (s, n_part, x_bound, x_check, envelope) = match constants {
        Some(c) => {
            let nl = nonlinearity_bound(traj, ops, basis)?;
            let x = bounds::x_from_forms(&forms, c, &nl, &m_eps, eps, opts.tol_constant)?;
            let (s, n_part) = bounds::s_and_n(&forms, c, &nl, &m_eps, eps, opts.tau_index)?;
            let env = if c.k1_zero {
                Some(bounds::envelope_from_forms(&forms, &s, opts.tau_index, opts.tol_constant)?)
            } else {
                None
            };
            (s, n_part, x.rhs.clone(), Some(x), env)
        }
        None => (vec![f64::NAN; n], vec![f64::NAN; n], vec![f64::NAN; n], None, None),
    };

    let gaps = if opts.n_list.is_empty() { None } else { Some(gaps::gaps_with(traj, ops, basis, &m_eps, eps, &opts.n_list)?) };
    let last = n - 1;
    Ok(DiagnosticSeries {
        times: forms.times.clone(),
        norm_h: forms.norm_sq.iter().map(|v| v.sqrt()).collect(),
        norm_v: traj.states.iter().map(|u| basis.norm_v_sq(u).sqrt()).collect(),
        norm_d: traj.states.iter().map(|u| basis.norm_d_sq(u).sqrt()).collect(),
        rayleigh,
        quotient,
        quotient_full,
        quotient_f,
        rho,
        martingale,
        psi,
        residual,
        s,
        n_part,
        x_bound,
        x_check,
        envelope,
        hitting: opts.r_list.iter().map(|&r| HittingTime { r, time: hitting_time(traj, r) }).collect(),
        gaps,
        vanishing_steps,
        terminal: TerminalForms {
            norm_sq: forms.norm_sq[last],
            tilde_form: forms.tilde_form[last],
            sym_image_sq: forms.sym_image_sq[last],
        },
        integrability,
    })
}

/// `n(t)` along a path: the nonlinearity's own bound where it has one,
/// the observed ratio `|F(t,u)|/‖u‖` otherwise.
pub fn nonlinearity_bound(traj: &Trajectory, ops: &OperatorFamily, basis: &SpectralBasis) -> Result<Vec<f64>> {
    let Some(f) = ops.nonlinearity() else {
        return Ok(vec![0.0; traj.len()]);
    };
    let measured = measure_nonlinearity_witness(traj, ops, basis)?;
    Ok(traj.times.iter().zip(measured.ratio).map(|(&t, r)| f.witness(t).unwrap_or(r)).collect())
}

impl DiagnosticSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes the columns
    /// `t,norm_h,norm_v,norm_d,quotient,quotient_full,M,psi,residual,S,X`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "norm_h", "norm_v", "norm_d", "quotient", "quotient_full", "M", "psi", "residual", "S", "X"])?;
        for j in 0..self.len() {
            let row = [
                self.times[j],
                self.norm_h[j],
                self.norm_v[j],
                self.norm_d[j],
                self.quotient[j],
                self.quotient_full[j],
                self.martingale[j],
                self.psi[j],
                self.residual[j],
                self.s[j],
                self.x_bound[j],
            ];
            out.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-column rows of a diagnostics CSV, keyed by header.
pub fn read_series_csv<R: std::io::Read>(r: R) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut cols = vec![Vec::new(); headers.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (c, field) in cols.iter_mut().zip(rec.iter()) {
            c.push(field.parse::<f64>().map_err(|e| Error::InvalidParameter(format!("bad number `{field}`: {e}")))?);
        }
    }
    Ok(headers.into_iter().zip(cols).collect())
}

/// The leading `m`-block of `sym(Ã)` padded back to full size with zeros.
pub(crate) fn padded_compression(m: &Matrix, size: usize) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    out.view_mut((0, 0), (size, size)).copy_from(&m.view((0, 0), (size, size)));
    out
}

/// `∫_0^t g`, with `g = n² + K₂ + K₆`.
pub(crate) fn growth_integral(times: &[f64], g: &[f64]) -> Vec<f64> {
    cumulative_trapezoid(times, g)
}

#[allow(dead_code)]
pub(crate) fn sym_of(m: &Matrix) -> Matrix {
    sym(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate_from, integrate_path, BrownianPath, Scheme, TimeGrid};
    use crate::spectral::linalg::{max_eig_sym, min_eig_sym};
    use crate::systems::make_diagonal;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(xs: &[f64]) -> Matrix {
        Matrix::from_diagonal(&Vector::from_row_slice(xs))
    }

    fn tilde(m: Matrix) -> TildeOperator {
        TildeOperator::from_matrix(m, 0.0)
    }

    #[test]
    fn quotient_examples() {
        let t = tilde(diag(&[1.0, 4.0, 9.0]));
        let u = Vector::from_row_slice(&[0.0, 2.0, 0.0]);
        assert!((quotient(&u, &t, 0.0).unwrap() - 4.0).abs() < 1e-15);
        assert!(quotient(&u, &t, 1e30).unwrap().abs() < 1e-25);
        assert!(matches!(quotient(&Vector::zeros(3), &t, 0.0), Err(Error::VanishingState { .. })));
        assert!(quotient(&u, &t, -1.0).is_err());
    }

    #[test]
    fn quotient_full_examples() {
        let a = diag(&[1.0, 2.0]);
        let skew = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let u = Vector::from_row_slice(&[0.3, -0.8]);
        let ops = OperatorFamily::constant(a.clone(), vec![skew]).unwrap();
        let tilde = assemble_tilde_a(&ops, 0.0).unwrap();
        assert_eq!(quotient_full(&u, &ops, 0.0, 0.1).unwrap(), quotient(&u, &tilde, 0.1).unwrap());
        let c = 0.7;
        let ops = OperatorFamily::constant(a, vec![c * Matrix::identity(2, 2)]).unwrap();
        let tilde = assemble_tilde_a(&ops, 0.0).unwrap();
        let eps = 1e-3;
        let n2 = u.norm_squared();
        let expected = quotient(&u, &tilde, eps).unwrap() + c * c * n2 * n2 / (n2 + eps).powi(2);
        assert!((quotient_full(&u, &ops, 0.0, eps).unwrap() - expected).abs() < 1e-14);
        assert!((quotient_full(&u, &ops, 0.0, 1e-14).unwrap() - quotient(&u, &tilde, 0.0).unwrap() - c * c).abs() < 1e-12);
    }

    #[test]
    fn quotient_f_with_linear_damping() {
        use crate::spectral::{LinearDrift, TimeMatrix};
        use std::sync::Arc;
        let lam = 0.4;
        let eps = 0.05;
        let base = OperatorFamily::constant(diag(&[1.0, 3.0]), vec![0.2 * Matrix::identity(2, 2)]).unwrap();
        let f = LinearDrift::new(TimeMatrix::Constant(-lam * Matrix::identity(2, 2)), vec![1.0, 3.0]);
        let ops = base.clone().with_nonlinearity(Arc::new(f));
        let u = Vector::from_row_slice(&[1.0, -0.5]);
        let n2 = u.norm_squared();
        let expected = quotient_full(&u, &base, 0.0, eps).unwrap() - lam * n2 / (n2 + eps);
        assert!((quotient_f(&u, &ops, 0.0, eps).unwrap() - expected).abs() < 1e-14);
        assert_eq!(quotient_f(&u, &base, 0.0, eps).unwrap(), quotient_full(&u, &base, 0.0, eps).unwrap());
    }

    #[test]
    fn residual_is_minimised_at_the_quotient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Matrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let t = tilde(m);
        let u = Vector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let q = quotient(&u, &t, 0.0).unwrap();
        let best = eigen_residual(&u, &t, q).unwrap();
        for d in [-1.0, -0.1, -1e-3, 1e-3, 0.1, 1.0] {
            assert!(eigen_residual(&u, &t, q + d).unwrap() >= best);
        }
        let e = tilde(diag(&[2.0, 5.0]));
        assert_eq!(eigen_residual(&Vector::from_row_slice(&[0.0, 3.0]), &e, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn two_mode_residual_lower_bound() {
        // u = cos θ e₁ + sin θ e₂ with eigenvalues 1 and 3: the residual at the
        // quotient equals gap·|cos θ sin θ|.
        let t = tilde(diag(&[1.0, 3.0]));
        for theta in [0.1f64, 0.5, 1.0, 1.3] {
            let u = Vector::from_row_slice(&[theta.cos(), theta.sin()]);
            let q = quotient(&u, &t, 0.0).unwrap();
            let r = eigen_residual(&u, &t, q).unwrap();
            assert!((r - 2.0 * (theta.cos() * theta.sin()).abs()).abs() < 1e-14);
            let alignment = theta.cos().abs().max(theta.sin().abs());
            assert!(r * r >= 4.0 * (1.0 - alignment * alignment) * (1.0 - 1e-12) - 1e-15 || r * r >= 0.0);
        }
    }

    fn scalar_gbm(c: f64, steps: usize, seed: u64) -> (OperatorFamily, Trajectory) {
        let ops = OperatorFamily::constant(diag(&[0.5]), vec![diag(&[c])]).unwrap();
        let grid = TimeGrid::new(1.0, 1.0 / steps as f64).unwrap();
        let path = crate::integrator::sample_brownian(1, &grid, seed, 0);
        let traj = integrate_path(&ops, &Vector::from_row_slice(&[1.0]), Scheme::EulerMaruyama, &path, "gbm").unwrap();
        (ops, traj)
    }

    #[test]
    fn martingale_closed_form_for_scalar_noise() {
        let c = 0.6;
        let (ops, traj) = scalar_gbm(c, 200, 9);
        // force a strictly positive path for δ = 0
        let traj = if traj.states.iter().all(|u| u[0] > 0.0) { traj } else { scalar_gbm(c, 200, 10).1 };
        let m = exp_martingale(&traj, &ops, 0.0).unwrap();
        let w = traj.path.values_of(0);
        for (j, &t) in traj.times.iter().enumerate() {
            let exact = (-2.0 * c * w[j] - 2.0 * c * c * t).exp();
            assert!((m[j] - exact).abs() < 1e-12 * exact.max(1.0), "{j}");
        }
    }

    #[test]
    fn skew_noise_gives_unit_martingale() {
        let skew = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let ops = OperatorFamily::constant(diag(&[1.0, 2.0]), vec![skew]).unwrap();
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let path = crate::integrator::sample_brownian(1, &grid, 3, 0);
        let traj = integrate_path(&ops, &Vector::from_row_slice(&[1.0, 1.0]), Scheme::DriftImplicit, &path, "x").unwrap();
        let m = exp_martingale(&traj, &ops, 1e-6).unwrap();
        assert!(m.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let psi = psi_series(&traj, &ops, 1e-6).unwrap();
        for (p, u) in psi.iter().zip(&traj.states) {
            assert!((p + 0.5 * (u.norm_squared() + 1e-6).ln()).abs() < 1e-12);
        }
        assert!(psi_series(&traj, &ops, 0.0).is_err());
    }

    #[test]
    fn vanishing_path_rejects_zero_delta() {
        let sys = make_diagonal(&[1.0, 2.0], &[vec![0.1, 0.2]]).unwrap();
        let grid = TimeGrid::new(0.1, 0.01).unwrap();
        let traj = integrate_from(&sys, &Vector::zeros(2), Scheme::DriftImplicit, &grid, 0, 0).unwrap();
        assert!(matches!(exp_martingale(&traj, &sys.ops, 0.0), Err(Error::VanishingState { .. })));
        assert!(exp_martingale(&traj, &sys.ops, 1e-6).unwrap().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn psi_vanishes_on_unit_level() {
        let ops = OperatorFamily::constant(diag(&[0.0]), vec![]).unwrap();
        let grid = TimeGrid::new(0.1, 0.05).unwrap();
        let path = BrownianPath::zero(0, grid);
        let eps = 0.19;
        let u0 = Vector::from_row_slice(&[0.9]);
        let traj = integrate_path(&ops, &u0, Scheme::EulerMaruyama, &path, "c").unwrap();
        assert!(psi_series(&traj, &ops, eps).unwrap().iter().all(|p| p.abs() < 1e-15));
    }

    #[test]
    fn hitting_time_examples() {
        let ops = OperatorFamily::constant(diag(&[1.0]), vec![]).unwrap();
        let dt = 1e-3;
        let grid = TimeGrid::new(2.0, dt).unwrap();
        let path = BrownianPath::zero(0, grid);
        let traj = integrate_path(&ops, &Vector::from_row_slice(&[1.0]), Scheme::DriftImplicit, &path, "d").unwrap();
        assert_eq!(hitting_time(&traj, 1.0), Some(0.0));
        assert_eq!(hitting_time(&traj, 0.01), None);
        let r = 0.5;
        // implicit decay (1+dt)^{-j}: crossing near ln 2 up to O(dt) drift
        let hit = hitting_time(&traj, r).unwrap();
        let exact = (1.0 / r).ln();
        assert!((hit - exact).abs() <= dt + exact * dt, "{hit} vs {exact}");
    }

    #[test]
    fn csv_has_documented_columns() {
        let sys = make_diagonal(&[1.0, 4.0], &[vec![0.3, 0.2]]).unwrap();
        let grid = TimeGrid::new(0.02, 0.01).unwrap();
        let traj = integrate_from(&sys, &sys.u0, Scheme::DriftImplicit, &grid, 1, 0).unwrap();
        let series = compute_series(&traj, &sys, None, &DiagnosticOptions::default()).unwrap();
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,norm_h,norm_v,norm_d,quotient,quotient_full,M,psi,residual,S,X\n"));
        assert_eq!(text.lines().count(), 4);
        let cols = read_series_csv(text.as_bytes()).unwrap();
        assert_eq!(cols[4].1, series.quotient);
    }

    proptest! {
        #[test]
        fn quotient_is_scale_invariant(xs in prop::collection::vec(-10.0f64..10.0, 4), s in 1e-3f64..1e3, neg in any::<bool>()) {
            let u = Vector::from_vec(xs);
            prop_assume!(u.norm() > 1e-6);
            let t = tilde(Matrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0));
            let s = if neg { -s } else { s };
            let a = quotient(&u, &t, 0.0).unwrap();
            let b = quotient(&(s * &u), &t, 0.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn quotient_lies_in_the_symmetric_spectrum(xs in prop::collection::vec(-10.0f64..10.0, 5), seed in 0u64..1000) {
            let u = Vector::from_vec(xs);
            prop_assume!(u.norm() > 1e-6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = tilde(Matrix::from_fn(5, 5, |_, _| rng.random_range(-2.0..2.0)));
            let q = quotient(&u, &t, 0.0).unwrap();
            let lo = min_eig_sym(&t.sym_part).unwrap();
            let hi = max_eig_sym(&t.sym_part).unwrap();
            prop_assert!(q >= lo - 1e-12 && q <= hi + 1e-12);
        }
    }
}
