//! Time stepping for `du = −(A(t)u + F(t,u))dt − Σ_k B_k(t)u dw^k`.
//!
//! The steppers work on the Itô form. Stratonovich systems go through
//! [`strat_to_ito`] once, at registration. The Itô correction uses `B_k²`,
//! whereas `Ã` uses `B_kᵀB_k`; the two agree only for symmetric `B_k`.

mod brownian;
mod convergence;

use std::io::Write;

use nalgebra::LU;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Matrix, OperatorFamily, SpectralBasis, TimeMatrix, Vector};
use crate::spectral::linalg::{cumulative_trapezoid, spectral_norm};
use crate::systems::SystemSpec;

pub use brownian::{sample_brownian, stream_rng, BrownianPath, TimeGrid};
pub use convergence::{strong_error_ladder, ConvergenceReport, Reference, REFERENCE_GAP};

/// Relative commutator norm below which two noise operators count as commuting.
pub const COMMUTING_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyama,
    Milstein,
    #[default]
    DriftImplicit,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "euler-maruyama",
            Scheme::Milstein => "milstein",
            Scheme::DriftImplicit => "drift-implicit",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler-maruyama" | "em" => Ok(Scheme::EulerMaruyama),
            "milstein" => Ok(Scheme::Milstein),
            "drift-implicit" | "implicit" => Ok(Scheme::DriftImplicit),
            other => Err(Error::InvalidParameter(format!("unknown scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Itô drift equivalent to a Stratonovich family: `A ↦ A − ½ Σ_k B_k²`.
pub fn strat_to_ito(ops: &OperatorFamily) -> Result<OperatorFamily> {
    if ops.noise_count() == 0 {
        return Ok(ops.clone());
    }
    let correction = |t: f64| -> Result<Matrix> {
        let mut a = ops.a_at(t)?.into_owned();
        for k in 0..ops.noise_count() {
            let b = ops.b_at(k, t)?;
            a -= 0.5 * (&*b * &*b);
        }
        Ok(a)
    };
    let a = if ops.bs().iter().all(TimeMatrix::is_constant) && ops.a().is_constant() {
        TimeMatrix::Constant(correction(0.0)?)
    } else {
        let times = ops.time_grid();
        let values = times.iter().map(|&t| correction(t)).collect::<Result<Vec<_>>>()?;
        let rule = match ops.a() {
            TimeMatrix::Sampled { rule, .. } => *rule,
            TimeMatrix::Constant(_) => ops
                .bs()
                .iter()
                .find_map(|b| match b {
                    TimeMatrix::Sampled { rule, .. } => Some(*rule),
                    TimeMatrix::Constant(_) => None,
                })
                .unwrap_or_default(),
        };
        TimeMatrix::sampled(times, values, rule)?
    };
    Ok(ops.with_a(a))
}

/// Largest relative commutator norm `‖[B_k,B_l]‖ / (‖B_k‖‖B_l‖)` over the
/// family's time grid.
pub fn noise_commutator_defect(ops: &OperatorFamily) -> Result<f64> {
    let times = if ops.bs().iter().all(TimeMatrix::is_constant) {
        vec![0.0]
    } else {
        ops.time_grid()
    };
    let mut worst: f64 = 0.0;
    for &t in &times {
        let bs = (0..ops.noise_count()).map(|k| ops.b_at(k, t)).collect::<Result<Vec<_>>>()?;
        for k in 0..bs.len() {
            for l in k + 1..bs.len() {
                let scale = spectral_norm(&bs[k]) * spectral_norm(&bs[l]);
                if scale == 0.0 {
                    continue;
                }
                let comm = &*bs[k] * &*bs[l] - &*bs[l] * &*bs[k];
                worst = worst.max(spectral_norm(&comm) / scale);
            }
        }
    }
    Ok(worst)
}

pub fn noise_commutes(ops: &OperatorFamily) -> Result<bool> {
    Ok(noise_commutator_defect(ops)? < COMMUTING_TOL)
}

fn check_finite(u: Vector, t: f64) -> Result<Vector> {
    if u.iter().all(|x| x.is_finite()) {
        Ok(u)
    } else {
        Err(Error::BlowUp { t })
    }
}

fn explicit_rhs(ops: &OperatorFamily, u: &Vector, t: f64, dt: f64, dw: &[f64], with_a: bool) -> Result<Vector> {
    if dw.len() != ops.noise_count() {
        return Err(Error::DimensionMismatch { expected: ops.noise_count(), got: dw.len() });
    }
    let mut next = u.clone();
    if with_a {
        next -= dt * (&*ops.a_at(t)? * u);
    }
    if let Some(f) = ops.f_at(t, u) {
        next -= dt * f;
    }
    for (k, &w) in dw.iter().enumerate() {
        if w != 0.0 {
            next -= w * (&*ops.b_at(k, t)? * u);
        }
    }
    Ok(next)
}

/// `u − dt(A(t)u + F(t,u)) − Σ_k B_k(t)u dw_k`.
pub fn step_euler_maruyama(ops: &OperatorFamily, u: &Vector, t: f64, dt: f64, dw: &[f64]) -> Result<Vector> {
    check_finite(explicit_rhs(ops, u, t, dt, dw, true)?, t + dt)
}

/// Euler–Maruyama plus `½ Σ_{k,l} B_kB_l u dw_k dw_l − ½ Σ_k B_k² u dt`.
/// Valid only for commuting noise; [`Stepper::new`] enforces that.
pub fn step_milstein_commutative(ops: &OperatorFamily, u: &Vector, t: f64, dt: f64, dw: &[f64]) -> Result<Vector> {
    let mut next = explicit_rhs(ops, u, t, dt, dw, true)?;
    let bs = (0..ops.noise_count()).map(|k| ops.b_at(k, t)).collect::<Result<Vec<_>>>()?;
    let mut s = Vector::zeros(u.len());
    for (b, &w) in bs.iter().zip(dw) {
        s += w * (&**b * u);
    }
    for (b, &w) in bs.iter().zip(dw) {
        let bu = &**b * u;
        next += 0.5 * w * (&**b * &s);
        next -= 0.5 * dt * (&**b * bu);
    }
    check_finite(next, t + dt)
}

/// Solves `(I + dt·A(t+dt)) u′ = u − dt·F(t,u) − Σ_k B_k(t)u dw_k`.
pub fn step_drift_implicit(ops: &OperatorFamily, u: &Vector, t: f64, dt: f64, dw: &[f64]) -> Result<Vector> {
    let lu = implicit_lu(ops, t + dt, dt)?;
    solve_implicit(&lu, explicit_rhs(ops, u, t, dt, dw, false)?, t + dt)
}

fn implicit_lu(ops: &OperatorFamily, t_next: f64, dt: f64) -> Result<LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let (_, end) = ops.time_range();
    let t_eval = t_next.min(end);
    let n = ops.dim();
    let m = Matrix::identity(n, n) + dt * &*ops.a_at(t_eval)?;
    let lu = m.lu();
    if !lu.is_invertible() {
        return Err(Error::SingularSolve { t: t_next });
    }
    Ok(lu)
}

fn solve_implicit(lu: &LU<f64, nalgebra::Dyn, nalgebra::Dyn>, rhs: Vector, t_next: f64) -> Result<Vector> {
    let next = lu.solve(&rhs).ok_or(Error::SingularSolve { t: t_next })?;
    check_finite(next, t_next)
}

/// A scheme bound to a family, caching the implicit factorisation when `A`
/// does not depend on time.
pub struct Stepper<'a> {
    ops: &'a OperatorFamily,
    scheme: Scheme,
    cached: Option<(f64, LU<f64, nalgebra::Dyn, nalgebra::Dyn>)>,
}

impl<'a> Stepper<'a> {
    pub fn new(ops: &'a OperatorFamily, scheme: Scheme) -> Result<Self> {
        if scheme == Scheme::Milstein && !noise_commutes(ops)? {
            return Err(Error::NonCommutingNoise { scheme: scheme.name().into() });
        }
        Ok(Stepper { ops, scheme, cached: None })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn step(&mut self, u: &Vector, t: f64, dt: f64, dw: &[f64]) -> Result<Vector> {
        match self.scheme {
            Scheme::EulerMaruyama => step_euler_maruyama(self.ops, u, t, dt, dw),
            Scheme::Milstein => step_milstein_commutative(self.ops, u, t, dt, dw),
            Scheme::DriftImplicit if self.ops.a().is_constant() => {
                if self.cached.as_ref().is_none_or(|(h, _)| *h != dt) {
                    self.cached = Some((dt, implicit_lu(self.ops, t + dt, dt)?));
                }
                let rhs = explicit_rhs(self.ops, u, t, dt, dw, false)?;
                solve_implicit(&self.cached.as_ref().unwrap().1, rhs, t + dt)
            }
            Scheme::DriftImplicit => step_drift_implicit(self.ops, u, t, dt, dw),
        }
    }
}

/// A sample path of Galerkin coefficients with its driver.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub path: BrownianPath,
    pub scheme: Scheme,
    pub system: String,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn terminal(&self) -> &Vector {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn norms_h(&self) -> Vec<f64> {
        self.states.iter().map(|u| u.norm()).collect()
    }
}

/// Integrates along a given Brownian path. Fails with the time of the first
/// non-finite state.
pub fn integrate_path(
    ops: &OperatorFamily,
    u0: &Vector,
    scheme: Scheme,
    path: &BrownianPath,
    label: &str,
) -> Result<Trajectory> {
    if u0.len() != ops.dim() {
        return Err(Error::DimensionMismatch { expected: ops.dim(), got: u0.len() });
    }
    if path.noise_count() != ops.noise_count() {
        return Err(Error::DimensionMismatch { expected: ops.noise_count(), got: path.noise_count() });
    }
    let grid = *path.grid();
    let (start, end) = ops.time_range();
    if start > 0.0 || end + 1e-12 < grid.time(grid.steps() - 1) {
        return Err(Error::TimeOutOfRange { t: grid.t_end(), start, end });
    }
    let mut stepper = Stepper::new(ops, scheme)?;
    let mut states = Vec::with_capacity(grid.steps() + 1);
    states.push(u0.clone());
    for j in 0..grid.steps() {
        let next = stepper.step(&states[j], grid.time(j), grid.dt(), path.increment(j))?;
        states.push(next);
    }
    Ok(Trajectory {
        times: grid.times(),
        states,
        path: path.clone(),
        scheme,
        system: label.to_string(),
        dt: grid.dt(),
    })
}

/// Integrates a registered system on the path `(seed, stream_id)`.
pub fn integrate(system: &SystemSpec, scheme: Scheme, grid: &TimeGrid, seed: u64, stream_id: u64) -> Result<Trajectory> {
    integrate_from(system, &system.u0, scheme, grid, seed, stream_id)
}

/// As [`integrate`] with a different initial condition.
pub fn integrate_from(
    system: &SystemSpec,
    u0: &Vector,
    scheme: Scheme,
    grid: &TimeGrid,
    seed: u64,
    stream_id: u64,
) -> Result<Trajectory> {
    if scheme == Scheme::Milstein && !system.commuting_noise {
        return Err(Error::NonCommutingNoise { scheme: scheme.name().into() });
    }
    let path = sample_brownian(system.ops.noise_count(), grid, seed, stream_id);
    integrate_path(&system.ops, u0, scheme, &path, &system.name)
}

/// Per-step nonlinearity ratio `|F(t,u)|/‖u‖` and its integrated square.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessTable {
    pub times: Vec<f64>,
    pub ratio: Vec<f64>,
    pub integral_sq: f64,
}

pub fn measure_nonlinearity_witness(traj: &Trajectory, ops: &OperatorFamily, basis: &SpectralBasis) -> Result<WitnessTable> {
    let mut ratio = Vec::with_capacity(traj.len());
    for (&t, u) in traj.times.iter().zip(&traj.states) {
        let v = basis.norm_v_sq(u).sqrt();
        let r = match ops.f_at(t, u) {
            Some(f) if v > 0.0 => f.norm() / v,
            _ => 0.0,
        };
        ratio.push(r);
    }
    let sq: Vec<f64> = ratio.iter().map(|r| r * r).collect();
    let integral_sq = *cumulative_trapezoid(&traj.times, &sq).last().unwrap_or(&0.0);
    Ok(WitnessTable { times: traj.times.clone(), ratio, integral_sq })
}

/// CSV with columns `t,u_1,...,u_N`.
pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n = traj.states.first().map_or(0, |u| u.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("u_{i}")));
    out.write_record(&header)?;
    for (t, u) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![format!("{t}")];
        row.extend(u.iter().map(|x| format!("{x}")));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(a: f64, b: f64) -> OperatorFamily {
        OperatorFamily::constant(Matrix::from_element(1, 1, a), vec![Matrix::from_element(1, 1, b)]).unwrap()
    }

    #[test]
    fn zero_operators_leave_state_unchanged() {
        let ops = OperatorFamily::constant(Matrix::zeros(2, 2), vec![Matrix::zeros(2, 2)]).unwrap();
        let u = Vector::from_vec(vec![1.0, -2.0]);
        for scheme in [Scheme::EulerMaruyama, Scheme::Milstein, Scheme::DriftImplicit] {
            let mut s = Stepper::new(&ops, scheme).unwrap();
            assert_eq!(s.step(&u, 0.0, 0.1, &[0.3]).unwrap(), u);
        }
    }

    #[test]
    fn scalar_em_step_matches_hand_expansion() {
        let (a, b, dt, dw) = (1.5, 0.4, 0.01, 0.07);
        let ops = scalar(a, b);
        let u = Vector::from_element(1, 2.0);
        let next = step_euler_maruyama(&ops, &u, 0.0, dt, &[dw]).unwrap();
        assert_relative_eq!(next[0], 2.0 * (1.0 - a * dt - b * dw), max_relative = 1e-15);
    }

    #[test]
    fn milstein_without_increment_adds_ito_correction() {
        let (a, b, dt) = (1.0, 0.5, 0.01);
        let ops = scalar(a, b);
        let u = Vector::from_element(1, 1.0);
        let next = step_milstein_commutative(&ops, &u, 0.0, dt, &[0.0]).unwrap();
        assert_relative_eq!(next[0], 1.0 - a * dt - 0.5 * b * b * dt, max_relative = 1e-15);
        let det = scalar(a, 0.0);
        let em = step_euler_maruyama(&det, &u, 0.0, dt, &[0.2]).unwrap();
        assert_eq!(step_milstein_commutative(&det, &u, 0.0, dt, &[0.2]).unwrap(), em);
    }

    #[test]
    fn milstein_rejects_noncommuting_noise() {
        let b1 = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b2 = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let ops = OperatorFamily::constant(Matrix::identity(2, 2), vec![b1, b2]).unwrap();
        assert!(matches!(Stepper::new(&ops, Scheme::Milstein), Err(Error::NonCommutingNoise { .. })));
    }

    #[test]
    fn implicit_heat_step_is_modewise_division() {
        let lam = [1.0, 4.0, 9.0];
        let ops = OperatorFamily::constant(Matrix::from_diagonal(&Vector::from_row_slice(&lam)), vec![]).unwrap();
        let u = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        let dt = 0.5;
        let next = step_drift_implicit(&ops, &u, 0.0, dt, &[]).unwrap();
        for i in 0..3 {
            assert_relative_eq!(next[i], 1.0 / (1.0 + dt * lam[i]), max_relative = 1e-14);
        }
        let zero = step_drift_implicit(&ops, &Vector::zeros(3), 0.0, dt, &[]).unwrap();
        assert_eq!(zero, Vector::zeros(3));
    }

    #[test]
    fn implicit_and_explicit_differ_at_second_order() {
        let ops = OperatorFamily::constant(
            Matrix::from_row_slice(2, 2, &[2.0, 0.5, -0.3, 1.0]),
            vec![],
        )
        .unwrap();
        let u = Vector::from_vec(vec![0.7, -0.2]);
        let diff = |dt: f64| {
            let a = step_drift_implicit(&ops, &u, 0.0, dt, &[]).unwrap();
            let b = step_euler_maruyama(&ops, &u, 0.0, dt, &[]).unwrap();
            (a - b).norm()
        };
        let ratio = diff(1e-3) / diff(5e-4);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn singular_implicit_solve_is_reported() {
        let ops = scalar(-1.0, 0.0);
        let u = Vector::from_element(1, 1.0);
        assert!(matches!(step_drift_implicit(&ops, &u, 0.0, 1.0, &[0.0]), Err(Error::SingularSolve { .. })));
    }

    #[test]
    fn blow_up_reports_time() {
        let ops = scalar(-1e300, 0.0);
        let u = Vector::from_element(1, 1e300);
        match step_euler_maruyama(&ops, &u, 0.5, 0.25, &[0.0]) {
            Err(Error::BlowUp { t }) => assert_eq!(t, 0.75),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn strat_to_ito_matrix_identities() {
        let b = Matrix::from_row_slice(2, 2, &[0.0, 0.7, -0.7, 0.0]);
        let a = Matrix::identity(2, 2);
        let ops = OperatorFamily::constant(a.clone(), vec![b.clone()]).unwrap();
        let ito = strat_to_ito(&ops).unwrap();
        let expected = &a + 0.5 * b.transpose() * &b;
        assert!((&*ito.a_at(0.0).unwrap() - expected).norm() < 1e-15);

        let c = 0.3;
        let sym = OperatorFamily::constant(a.clone(), vec![c * Matrix::identity(2, 2)]).unwrap();
        let ito = strat_to_ito(&sym).unwrap();
        let tilde = crate::spectral::assemble_tilde_a(&sym, 0.0).unwrap().matrix;
        assert!((&*ito.a_at(0.0).unwrap() - tilde).norm() < 1e-15);

        let none = OperatorFamily::constant(a.clone(), vec![Matrix::zeros(2, 2)]).unwrap();
        assert_eq!(*strat_to_ito(&none).unwrap().a_at(0.0).unwrap(), a);
    }

    #[test]
    fn strat_to_ito_on_sampled_family() {
        let times = vec![0.0, 1.0];
        let bs = TimeMatrix::sampled(
            times.clone(),
            vec![Matrix::from_element(1, 1, 1.0), Matrix::from_element(1, 1, 2.0)],
            crate::spectral::Interpolation::PiecewiseConstant,
        )
        .unwrap();
        let ops = OperatorFamily::new(TimeMatrix::Constant(Matrix::from_element(1, 1, 3.0)), vec![bs]).unwrap();
        let ito = strat_to_ito(&ops).unwrap();
        assert_eq!(ito.a_at(0.0).unwrap()[(0, 0)], 2.5);
        assert_eq!(ito.a_at(1.0).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn zero_initial_condition_stays_zero() {
        let ops = scalar(1.0, 0.8);
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let path = sample_brownian(1, &grid, 5, 0);
        for scheme in [Scheme::EulerMaruyama, Scheme::Milstein, Scheme::DriftImplicit] {
            let tr = integrate_path(&ops, &Vector::zeros(1), scheme, &path, "s").unwrap();
            assert!(tr.states.iter().all(|u| u[0] == 0.0));
        }
    }

    #[test]
    fn witness_is_zero_without_nonlinearity_and_bounded_for_linear_drift() {
        let basis = SpectralBasis::new(vec![1.0, 4.0], "t").unwrap();
        let ops = OperatorFamily::constant(basis.hat_matrix(), vec![Matrix::identity(2, 2) * 0.2]).unwrap();
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let path = sample_brownian(1, &grid, 1, 0);
        let u0 = Vector::from_vec(vec![1.0, 1.0]);
        let tr = integrate_path(&ops, &u0, Scheme::EulerMaruyama, &path, "s").unwrap();
        let w = measure_nonlinearity_witness(&tr, &ops, &basis).unwrap();
        assert!(w.ratio.iter().all(|&r| r == 0.0));

        let r = Matrix::from_row_slice(2, 2, &[0.3, -1.0, 0.5, 2.0]);
        let drift = crate::spectral::LinearDrift::new(TimeMatrix::Constant(r.clone()), basis.eigenvalues().to_vec());
        let ops = ops.with_nonlinearity(std::sync::Arc::new(drift));
        let tr = integrate_path(&ops, &u0, Scheme::EulerMaruyama, &path, "s").unwrap();
        let w = measure_nonlinearity_witness(&tr, &ops, &basis).unwrap();
        let bound = crate::spectral::operator_norm_v_h(&r, basis.eigenvalues());
        assert!(w.ratio.iter().all(|&x| x <= bound * (1.0 + 1e-12)));
        assert!(w.integral_sq.is_finite());
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let ops = scalar(1.0, 0.0);
        let grid = TimeGrid::new(0.5, 0.25).unwrap();
        let path = sample_brownian(1, &grid, 1, 0);
        let tr = integrate_path(&ops, &Vector::from_element(1, 1.0), Scheme::EulerMaruyama, &path, "s").unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &tr).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,u_1\n0,1\n0.25,0.75\n0.5,0.5625\n");
    }

    proptest! {
        #[test]
        fn linear_in_initial_condition(u in prop::collection::vec(-2.0f64..2.0, 3),
                                       v in prop::collection::vec(-2.0f64..2.0, 3),
                                       seed in 0u64..1000) {
            let a = Matrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, -0.1, 3.0, 0.2, 0.0, 0.0, 5.0]);
            let b = Matrix::from_row_slice(3, 3, &[0.2, 0.1, 0.0, 0.0, -0.3, 0.1, 0.05, 0.0, 0.1]);
            let ops = OperatorFamily::constant(a, vec![b]).unwrap();
            let grid = TimeGrid::new(0.5, 0.01).unwrap();
            let path = sample_brownian(1, &grid, seed, 3);
            let (u, v) = (Vector::from_vec(u), Vector::from_vec(v));
            for scheme in [Scheme::EulerMaruyama, Scheme::DriftImplicit] {
                let tu = integrate_path(&ops, &u, scheme, &path, "p").unwrap();
                let tv = integrate_path(&ops, &v, scheme, &path, "p").unwrap();
                let tw = integrate_path(&ops, &(&u + &v), scheme, &path, "p").unwrap();
                for j in 0..tw.len() {
                    let sum = &tu.states[j] + &tv.states[j];
                    let scale = sum.norm().max(tw.states[j].norm()).max(1e-300);
                    prop_assert!((&tw.states[j] - sum).norm() <= 1e-10 * scale.max(1.0));
                }
            }
        }
    }
}
