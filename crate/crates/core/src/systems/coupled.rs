//! `n`-component system on the torus `Tⁿ`:
//!
//! ```text
//! du^k = (div(a∇u^k) + e^{−κt}(b·∇u^k + Σ_l c^{kl}u^l))dt + Σ_{m,l} h_k^{ml}(t) u^l ∘ dw^m
//! ```
//!
//! with constant `a` (positive definite), constant `b`, `c` damped by the
//! rate `κ`, and `h^m(t)` spatially constant `n×n` tables. The state is
//! stored mode-major: index `i·n + k` holds component `k` of mode `i`, so the
//! noise acts block-diagonally, one `n×n` block per Fourier mode.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::linalg::{min_eig_sym, trapezoid};
use crate::spectral::{Interpolation, LinearDrift, Matrix, OperatorFamily, SpectralBasis, TimeMatrix, Vector};

use super::torus::{Quadrature, TorusBasis, TrigField};
use super::{standard_statuses, NoiseForm, SystemSpec};
use crate::assumptions::Status;

/// Time tables `h^m(t_j)`, one list of `n×n` matrices per noise index `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingTable {
    pub times: Vec<f64>,
    /// `h[m][j]` is the matrix `h^m(times[j])`, row `k`, column `l`.
    pub h: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledParams {
    pub n: usize,
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub c: Vec<Vec<f64>>,
    #[serde(default = "default_decay")]
    pub decay: f64,
    pub coupling: CouplingTable,
    #[serde(default)]
    pub noise_form: NoiseForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
}

fn default_decay() -> f64 {
    1.0
}

impl CoupledParams {
    /// Two components with noise switched off after `t = 5`.
    pub fn example() -> Self {
        let on = vec![vec![0.3, 0.1], vec![-0.1, 0.2]];
        let off = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        CoupledParams {
            n: 2,
            a: vec![vec![1.0, 0.2], vec![0.2, 1.5]],
            b: vec![0.5, -0.2],
            c: vec![vec![0.1, 0.0], vec![0.3, -0.1]],
            decay: 1.0,
            coupling: CouplingTable { times: vec![0.0, 5.0, 100.0], h: vec![vec![on, off.clone(), off]] },
            noise_form: NoiseForm::Stratonovich,
            u0: None,
        }
    }
}

fn square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<Matrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter(format!("{what} must be {n}×{n}")));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Checks finiteness of `∫(|h|² + |∇h|² + |Δh|²)dt` on the table grid; the
/// gradient terms vanish for spatially constant tables.
fn check_integrability(table: &CouplingTable, mats: &[Vec<Matrix>]) -> Result<f64> {
    let mut total = 0.0;
    for (m, series) in mats.iter().enumerate() {
        let sq: Vec<f64> = series.iter().map(|h| h.norm_squared()).collect();
        let integral = trapezoid(&table.times, &sq);
        if !integral.is_finite() {
            return Err(Error::InvalidParameter(format!("coupling table {m} is not square integrable")));
        }
        total += integral;
    }
    Ok(total)
}

pub fn make_coupled_system(p: &CoupledParams, modes: usize) -> Result<SystemSpec> {
    let n = p.n;
    if !(1..=2).contains(&n) {
        return Err(Error::InvalidParameter(format!("n = {n} not supported (1 or 2)")));
    }
    let a = square(&p.a, n, "a")?;
    if min_eig_sym(&a)? <= 0.0 {
        return Err(Error::InvalidParameter("a must be positive definite".into()));
    }
    let c = if p.c.is_empty() { Matrix::zeros(n, n) } else { square(&p.c, n, "c")? };
    let b: Vec<f64> = if p.b.is_empty() { vec![0.0; n] } else { p.b.clone() };
    if b.len() != n {
        return Err(Error::InvalidParameter(format!("b must have {n} entries")));
    }
    if !(p.decay >= 0.0) {
        return Err(Error::InvalidParameter(format!("decay rate {} must be nonnegative", p.decay)));
    }
    let times = &p.coupling.times;
    if times.len() < 2 || times[0] != 0.0 {
        return Err(Error::InvalidParameter("coupling times must start at 0 with at least two points".into()));
    }
    let mats = p
        .coupling
        .h
        .iter()
        .map(|series| {
            if series.len() != times.len() {
                return Err(Error::InvalidParameter("coupling table length differs from its time grid".into()));
            }
            series.iter().map(|rows| square(rows, n, "h")).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    check_integrability(&p.coupling, &mats)?;

    let torus = TorusBasis::new(n, modes)?;
    let per = torus.len();
    let hat: Vec<f64> = torus.hat_eigenvalues().iter().flat_map(|&l| std::iter::repeat_n(l, n)).collect();
    let basis = SpectralBasis::new(hat, format!("torus-{n}d-{n}comp"))?;
    let eye_modes = Matrix::identity(per, per);
    let eye_comp = Matrix::identity(n, n);

    let symbol: Vec<f64> = torus
        .modes()
        .iter()
        .map(|m| {
            let v = Vector::from_iterator(n, m.wave.iter().map(|&x| x as f64));
            (v.transpose() * &a * &v)[(0, 0)]
        })
        .collect();
    let a_op = Matrix::from_diagonal(&Vector::from_vec(symbol)).kronecker(&eye_comp);

    let bs = mats
        .iter()
        .map(|series| {
            let values = series.iter().map(|h| eye_modes.kronecker(h)).collect();
            TimeMatrix::sampled(times.clone(), values, Interpolation::PiecewiseConstant)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut declared = OperatorFamily::new(TimeMatrix::Constant(a_op), bs)?;
    let b_fields: Vec<TrigField> = b.iter().map(|&x| TrigField::constant(x)).collect();
    let q = Quadrature::new(&torus, 0);
    let lower = q.advection(&b_fields).kronecker(&eye_comp) + eye_modes.kronecker(&c);
    if lower.norm() > 0.0 {
        // du = (... + e^{−κt}(b·∇ + c)u)dt  ⇒  F = −e^{−κt}(b·∇ + c)
        let values = times.iter().map(|&t| -(-p.decay * t).exp() * &lower).collect();
        let r = TimeMatrix::sampled(times.clone(), values, Interpolation::PiecewiseLinear)?;
        declared = declared.with_nonlinearity(Arc::new(LinearDrift::new(r, basis.eigenvalues().to_vec())));
    }
    let u0 = Vector::from_iterator(
        per * n,
        torus.smooth_state().iter().flat_map(|&x| (0..n).map(move |k| x / (1.0 + k as f64))),
    );
    Ok(SystemSpec::register("coupled", basis, declared, p.noise_form, u0)?
        .with_documented(&standard_statuses(Status::Empirical, true)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::assemble_tilde_a;
    use crate::systems::make_torus_heat_scalar_noise;

    fn constant_table(n: usize, h: Vec<Vec<f64>>) -> CouplingTable {
        let _ = n;
        CouplingTable { times: vec![0.0, 100.0], h: vec![vec![h.clone(), h]] }
    }

    #[test]
    fn one_component_reduces_to_scalar_noise() {
        let p = CoupledParams {
            n: 1,
            a: vec![vec![1.0]],
            b: vec![],
            c: vec![],
            decay: 1.0,
            coupling: constant_table(1, vec![vec![0.4]]),
            noise_form: NoiseForm::Stratonovich,
            u0: None,
        };
        let coupled = make_coupled_system(&p, 11).unwrap();
        let scalar = make_torus_heat_scalar_noise(1, 11, &[TrigField::constant(0.4)], &[], &TrigField::default(), NoiseForm::Stratonovich).unwrap();
        let t1 = assemble_tilde_a(&coupled.ops, 1.0).unwrap().matrix;
        let t2 = assemble_tilde_a(&scalar.ops, 0.0).unwrap().matrix;
        assert!((t1 - t2).norm() < 1e-12);
    }

    #[test]
    fn blocks_decouple_across_modes() {
        let s = make_coupled_system(&CoupledParams::example(), 9).unwrap();
        let n = 2;
        let ta = assemble_tilde_a(&s.ops, 1.0).unwrap().matrix;
        let b = s.ops.b_at(0, 1.0).unwrap();
        for i in 0..ta.nrows() {
            for j in 0..ta.ncols() {
                if i / n != j / n {
                    assert_eq!(ta[(i, j)], 0.0);
                    assert_eq!(b[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn noise_switches_off() {
        let s = make_coupled_system(&CoupledParams::example(), 9).unwrap();
        assert!(s.ops.b_at(0, 6.0).unwrap().norm() == 0.0);
        assert!(s.ops.b_at(0, 1.0).unwrap().norm() > 0.0);
    }

    #[test]
    fn rejects_bad_tables() {
        let mut p = CoupledParams::example();
        p.coupling.h[0][1][0][0] = f64::INFINITY;
        assert!(make_coupled_system(&p, 9).is_err());
        let mut p = CoupledParams::example();
        p.a = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(make_coupled_system(&p, 9).is_err());
    }
}
