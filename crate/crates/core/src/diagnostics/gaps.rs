//! Galerkin gaps `K₃(ε,N)`, `K₄(ε,N)` and `K₅(ε)`.

use serde::{Deserialize, Serialize};

use super::{padded_compression, PathForms, TildeCache};
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::spectral::linalg::trapezoid;
use crate::spectral::{OperatorFamily, SpectralBasis, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub n: usize,
    /// `∫ M_ε |(Ã_N − Ã)u|²/(|u|²+ε)`
    pub k3: f64,
    /// `∫ M_ε Σ_k ‖Q_N B_k u‖²/(|u|²+ε)`
    pub k4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTable {
    pub eps: f64,
    pub rows: Vec<GapRow>,
    /// `∫ M_ε |Ãu|²/(|u|²+ε)`
    pub k5: f64,
}

impl GapTable {
    pub fn k3_nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].k3 <= w[0].k3 * (1.0 + 1e-12))
    }

    pub fn k4_nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].k4 <= w[0].k4 * (1.0 + 1e-12))
    }
}

pub(super) fn gaps_with(
    traj: &Trajectory,
    ops: &OperatorFamily,
    basis: &SpectralBasis,
    m_eps: &[f64],
    eps: f64,
    n_list: &[usize],
) -> Result<GapTable> {
    let dim = basis.dim();
    if let Some(&bad) = n_list.iter().find(|&&n| n == 0 || n > dim) {
        return Err(Error::TruncationTooLarge { requested: bad, dim });
    }
    let hat = basis.eigenvalues();
    let steps = traj.len();
    let mut k3 = vec![vec![0.0; steps]; n_list.len()];
    let mut k4 = vec![vec![0.0; steps]; n_list.len()];
    let mut k5 = vec![0.0; steps];
    let mut cache = TildeCache::new(ops);
    for (j, (&t, u)) in traj.times.iter().zip(&traj.states).enumerate() {
        let tilde = cache.at(t)?.matrix.clone();
        let d = u.norm_squared() + eps;
        let w = m_eps[j] / d;
        let au = &tilde * u;
        k5[j] = w * au.norm_squared();
        let bus: Vec<Vector> = (0..ops.noise_count()).map(|k| Ok(&*ops.b_at(k, t)? * u)).collect::<Result<_>>()?;
        for (i, &n) in n_list.iter().enumerate() {
            let diff = &padded_compression(&tilde, n) * u - &au;
            k3[i][j] = w * diff.norm_squared();
            let tail: f64 = bus.iter().map(|bu| (n..dim).map(|l| hat[l] * bu[l] * bu[l]).sum::<f64>()).sum();
            k4[i][j] = w * tail;
        }
    }
    let rows = n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| GapRow { n, k3: trapezoid(&traj.times, &k3[i]), k4: trapezoid(&traj.times, &k4[i]) })
        .collect();
    Ok(GapTable { eps, rows, k5: trapezoid(&traj.times, &k5) })
}

/// Galerkin gaps of a trajectory for every `N` in `n_list`.
pub fn galerkin_gaps(
    traj: &Trajectory,
    ops: &OperatorFamily,
    basis: &SpectralBasis,
    eps: f64,
    n_list: &[usize],
) -> Result<GapTable> {
    let m = PathForms::new(traj, ops)?.martingale(eps)?;
    gaps_with(traj, ops, basis, &m, eps, n_list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate_from, Scheme, TimeGrid};
    use crate::systems::make_diagonal;

    #[test]
    fn full_projection_has_no_gap() {
        let sys = make_diagonal(&[1.0, 4.0, 9.0], &[vec![0.3, 0.2, 0.1]]).unwrap();
        let grid = TimeGrid::new(1.0, 1e-2).unwrap();
        let traj = integrate_from(&sys, &sys.u0, Scheme::DriftImplicit, &grid, 2, 0).unwrap();
        let g = galerkin_gaps(&traj, &sys.ops, &sys.basis, 1e-8, &[1, 2, 3]).unwrap();
        assert_eq!(g.rows[2].k3, 0.0);
        assert_eq!(g.rows[2].k4, 0.0);
        assert!(g.k3_nonincreasing() && g.k4_nonincreasing());
        assert!(galerkin_gaps(&traj, &sys.ops, &sys.basis, 1e-8, &[4]).is_err());
    }

    #[test]
    fn k5_matches_direct_quadrature() {
        let sys = make_diagonal(&[1.0, 4.0], &[vec![0.3, 0.1]]).unwrap();
        let grid = TimeGrid::new(0.5, 1e-2).unwrap();
        let traj = integrate_from(&sys, &sys.u0, Scheme::DriftImplicit, &grid, 3, 0).unwrap();
        let eps = 1e-3;
        let g = galerkin_gaps(&traj, &sys.ops, &sys.basis, eps, &[1]).unwrap();
        let m = super::super::exp_martingale(&traj, &sys.ops, eps).unwrap();
        let vals: Vec<f64> = traj
            .states
            .iter()
            .zip(&m)
            .map(|(u, m)| m * (u[0] * u[0] + 16.0 * u[1] * u[1]) / (u.norm_squared() + eps))
            .collect();
        assert!((g.k5 - trapezoid(&traj.times, &vals)).abs() < 1e-10 * g.k5);
        // N = 1 on a diagonal system: K₃ is the second-mode part of K₅
        let vals3: Vec<f64> =
            traj.states.iter().zip(&m).map(|(u, m)| m * 16.0 * u[1] * u[1] / (u.norm_squared() + eps)).collect();
        assert!((g.rows[0].k3 - trapezoid(&traj.times, &vals3)).abs() < 1e-10 * g.rows[0].k3);
    }
}
