//! Strong-error ladders on shared Brownian paths.
//!
//! Every level is driven by the finest path coarsened, so level errors are
//! coupled path by path. The reference is the system's closed-form oracle
//! when it has one and a run on the finest grid otherwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{integrate_path, sample_brownian, Scheme, TimeGrid};
use crate::error::{Error, Result};
use crate::spectral::linalg::{ls_slope, mean_and_stderr};
use crate::systems::SystemSpec;

/// Grid levels between the refined reference and the finest ladder level.
pub const REFERENCE_GAP: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    Oracle,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub system: String,
    pub scheme: Scheme,
    pub reference: Reference,
    pub paths: usize,
    /// Step sizes, finest first.
    pub dts: Vec<f64>,
    /// `E|u_dt(T) − u_ref(T)|` per level.
    pub errors: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Least-squares slope of `log error` against `log dt`.
    pub slope: f64,
}

/// Strong errors at `T` on `levels` grids, the finest with step `finest_dt`
/// and each next one twice as coarse.
pub fn strong_error_ladder(
    system: &SystemSpec,
    scheme: Scheme,
    t_end: f64,
    finest_dt: f64,
    levels: usize,
    paths: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if levels < 2 {
        return Err(Error::InvalidParameter(format!("a convergence ladder needs at least 2 levels, got {levels}")));
    }
    if paths == 0 {
        return Err(Error::EmptyEnsemble("convergence ladder over zero paths".into()));
    }
    if scheme == Scheme::Milstein && !system.commuting_noise {
        return Err(Error::NonCommutingNoise { scheme: scheme.name().into() });
    }
    let ladder = TimeGrid::new(t_end, finest_dt)?;
    let coarsest = ladder.coarsen(1 << (levels - 1))?;
    let (reference, gap) = match system.oracle {
        Some(_) => (Reference::Oracle, 0),
        None => (Reference::Refined, REFERENCE_GAP),
    };
    let base = TimeGrid::new(t_end, finest_dt / (1 << gap) as f64)?;
    let noise = system.ops.noise_count();
    let per_path: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|idx| {
            let path = sample_brownian(noise, &base, seed, idx as u64);
            let exact = match &system.oracle {
                Some(o) => {
                    let w: Vec<f64> = (0..noise).map(|k| path.terminal(k)).collect();
                    o.solution(&system.u0, t_end, &w)
                }
                None => integrate_path(&system.ops, &system.u0, scheme, &path, &system.name)?.terminal().clone(),
            };
            (0..levels)
                .map(|l| {
                    let coarse = path.coarsen(1 << (l + gap))?;
                    let traj = integrate_path(&system.ops, &system.u0, scheme, &coarse, &system.name)?;
                    Ok((traj.terminal() - &exact).norm())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut dts = Vec::with_capacity(levels);
    let mut errors = Vec::with_capacity(levels);
    let mut stderrs = Vec::with_capacity(levels);
    for l in 0..levels {
        let column: Vec<f64> = per_path.iter().map(|e| e[l]).collect();
        let (m, se) = mean_and_stderr(&column);
        dts.push(finest_dt * (1 << l) as f64);
        errors.push(m);
        stderrs.push(se);
    }
    debug_assert!((dts[levels - 1] - coarsest.dt()).abs() < 1e-12 * coarsest.dt());
    let log_dt: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let log_err: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    Ok(ConvergenceReport {
        schema_version: crate::assumptions::SCHEMA_VERSION,
        system: system.name.clone(),
        scheme,
        reference,
        paths,
        dts,
        errors,
        stderrs,
        slope: ls_slope(&log_dt, &log_err),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Vector;
    use crate::systems::make_diagonal;

    fn gbm() -> SystemSpec {
        make_diagonal(&[0.5], &[vec![0.8]]).unwrap().with_u0(Vector::from_row_slice(&[1.0])).unwrap()
    }

    #[test]
    fn gbm_slopes_match_strong_orders() {
        let sys = gbm();
        let em = strong_error_ladder(&sys, Scheme::EulerMaruyama, 1.0, 1.0 / 512.0, 4, 400, 5).unwrap();
        assert_eq!(em.reference, Reference::Oracle);
        assert!((0.35..=0.65).contains(&em.slope), "{em:?}");
        let mil = strong_error_ladder(&sys, Scheme::Milstein, 1.0, 1.0 / 512.0, 4, 400, 5).unwrap();
        assert!((0.85..=1.15).contains(&mil.slope), "{mil:?}");
        assert!(mil.errors[0] < em.errors[0]);
    }

    #[test]
    fn refined_reference_is_used_without_oracle() {
        let mut sys = gbm();
        sys.oracle = None;
        let r = strong_error_ladder(&sys, Scheme::Milstein, 1.0, 1.0 / 64.0, 3, 50, 1).unwrap();
        assert_eq!(r.reference, Reference::Refined);
        assert!(r.errors.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invalid_ladders_are_rejected() {
        let sys = gbm();
        assert!(strong_error_ladder(&sys, Scheme::EulerMaruyama, 1.0, 0.1, 1, 10, 0).is_err());
        assert!(strong_error_ladder(&sys, Scheme::EulerMaruyama, 1.0, 0.1, 2, 0, 0).is_err());
        assert!(strong_error_ladder(&sys, Scheme::EulerMaruyama, 1.0, 0.1, 3, 10, 0).is_err());
    }
}
