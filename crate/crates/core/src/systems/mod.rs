//! Ready-made operator families.
//!
//! Every builder returns a [`SystemSpec`] whose operators are already in Itô
//! form (Stratonovich inputs are converted once, here) together with the
//! assumption statuses the checker is expected to report for it.
//!
//! | name | model | statuses |
//! |---|---|---|
//! | `diagonal` | `du_i = −a_i u_i dt − Σ_k b_{k,i} u_i ∘ dw^k` with closed-form solution | AC5 empirical, AC7 certified when all `ã_i > 0`, rest certified |
//! | `torus-scalar-noise` | heat equation with multiplicative scalar noise `Σ c_l u ∘ dw^l` | AC5, AC7 empirical (`Ã` has a nonpositive mode), rest certified |
//! | `torus-gradient-noise` | heat equation with transport noise `Σ σ_k ∂_k u ∘ dw^k` | AC5, AC7 empirical; AC2/AC6 failed for the Itô reading with `σ² ≥ 2` |
//! | `coupled` | `n`-component system on `Tⁿ` with component-coupling noise | AC5 empirical, AC7 certified when `Ã` is positive definite |
//! | `nse2d` | 2-D Navier–Stokes in the divergence-free Fourier basis | AC5 empirical, AC7 certified |

mod nse;
mod coupled;
mod torus;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assumptions::{AcKey, Status};
use crate::error::{Error, Result};
use crate::integrator::{noise_commutator_defect, strat_to_ito, COMMUTING_TOL};
use crate::spectral::{LinearDrift, Matrix, OperatorFamily, SpectralBasis, TimeMatrix, Vector};

pub use nse::{make_nse_2d, nse_mode_count, NavierStokes2d, NseParams};
pub use coupled::{make_coupled_system, CouplingTable, CoupledParams};
pub use torus::{Parity, Quadrature, TorusBasis, TrigField, TrigMode, TrigTerm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseForm {
    Ito,
    #[default]
    Stratonovich,
}

/// Closed-form solutions attached to a system.
#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    /// `u_i(t) = u_i(0)·exp(−rate_i·t − Σ_k noise[k][i]·w^k(t))`.
    DiagonalExponential { rates: Vec<f64>, noise: Vec<Vec<f64>> },
}

impl Oracle {
    pub fn solution(&self, u0: &Vector, t: f64, w: &[f64]) -> Vector {
        match self {
            Oracle::DiagonalExponential { rates, noise } => Vector::from_iterator(
                u0.len(),
                (0..u0.len()).map(|i| {
                    let stoch: f64 = noise.iter().zip(w).map(|(b, wk)| b[i] * wk).sum();
                    u0[i] * (-rates[i] * t - stoch).exp()
                }),
            ),
        }
    }
}

/// A registered system: basis, Itô-form operators and metadata.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub name: String,
    pub basis: SpectralBasis,
    pub ops: OperatorFamily,
    pub noise_form: NoiseForm,
    pub commuting_noise: bool,
    pub oracle: Option<Oracle>,
    pub u0: Vector,
    /// Statuses the assumption checker should report.
    pub documented: BTreeMap<AcKey, Status>,
    /// Sampled constant of `|B(u,v)| + |B(v,u)| ≤ K‖u‖|Âv|` for quadratic systems.
    pub quadratic_constant: Option<f64>,
}

impl SystemSpec {
    /// Registers a family given in `noise_form`, converting to Itô form.
    pub fn register(
        name: impl Into<String>,
        basis: SpectralBasis,
        declared: OperatorFamily,
        noise_form: NoiseForm,
        u0: Vector,
    ) -> Result<Self> {
        if declared.dim() != basis.dim() || u0.len() != basis.dim() {
            return Err(Error::DimensionMismatch { expected: basis.dim(), got: declared.dim().max(u0.len()) });
        }
        let ops = match noise_form {
            NoiseForm::Ito => declared,
            NoiseForm::Stratonovich => strat_to_ito(&declared)?,
        };
        let commuting_noise = noise_commutator_defect(&ops)? < COMMUTING_TOL;
        Ok(SystemSpec {
            name: name.into(),
            basis,
            ops,
            noise_form,
            commuting_noise,
            oracle: None,
            u0,
            documented: BTreeMap::new(),
            quadratic_constant: None,
        })
    }

    fn with_documented(mut self, entries: &[(AcKey, Status)]) -> Self {
        self.documented = entries.iter().copied().collect();
        self
    }

    pub fn with_u0(mut self, u0: Vector) -> Result<Self> {
        if u0.len() != self.basis.dim() {
            return Err(Error::DimensionMismatch { expected: self.basis.dim(), got: u0.len() });
        }
        self.u0 = u0;
        Ok(self)
    }
}

fn standard_statuses(ac7: Status, coercive: bool) -> Vec<(AcKey, Status)> {
    let ac2 = if coercive { Status::Certified } else { Status::Failed };
    vec![
        (AcKey::Ac0, Status::Certified),
        (AcKey::Ac2, ac2),
        (AcKey::Ac3, Status::Certified),
        (AcKey::Ac4, Status::Certified),
        (AcKey::Ac5, Status::Empirical),
        (AcKey::Ac6, ac2),
        (AcKey::Ac7, ac7),
        (AcKey::K6, Status::Certified),
    ]
}

/// Diagonal closed-form oracle with `Ã = diag(tilde_eigs)`.
///
/// `noise[k][i]` is the coefficient of mode `i` in the `k`-th noise. The
/// Stratonovich drift is `a_i = ã_i + Σ_k b_{k,i}²`, so that after
/// conversion `Ã = A − ½ΣB_kᵀB_k` is exactly `diag(ã)`.
pub fn make_diagonal(tilde_eigs: &[f64], noise: &[Vec<f64>]) -> Result<SystemSpec> {
    let n = tilde_eigs.len();
    if n == 0 {
        return Err(Error::InvalidParameter("tilde_eigs must be nonempty".into()));
    }
    if tilde_eigs.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("tilde_eigs must be ascending".into()));
    }
    if let Some(row) = noise.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: row.len() });
    }
    let rates: Vec<f64> = (0..n)
        .map(|i| tilde_eigs[i] + noise.iter().map(|b| b[i] * b[i]).sum::<f64>())
        .collect();
    let a = Matrix::from_diagonal(&Vector::from_row_slice(&rates));
    let bs = noise.iter().map(|b| Matrix::from_diagonal(&Vector::from_row_slice(b))).collect();
    let declared = OperatorFamily::constant(a, bs)?;
    // the basis only fixes the V-norm here; any positive ascending sequence works
    let lam_min = tilde_eigs[0];
    let hat: Vec<f64> = if lam_min > 0.0 {
        tilde_eigs.to_vec()
    } else {
        tilde_eigs.iter().map(|x| x - lam_min + 1.0).collect()
    };
    let basis = SpectralBasis::new(hat, "diagonal")?;
    let ac7 = if lam_min > 0.0 { Status::Certified } else { Status::Empirical };
    let mut spec = SystemSpec::register("diagonal", basis, declared, NoiseForm::Stratonovich, Vector::from_element(n, 1.0))?
        .with_documented(&standard_statuses(ac7, true));
    spec.oracle = Some(Oracle::DiagonalExponential { rates, noise: noise.to_vec() });
    Ok(spec)
}

fn torus_basis(dim: usize, modes: usize) -> Result<(TorusBasis, SpectralBasis)> {
    let torus = TorusBasis::new(dim, modes)?;
    let label = format!("torus-{dim}d");
    let basis = SpectralBasis::new(torus.hat_eigenvalues(), label)?;
    Ok((torus, basis))
}

fn first_order_drift(q: &Quadrature, drift: &[TrigField], potential: &TrigField) -> Option<Matrix> {
    if drift.iter().all(TrigField::is_zero) && potential.is_zero() {
        return None;
    }
    // du = (Δu + b·∇u + cu)dt  ⇒  F = −(b·∇ + c)
    Some(-(q.advection(drift) + q.multiplication(potential)))
}

/// Heat equation with scalar multiplicative noise:
/// `du = (Δu + b·∇u + c u)dt + Σ_l c_l u ∘ dw^l`.
///
/// `A = −Δ`, `B_l` = multiplication by `c_l`, `F = −(b·∇ + c)`. With the
/// Stratonovich reading `Ã = −Δ − Σ_l c_l²`; with the Itô reading
/// `Ã = −Δ − ½Σ_l c_l²` (for constant `c_l`).
pub fn make_torus_heat_scalar_noise(
    dim: usize,
    modes: usize,
    noise: &[TrigField],
    drift: &[TrigField],
    potential: &TrigField,
    noise_form: NoiseForm,
) -> Result<SystemSpec> {
    let (torus, basis) = torus_basis(dim, modes)?;
    if drift.len() > dim {
        return Err(Error::InvalidParameter(format!("{} drift fields for dimension {dim}", drift.len())));
    }
    let bw = torus::check_fields(&torus, noise.iter().chain(drift).chain([potential]))?;
    let q = Quadrature::new(&torus, bw);
    let a = Matrix::from_diagonal(&Vector::from_vec(torus.laplacian_symbol()));
    let bs = noise.iter().map(|c| q.multiplication(c)).collect();
    let mut declared = OperatorFamily::constant(a, bs)?;
    if let Some(r) = first_order_drift(&q, drift, potential) {
        let f = LinearDrift::new(TimeMatrix::Constant(r), basis.eigenvalues().to_vec());
        declared = declared.with_nonlinearity(Arc::new(f));
    }
    let u0 = torus.smooth_state();
    Ok(SystemSpec::register("torus-scalar-noise", basis, declared, noise_form, u0)?
        .with_documented(&standard_statuses(Status::Empirical, true)))
}

/// Heat equation with transport noise `du = Δu dt + Σ_k σ_k ∂_k u ∘ dw^k`.
///
/// `A = −Δ`, `B_k = σ_k ∂_k`. For the Stratonovich reading `Ã = −Δ` whatever
/// `σ`; for the Itô reading with constant `σ` in 1-D, `ã_m = m²(1 − σ²/2)`,
/// which loses coercivity once `σ² ≥ 2`.
pub fn make_torus_heat_gradient_noise(
    dim: usize,
    modes: usize,
    sigma: &[TrigField],
    noise_form: NoiseForm,
) -> Result<SystemSpec> {
    let (torus, basis) = torus_basis(dim, modes)?;
    if sigma.is_empty() || sigma.len() > dim {
        return Err(Error::InvalidParameter(format!(
            "expected 1..={dim} sigma fields, got {}",
            sigma.len()
        )));
    }
    let bw = torus::check_fields(&torus, sigma)?;
    let q = Quadrature::new(&torus, bw);
    let a = Matrix::from_diagonal(&Vector::from_vec(torus.laplacian_symbol()));
    let bs = sigma.iter().enumerate().map(|(k, s)| q.directional(s, k)).collect();
    let declared = OperatorFamily::constant(a, bs)?;
    let coercive = match noise_form {
        NoiseForm::Stratonovich => true,
        NoiseForm::Ito => sigma.iter().all(|s| {
            let sup = q.points().iter().map(|x| s.eval(x).abs()).fold(0.0, f64::max);
            sup * sup < 2.0
        }),
    };
    let u0 = torus.smooth_state();
    Ok(SystemSpec::register("torus-gradient-noise", basis, declared, noise_form, u0)?
        .with_documented(&standard_statuses(Status::Empirical, coercive)))
}

fn default_modes() -> usize {
    64
}

fn default_dim() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagonalParams {
    pub tilde_eigs: Vec<f64>,
    #[serde(default)]
    pub noise: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarNoiseParams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub noise: Vec<TrigField>,
    #[serde(default)]
    pub drift: Vec<TrigField>,
    #[serde(default)]
    pub potential: TrigField,
    #[serde(default)]
    pub noise_form: NoiseForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientNoiseParams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub sigma: Vec<TrigField>,
    #[serde(default)]
    pub noise_form: NoiseForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
}

/// The `[system]` block of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum SystemConfig {
    Diagonal(DiagonalParams),
    TorusScalarNoise(ScalarNoiseParams),
    TorusGradientNoise(GradientNoiseParams),
    Coupled(CoupledParams),
    Nse2d(NseParams),
}

impl SystemConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SystemConfig::Diagonal(_) => "diagonal",
            SystemConfig::TorusScalarNoise(_) => "torus-scalar-noise",
            SystemConfig::TorusGradientNoise(_) => "torus-gradient-noise",
            SystemConfig::Coupled(_) => "coupled",
            SystemConfig::Nse2d(_) => "nse2d",
        }
    }

    /// Builds the system; `modes` is the truncation size where it applies.
    pub fn build(&self, modes: Option<usize>) -> Result<SystemSpec> {
        let modes = modes.unwrap_or_else(default_modes);
        let (spec, u0) = match self {
            SystemConfig::Diagonal(p) => (make_diagonal(&p.tilde_eigs, &p.noise)?, p.u0.clone()),
            SystemConfig::TorusScalarNoise(p) => (
                make_torus_heat_scalar_noise(p.dim, modes, &p.noise, &p.drift, &p.potential, p.noise_form)?,
                p.u0.clone(),
            ),
            SystemConfig::TorusGradientNoise(p) => (
                make_torus_heat_gradient_noise(p.dim, modes, &p.sigma, p.noise_form)?,
                p.u0.clone(),
            ),
            SystemConfig::Coupled(p) => (make_coupled_system(p, modes)?, p.u0.clone()),
            SystemConfig::Nse2d(p) => (make_nse_2d(p)?, p.u0.clone()),
        };
        match u0 {
            Some(u) => spec.with_u0(Vector::from_vec(u)),
            None => Ok(spec),
        }
    }
}

/// One registry entry for `list-systems`.
#[derive(Debug, Clone, Serialize)]
pub struct RegistryEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub example: SystemConfig,
}

/// Registered systems with a representative parameter block each.
pub fn registry() -> Vec<RegistryEntry> {
    vec![
        RegistryEntry {
            name: "diagonal",
            summary: "diagonal closed-form oracle, Ã = diag(tilde_eigs)",
            example: SystemConfig::Diagonal(DiagonalParams {
                tilde_eigs: vec![1.0, 4.0, 9.0],
                noise: vec![vec![0.3, 0.2, 0.1]],
                u0: None,
            }),
        },
        RegistryEntry {
            name: "torus-scalar-noise",
            summary: "heat equation with scalar multiplicative noise on the torus",
            example: SystemConfig::TorusScalarNoise(ScalarNoiseParams {
                dim: 1,
                noise: vec![TrigField::constant(0.5)],
                drift: Vec::new(),
                potential: TrigField::default(),
                noise_form: NoiseForm::Stratonovich,
                u0: None,
            }),
        },
        RegistryEntry {
            name: "torus-gradient-noise",
            summary: "heat equation with transport noise σ∂u on the torus",
            example: SystemConfig::TorusGradientNoise(GradientNoiseParams {
                dim: 1,
                sigma: vec![TrigField::constant(0.8)],
                noise_form: NoiseForm::Stratonovich,
                u0: None,
            }),
        },
        RegistryEntry {
            name: "coupled",
            summary: "n-component torus system with time-decaying component-coupling noise",
            example: SystemConfig::Coupled(CoupledParams::example()),
        },
        RegistryEntry {
            name: "nse2d",
            summary: "2-D Navier–Stokes with scalar multiplicative noise",
            example: SystemConfig::Nse2d(NseParams::example()),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::assemble_tilde_a;

    #[test]
    fn diagonal_tilde_a_is_exact() {
        let spec = make_diagonal(&[1.0, 4.0, 9.0], &[vec![0.3, 0.2, 0.1], vec![0.1, 0.0, 0.5]]).unwrap();
        let ta = assemble_tilde_a(&spec.ops, 0.0).unwrap().matrix;
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 4.0, 9.0]));
        assert!((ta - expected).norm() < 1e-14);
        assert!(spec.commuting_noise);
        assert!(make_diagonal(&[4.0, 1.0], &[]).is_err());
    }

    #[test]
    fn diagonal_without_noise_is_heat() {
        let spec = make_diagonal(&[1.0, 4.0, 9.0], &[]).unwrap();
        assert_eq!(spec.ops.noise_count(), 0);
        let a = spec.ops.a_at(0.0).unwrap();
        assert_eq!(a.diagonal(), Vector::from_vec(vec![1.0, 4.0, 9.0]));
    }

    #[test]
    fn scalar_noise_spectrum_under_both_readings() {
        let c = 0.5;
        let strat = make_torus_heat_scalar_noise(1, 16, &[TrigField::constant(c)], &[], &TrigField::default(), NoiseForm::Stratonovich).unwrap();
        let ito = make_torus_heat_scalar_noise(1, 16, &[TrigField::constant(c)], &[], &TrigField::default(), NoiseForm::Ito).unwrap();
        let lap = TorusBasis::new(1, 16).unwrap().laplacian_symbol();
        let ts = assemble_tilde_a(&strat.ops, 0.0).unwrap().matrix;
        let ti = assemble_tilde_a(&ito.ops, 0.0).unwrap().matrix;
        for i in 0..16 {
            assert!((ts[(i, i)] - (lap[i] - c * c)).abs() < 1e-12);
            assert!((ti[(i, i)] - (lap[i] - 0.5 * c * c)).abs() < 1e-12);
        }
        assert!(strat.commuting_noise);
    }

    #[test]
    fn gradient_noise_tilde_a() {
        let s = 0.9;
        let strat = make_torus_heat_gradient_noise(1, 17, &[TrigField::constant(s)], NoiseForm::Stratonovich).unwrap();
        let ito = make_torus_heat_gradient_noise(1, 17, &[TrigField::constant(s)], NoiseForm::Ito).unwrap();
        let lap = TorusBasis::new(1, 17).unwrap().laplacian_symbol();
        let ts = assemble_tilde_a(&strat.ops, 0.0).unwrap().matrix;
        let ti = assemble_tilde_a(&ito.ops, 0.0).unwrap().matrix;
        for i in 0..17 {
            assert!((ts[(i, i)] - lap[i]).abs() < 1e-10);
            assert!((ti[(i, i)] - lap[i] * (1.0 - 0.5 * s * s)).abs() < 1e-10);
        }
        let b = strat.ops.b_at(0, 0.0).unwrap();
        assert!((&*b + b.transpose()).norm() < 1e-12);
        assert_eq!(ito.documented[&AcKey::Ac2], Status::Certified);
        let strong = make_torus_heat_gradient_noise(1, 17, &[TrigField::constant(1.5)], NoiseForm::Ito).unwrap();
        assert_eq!(strong.documented[&AcKey::Ac2], Status::Failed);
    }

    #[test]
    fn stratonovich_registration_matches_hand_conversion() {
        let c = TrigField::constant(0.2).with_term(0.1, vec![1], Parity::Cos);
        let strat = make_torus_heat_scalar_noise(1, 9, &[c.clone()], &[], &TrigField::default(), NoiseForm::Stratonovich).unwrap();
        let torus = TorusBasis::new(1, 9).unwrap();
        let q = Quadrature::new(&torus, 1);
        let b = q.multiplication(&c);
        let a = Matrix::from_diagonal(&Vector::from_vec(torus.laplacian_symbol())) - 0.5 * &b * &b;
        let hand = OperatorFamily::constant(a, vec![b]).unwrap();
        let ito = make_torus_heat_scalar_noise(1, 9, &[c], &[], &TrigField::default(), NoiseForm::Ito).unwrap();
        assert_eq!(*strat.ops.a_at(0.0).unwrap(), *hand.a_at(0.0).unwrap());
        assert_eq!(*strat.ops.b_at(0, 0.0).unwrap(), *ito.ops.b_at(0, 0.0).unwrap());
    }

    #[test]
    fn config_round_trips_through_toml() {
        for entry in registry() {
            let text = toml::to_string(&entry.example).unwrap();
            let back: SystemConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, entry.example, "{text}");
        }
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let err = toml::from_str::<SystemConfig>("name = \"diagonal\"\ntilde_eigs = [1.0]\nbogus = 1\n");
        assert!(err.is_err());
    }
}
