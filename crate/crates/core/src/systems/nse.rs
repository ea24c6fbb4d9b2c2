//! 2-D Navier–Stokes on `[0,2π)²` in a divergence-free real Fourier basis.
//!
//! Basis fields are `√2 cos(m·x)·m⊥/|m|` and `√2 sin(m·x)·m⊥/|m|` for
//! nonzero `m` in the half-plane with `|m_1|,|m_2| ≤ K/2`, ordered by `|m|²`.
//! `Â` is the Stokes operator (`|m|²`), `A = ν·Â`, and the advection term
//! `P(u·∇)v` is evaluated by quadrature on a grid of `3K/2 + 1` points per
//! direction, which integrates the truncated products exactly.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::stream_rng;
use crate::spectral::{operator_norm_v_h, LinearDrift, Matrix, Nonlinearity, OperatorFamily, SpectralBasis, TimeMatrix, Vector};

use super::torus::Parity;
use super::{standard_statuses, NoiseForm, SystemSpec};
use crate::assumptions::Status;

pub const MAX_MODES_PER_DIM: usize = 16;

/// Number of basis fields for `modes_per_dim = K`.
pub fn nse_mode_count(modes_per_dim: usize) -> usize {
    let r = (modes_per_dim / 2) as i64;
    ((2 * r + 1) * (2 * r + 1) - 1) as usize
}

#[derive(Debug, Clone)]
struct Field {
    wave: [i32; 2],
    parity: Parity,
}

/// Quadrature tables for the advection form.
#[derive(Debug, Clone)]
pub struct NavierStokes2d {
    modes: Vec<Field>,
    weight: f64,
    /// Velocity components at grid points, `Q² × N`.
    vx: Matrix,
    vy: Matrix,
    /// `∂_j` of each velocity component.
    dx_vx: Matrix,
    dy_vx: Matrix,
    dx_vy: Matrix,
    dy_vy: Matrix,
}

impl NavierStokes2d {
    pub fn new(modes_per_dim: usize) -> Result<Self> {
        if !(2..=MAX_MODES_PER_DIM).contains(&modes_per_dim) {
            return Err(Error::InvalidParameter(format!(
                "modes_per_dim = {modes_per_dim} outside 2..={MAX_MODES_PER_DIM}"
            )));
        }
        let r = (modes_per_dim / 2) as i32;
        let mut modes = Vec::new();
        for a in -r..=r {
            for b in -r..=r {
                let first = if a != 0 { a } else { b };
                if first > 0 {
                    modes.push(Field { wave: [a, b], parity: Parity::Cos });
                    modes.push(Field { wave: [a, b], parity: Parity::Sin });
                }
            }
        }
        modes.sort_by_key(|f| f.wave[0] * f.wave[0] + f.wave[1] * f.wave[1]);
        let q = 3 * r as usize + 1;
        let h = 2.0 * PI / q as f64;
        let points: Vec<[f64; 2]> = (0..q)
            .flat_map(|i| (0..q).map(move |j| [i as f64 * h, j as f64 * h]))
            .collect();
        let n = modes.len();
        let np = points.len();
        let mut t = NavierStokes2d {
            weight: 1.0 / np as f64,
            vx: Matrix::zeros(np, n),
            vy: Matrix::zeros(np, n),
            dx_vx: Matrix::zeros(np, n),
            dy_vx: Matrix::zeros(np, n),
            dx_vy: Matrix::zeros(np, n),
            dy_vy: Matrix::zeros(np, n),
            modes,
        };
        for (i, f) in t.modes.iter().enumerate() {
            let [m1, m2] = [f.wave[0] as f64, f.wave[1] as f64];
            let norm = (m1 * m1 + m2 * m2).sqrt();
            let (px, py) = (-m2 / norm, m1 / norm);
            for (p, x) in points.iter().enumerate() {
                let phase = m1 * x[0] + m2 * x[1];
                let (val, der) = match f.parity {
                    Parity::Cos => (SQRT_2 * phase.cos(), -SQRT_2 * phase.sin()),
                    Parity::Sin => (SQRT_2 * phase.sin(), SQRT_2 * phase.cos()),
                };
                t.vx[(p, i)] = val * px;
                t.vy[(p, i)] = val * py;
                t.dx_vx[(p, i)] = der * m1 * px;
                t.dy_vx[(p, i)] = der * m2 * px;
                t.dx_vy[(p, i)] = der * m1 * py;
                t.dy_vy[(p, i)] = der * m2 * py;
            }
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    /// `|m|²` per basis field.
    pub fn stokes_symbol(&self) -> Vec<f64> {
        self.modes.iter().map(|f| (f.wave[0] * f.wave[0] + f.wave[1] * f.wave[1]) as f64).collect()
    }

    pub fn wavevector(&self, i: usize) -> [i32; 2] {
        self.modes[i].wave
    }

    /// `P(u·∇)v`.
    pub fn bilinear(&self, u: &Vector, v: &Vector) -> Vector {
        let ux = &self.vx * u;
        let uy = &self.vy * u;
        let wx = ux.component_mul(&(&self.dx_vx * v)) + uy.component_mul(&(&self.dy_vx * v));
        let wy = ux.component_mul(&(&self.dx_vy * v)) + uy.component_mul(&(&self.dy_vy * v));
        self.weight * (self.vx.tr_mul(&wx) + self.vy.tr_mul(&wy))
    }

    /// Matrices of `u ↦ B(u,v)` and `u ↦ B(v,u)`.
    pub fn linear_parts(&self, v: &Vector) -> (Matrix, Matrix) {
        let scale_rows = |m: &Matrix, d: &Vector| {
            let mut out = m.clone();
            for (p, s) in d.iter().enumerate() {
                out.row_mut(p).scale_mut(self.weight * s);
            }
            out
        };
        let (vx, vy) = (&self.vx * v, &self.vy * v);
        let (dxvx, dyvx, dxvy, dyvy) = (&self.dx_vx * v, &self.dy_vx * v, &self.dx_vy * v, &self.dy_vy * v);
        let first = self.vx.tr_mul(&(scale_rows(&self.vx, &dxvx) + scale_rows(&self.vy, &dyvx)))
            + self.vy.tr_mul(&(scale_rows(&self.vx, &dxvy) + scale_rows(&self.vy, &dyvy)));
        let second = self.vx.tr_mul(&(scale_rows(&self.dx_vx, &vx) + scale_rows(&self.dy_vx, &vy)))
            + self.vy.tr_mul(&(scale_rows(&self.dx_vy, &vx) + scale_rows(&self.dy_vy, &vy)));
        (first, second)
    }

    /// Sampled constant `K` in `|B(u,v)| + |B(v,u)| ≤ K‖u‖|Âv|`: the maximum
    /// over test fields `v` of `(‖B(·,v)‖ + ‖B(v,·)‖)_{V→H} / |Âv|`.
    pub fn quadratic_constant(&self, samples: usize, seed: u64, extra: &[Vector]) -> f64 {
        let hat = self.stokes_symbol();
        let mut rng = stream_rng(seed, 0);
        let mut tests: Vec<Vector> = (0..self.dim().min(16))
            .map(|i| Vector::from_fn(self.dim(), |j, _| if i == j { 1.0 } else { 0.0 }))
            .collect();
        for _ in 0..samples {
            tests.push(Vector::from_fn(self.dim(), |i, _| rng.sample::<f64, _>(StandardNormal) / hat[i]));
        }
        tests.extend(extra.iter().cloned());
        tests
            .iter()
            .map(|v| {
                let av = v.iter().zip(&hat).map(|(x, l)| (x * l).powi(2)).sum::<f64>().sqrt();
                if av == 0.0 {
                    return 0.0;
                }
                let (r1, r2) = self.linear_parts(v);
                (operator_norm_v_h(&r1, &hat) + operator_norm_v_h(&r2, &hat)) / av
            })
            .fold(0.0, f64::max)
    }
}

impl Nonlinearity for NavierStokes2d {
    fn apply(&self, _t: f64, u: &Vector) -> Vector {
        self.bilinear(u, u)
    }

    fn name(&self) -> &str {
        "nse-advection"
    }
}

fn default_viscosity() -> f64 {
    1.0
}

fn default_samples() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NseParams {
    pub modes_per_dim: usize,
    #[serde(default = "default_viscosity")]
    pub viscosity: f64,
    #[serde(default)]
    pub noise: Vec<f64>,
    /// Linearise about this stationary field instead of keeping `B(u,u)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linearize_about: Option<Vec<f64>>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
}

impl NseParams {
    pub fn example() -> Self {
        NseParams {
            modes_per_dim: 8,
            viscosity: 1.0,
            noise: vec![0.3],
            linearize_about: None,
            samples: default_samples(),
            u0: None,
        }
    }
}

/// 2-D Navier–Stokes `du + (νÂu + P(u·∇)u)dt + Σ_k b_k u ∘ dw^k = 0`.
pub fn make_nse_2d(p: &NseParams) -> Result<SystemSpec> {
    let nse = NavierStokes2d::new(p.modes_per_dim)?;
    if !(p.viscosity > 0.0) {
        return Err(Error::InvalidParameter("viscosity must be positive".into()));
    }
    let n = nse.dim();
    let hat = nse.stokes_symbol();
    let basis = SpectralBasis::new(hat.clone(), "nse-2d")?;
    let a = Matrix::from_diagonal(&Vector::from_vec(hat.iter().map(|l| p.viscosity * l).collect()));
    let bs = p.noise.iter().map(|&b| b * Matrix::identity(n, n)).collect();
    let mut ops = OperatorFamily::constant(a, bs)?;
    let k = match &p.linearize_about {
        Some(stat) => {
            if stat.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: stat.len() });
            }
            let stat = Vector::from_row_slice(stat);
            let k = nse.quadratic_constant(p.samples, 0, std::slice::from_ref(&stat));
            let (r1, r2) = nse.linear_parts(&stat);
            ops = ops.with_nonlinearity(Arc::new(LinearDrift::new(TimeMatrix::Constant(r1 + r2), hat.clone())));
            k
        }
        None => {
            let k = nse.quadratic_constant(p.samples, 0, &[]);
            ops = ops.with_nonlinearity(Arc::new(nse));
            k
        }
    };
    let u0 = Vector::from_iterator(n, hat.iter().map(|l| 1.0 / (l * l)));
    let noise_sq: f64 = p.noise.iter().map(|b| b * b).sum();
    let ac7 = if p.viscosity > noise_sq { Status::Certified } else { Status::Empirical };
    let mut spec = SystemSpec::register("nse2d", basis, ops, NoiseForm::Stratonovich, u0)?
        .with_documented(&standard_statuses(ac7, true));
    spec.quadratic_constant = Some(k);
    Ok(spec)
}
