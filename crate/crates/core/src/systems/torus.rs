//! Real trigonometric eigenbasis of `Â = I − Δ` on the torus `[0,2π)^d`.
//!
//! Functions are `1`, `√2 cos(m·x)`, `√2 sin(m·x)` for `m` in the half-space
//! whose first nonzero coordinate is positive, orthonormal for the normalised
//! measure `dx/(2π)^d`, and ordered by `|m|²`. Operator matrices are assembled
//! by trapezoid quadrature on a grid fine enough to integrate every product
//! exactly.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Cos,
    Sin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrigMode {
    pub wave: Vec<i32>,
    pub parity: Parity,
}

impl TrigMode {
    pub fn wave_sq(&self) -> i64 {
        self.wave.iter().map(|&m| (m as i64) * (m as i64)).sum()
    }

    fn phase(&self, x: &[f64]) -> f64 {
        self.wave.iter().zip(x).map(|(&m, &xi)| m as f64 * xi).sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.wave.iter().all(|&m| m == 0) {
            return 1.0;
        }
        match self.parity {
            Parity::Cos => SQRT_2 * self.phase(x).cos(),
            Parity::Sin => SQRT_2 * self.phase(x).sin(),
        }
    }

    /// `∂/∂x_k` of [`TrigMode::eval`].
    pub fn partial(&self, k: usize, x: &[f64]) -> f64 {
        let m = self.wave[k] as f64;
        match self.parity {
            Parity::Cos => -SQRT_2 * m * self.phase(x).sin(),
            Parity::Sin => SQRT_2 * m * self.phase(x).cos(),
        }
    }
}

fn in_half_space(m: &[i32]) -> bool {
    m.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0)
}

#[derive(Debug, Clone)]
pub struct TorusBasis {
    dim: usize,
    modes: Vec<TrigMode>,
}

impl TorusBasis {
    /// The first `count` basis functions in order of `|m|²`.
    pub fn new(dim: usize, count: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidBasis(format!("torus dimension {dim} not supported (1 or 2)")));
        }
        if count == 0 {
            return Err(Error::InvalidBasis("mode count must be positive".into()));
        }
        let mut radius = 1i32;
        loop {
            let modes = enumerate(dim, radius);
            // every wavevector with |m|² ≤ radius² is present, so the prefix is exact
            let complete = modes.iter().take_while(|m| m.wave_sq() <= (radius as i64).pow(2)).count();
            if complete >= count {
                let mut modes = modes;
                modes.truncate(count);
                return Ok(TorusBasis { dim, modes });
            }
            radius *= 2;
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[TrigMode] {
        &self.modes
    }

    /// `1 + |m|²`.
    pub fn hat_eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| 1.0 + m.wave_sq() as f64).collect()
    }

    /// `|m|²`, the symbol of `−Δ`.
    pub fn laplacian_symbol(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.wave_sq() as f64).collect()
    }

    /// Largest `|m_k|` over all modes and directions.
    pub fn max_frequency(&self) -> i32 {
        self.modes.iter().flat_map(|m| m.wave.iter().map(|v| v.abs())).max().unwrap_or(0)
    }

    /// Coefficients `c_i = 1/λ_i²` of a smooth generic state.
    pub fn smooth_state(&self) -> Vector {
        Vector::from_iterator(self.len(), self.hat_eigenvalues().into_iter().map(|l| 1.0 / (l * l)))
    }
}

fn enumerate(dim: usize, radius: i32) -> Vec<TrigMode> {
    let mut waves: Vec<Vec<i32>> = vec![vec![0; dim]];
    let range = -radius..=radius;
    match dim {
        1 => waves.extend((1..=radius).map(|m| vec![m])),
        _ => {
            for a in range.clone() {
                for b in range.clone() {
                    let m = vec![a, b];
                    if in_half_space(&m) {
                        waves.push(m);
                    }
                }
            }
        }
    }
    let mut modes = Vec::new();
    for w in waves {
        if w.iter().all(|&v| v == 0) {
            modes.push(TrigMode { wave: w, parity: Parity::Cos });
        } else {
            modes.push(TrigMode { wave: w.clone(), parity: Parity::Cos });
            modes.push(TrigMode { wave: w, parity: Parity::Sin });
        }
    }
    // stable sort keeps (cos, sin) pairs adjacent and the enumeration order within a shell
    modes.sort_by_key(|m| m.wave_sq());
    modes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub amp: f64,
    pub wave: Vec<i32>,
    pub kind: Parity,
}

/// A real trigonometric polynomial `c + Σ amp·cos|sin(m·x)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigField {
    #[serde(default)]
    pub constant: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<TrigTerm>,
}

impl TrigField {
    pub fn constant(c: f64) -> Self {
        TrigField { constant: c, terms: Vec::new() }
    }

    pub fn with_term(mut self, amp: f64, wave: Vec<i32>, kind: Parity) -> Self {
        self.terms.push(TrigTerm { amp, wave, kind });
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.amp == 0.0 || t.wave.iter().all(|&m| m == 0))
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|t| t.amp == 0.0)
    }

    pub fn bandwidth(&self) -> i32 {
        self.terms.iter().flat_map(|t| t.wave.iter().map(|v| v.abs())).max().unwrap_or(0)
    }

    fn phase(t: &TrigTerm, x: &[f64]) -> f64 {
        t.wave.iter().zip(x).map(|(&m, &xi)| m as f64 * xi).sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|t| match t.kind {
                    Parity::Cos => t.amp * Self::phase(t, x).cos(),
                    Parity::Sin => t.amp * Self::phase(t, x).sin(),
                })
                .sum::<f64>()
    }

    pub fn partial(&self, k: usize, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let m = t.wave.get(k).copied().unwrap_or(0) as f64;
                match t.kind {
                    Parity::Cos => -t.amp * m * Self::phase(t, x).sin(),
                    Parity::Sin => t.amp * m * Self::phase(t, x).cos(),
                }
            })
            .sum()
    }

    /// `sup_x |∇f|²`, estimated on a grid of `q` points per direction.
    pub fn sup_grad_sq(&self, dim: usize, q: usize) -> f64 {
        grid_points(dim, q)
            .iter()
            .map(|x| (0..dim).map(|k| self.partial(k, x).powi(2)).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn check(&self, dim: usize, basis: &TorusBasis) -> Result<()> {
        for t in &self.terms {
            if t.wave.len() != dim {
                return Err(Error::InvalidParameter(format!(
                    "field term wavevector {:?} has wrong dimension (expected {dim})",
                    t.wave
                )));
            }
        }
        if self.bandwidth() > basis.max_frequency().max(1) {
            return Err(Error::InvalidParameter(format!(
                "field bandwidth {} exceeds the basis frequency {}",
                self.bandwidth(),
                basis.max_frequency()
            )));
        }
        Ok(())
    }
}

fn grid_points(dim: usize, q: usize) -> Vec<Vec<f64>> {
    let h = 2.0 * PI / q as f64;
    match dim {
        1 => (0..q).map(|i| vec![i as f64 * h]).collect(),
        _ => (0..q)
            .flat_map(|i| (0..q).map(move |j| vec![i as f64 * h, j as f64 * h]))
            .collect(),
    }
}

/// Basis values and first derivatives on an exact quadrature grid.
pub struct Quadrature {
    dim: usize,
    points: Vec<Vec<f64>>,
    weight: f64,
    values: Matrix,
    partials: Vec<Matrix>,
    modes: Vec<TrigMode>,
}

const SNAP_TOL: f64 = 1e-12;

impl Quadrature {
    /// Exact for integrands `e_i · f · ∂e_j` whose field has at most
    /// `field_bandwidth` frequency.
    pub fn new(basis: &TorusBasis, field_bandwidth: i32) -> Self {
        let q = (2 * basis.max_frequency() + field_bandwidth + 1).max(1) as usize;
        let points = grid_points(basis.dim(), q);
        let n = basis.len();
        let values = Matrix::from_fn(points.len(), n, |p, i| basis.modes()[i].eval(&points[p]));
        let partials = (0..basis.dim())
            .map(|k| Matrix::from_fn(points.len(), n, |p, i| basis.modes()[i].partial(k, &points[p])))
            .collect();
        Quadrature {
            dim: basis.dim(),
            weight: 1.0 / points.len() as f64,
            points,
            values,
            partials,
            modes: basis.modes().to_vec(),
        }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn weighted(&self, f: &TrigField, columns: &Matrix) -> Matrix {
        let mut m = columns.clone();
        for (p, x) in self.points.iter().enumerate() {
            let w = self.weight * f.eval(x);
            m.row_mut(p).scale_mut(w);
        }
        m
    }

    /// Matrix of `u ↦ f·u`.
    pub fn multiplication(&self, f: &TrigField) -> Matrix {
        if f.terms.is_empty() {
            let n = self.modes.len();
            return f.constant * Matrix::identity(n, n);
        }
        snap_zeros(self.values.transpose() * self.weighted(f, &self.values))
    }

    /// Matrix of `u ↦ f·∂u/∂x_k`.
    pub fn directional(&self, f: &TrigField, k: usize) -> Matrix {
        if f.terms.is_empty() {
            return self.constant_directional(f.constant, k);
        }
        snap_zeros(self.values.transpose() * self.weighted(f, &self.partials[k]))
    }

    /// `c·∂/∂x_k` in closed form: `∂cos = −m_k sin` and `∂sin = m_k cos`
    /// within each wave, so the matrix is exactly skew.
    fn constant_directional(&self, c: f64, k: usize) -> Matrix {
        let n = self.modes.len();
        let mut m = Matrix::zeros(n, n);
        for (j, mode) in self.modes.iter().enumerate() {
            let mk = mode.wave[k] as f64;
            if mk == 0.0 {
                continue;
            }
            let (partner, sign) = match mode.parity {
                Parity::Cos => (Parity::Sin, -1.0),
                Parity::Sin => (Parity::Cos, 1.0),
            };
            if let Some(i) = self.modes.iter().position(|p| p.wave == mode.wave && p.parity == partner) {
                m[(i, j)] = sign * c * mk;
            }
        }
        m
    }

    /// Matrix of `u ↦ Σ_k f_k ∂u/∂x_k`.
    pub fn advection(&self, fields: &[TrigField]) -> Matrix {
        let n = self.values.ncols();
        let mut m = Matrix::zeros(n, n);
        for (k, f) in fields.iter().enumerate().take(self.dim) {
            if !f.is_zero() {
                m += self.directional(f, k);
            }
        }
        m
    }
}

/// Entries that vanish by orthogonality come out of the quadrature as
/// roundoff; they are set to exact zeros.
fn snap_zeros(mut m: Matrix) -> Matrix {
    let cutoff = SNAP_TOL * m.amax();
    m.apply(|v| {
        if v.abs() <= cutoff {
            *v = 0.0;
        }
    });
    m
}

/// Validates fields against the basis and returns the largest bandwidth.
pub fn check_fields<'a>(basis: &TorusBasis, fields: impl IntoIterator<Item = &'a TrigField>) -> Result<i32> {
    let mut bw = 0;
    for f in fields {
        f.check(basis.dim(), basis)?;
        bw = bw.max(f.bandwidth());
    }
    Ok(bw)
}
