//! The truncated Gelfand triple `V ⊂ H ⊂ V′` in the eigenbasis of `Â`, and
//! the operator algebra on it.
//!
//! Coordinates are taken in an orthonormal eigenbasis `{e_i}` of `Â`, so the
//! `H`-adjoint of a matrix is its transpose and
//!
//! ```text
//! |u|²        = Σ u_i²
//! ‖u‖²        = Σ λ_i u_i²      (V)
//! |u|²_{D(Â)} = Σ λ_i² u_i²
//! ```
//!
//! Quadratic forms only see the symmetric part `sym(M) = (M + Mᵀ)/2`; the
//! raw matrix is kept wherever products and commutators need it.

mod family;
pub mod io;
pub mod linalg;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

pub use family::{Interpolation, LinearDrift, Nonlinearity, OperatorFamily, TimeMatrix};
pub use linalg::{Matrix, Vector};

use crate::error::{Error, Result};
use linalg::{general_eigenvalues, spectral_norm, sym, sym_eigen};

/// Truncated eigensystem of `Â`: eigenvalues `0 < λ_1 <= ... <= λ_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    hat_eigenvalues: Vec<f64>,
    label: String,
}

impl SpectralBasis {
    pub fn new(hat_eigenvalues: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if hat_eigenvalues.is_empty() {
            return Err(Error::InvalidBasis("empty basis".into()));
        }
        if let Some(bad) = hat_eigenvalues.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidBasis(format!("eigenvalue {bad} is not positive")));
        }
        if hat_eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidBasis("eigenvalues must be nondecreasing".into()));
        }
        Ok(SpectralBasis { hat_eigenvalues, label: label.into() })
    }

    pub fn dim(&self) -> usize {
        self.hat_eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.hat_eigenvalues
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Smallest eigenvalue, the embedding constant `‖u‖² >= λ_1|u|²`.
    pub fn lambda_min(&self) -> f64 {
        self.hat_eigenvalues[0]
    }

    /// `Â` as a diagonal matrix.
    pub fn hat_matrix(&self) -> Matrix {
        Matrix::from_diagonal(&Vector::from_column_slice(&self.hat_eigenvalues))
    }

    pub fn norm_h_sq(&self, u: &Vector) -> f64 {
        u.norm_squared()
    }

    pub fn norm_v_sq(&self, u: &Vector) -> f64 {
        u.iter().zip(&self.hat_eigenvalues).map(|(x, l)| l * x * x).sum()
    }

    pub fn norm_d_sq(&self, u: &Vector) -> f64 {
        u.iter().zip(&self.hat_eigenvalues).map(|(x, l)| l * l * x * x).sum()
    }

    fn check(&self, u: &Vector) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: u.len() });
        }
        Ok(())
    }
}

/// Coordinates of a state `u` in the eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vector);

impl StateVector {
    pub fn new(coeffs: Vec<f64>) -> Self {
        StateVector(Vector::from_vec(coeffs))
    }

    pub fn zeros(n: usize) -> Self {
        StateVector(Vector::zeros(n))
    }

    pub fn as_vector(&self) -> &Vector {
        &self.0
    }

    pub fn into_vector(self) -> Vector {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vector> for StateVector {
    fn from(v: Vector) -> Self {
        StateVector(v)
    }
}

impl Deref for StateVector {
    type Target = Vector;
    fn deref(&self) -> &Vector {
        &self.0
    }
}

/// `Ã(t) = A(t) − ½ Σ_k B_k(t)ᵀ B_k(t)` at a fixed time.
#[derive(Debug, Clone)]
pub struct TildeOperator {
    pub matrix: Matrix,
    pub sym_part: Matrix,
    pub t: f64,
}

impl TildeOperator {
    pub fn from_matrix(matrix: Matrix, t: f64) -> Self {
        let sym_part = sym(&matrix);
        TildeOperator { matrix, sym_part, t }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Scalar product in `H`.
pub fn inner_h(u: &Vector, v: &Vector) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    Ok(u.dot(v))
}

/// Scalar product in `V`: `(u, v)_V = (Âu, v)_H = Σ λ_i u_i v_i`.
pub fn inner_v(u: &Vector, v: &Vector, basis: &SpectralBasis) -> Result<f64> {
    basis.check(u)?;
    basis.check(v)?;
    Ok(u.iter()
        .zip(v.iter())
        .zip(basis.eigenvalues())
        .map(|((a, b), l)| l * a * b)
        .sum())
}

/// Assemble `Ã(t)`.
pub fn assemble_tilde_a(ops: &OperatorFamily, t: f64) -> Result<TildeOperator> {
    let mut m = ops.a_at(t)?.into_owned();
    for k in 0..ops.noise_count() {
        let b = ops.b_at(k, t)?;
        m -= b.tr_mul(&b) * 0.5;
    }
    Ok(TildeOperator::from_matrix(m, t))
}

/// `P_M′ T P_M`: keeps the leading `M×M` block and zeroes the rest.
pub fn galerkin_compress(t: &Matrix, m: usize) -> Result<Matrix> {
    let n = t.nrows();
    if m > n || m > t.ncols() {
        return Err(Error::TruncationTooLarge { requested: m, dim: n });
    }
    let mut out = Matrix::zeros(n, t.ncols());
    out.view_mut((0, 0), (m, m)).copy_from(&t.view((0, 0), (m, m)));
    Ok(out)
}

/// `C(t) = Σ_k B_kᵀ [Ã, B_k]`.
pub fn commutator_c(ops: &OperatorFamily, t: f64) -> Result<Matrix> {
    let tilde = assemble_tilde_a(ops, t)?;
    let n = ops.dim();
    let mut c = Matrix::zeros(n, n);
    for k in 0..ops.noise_count() {
        let b = ops.b_at(k, t)?;
        let comm = &tilde.matrix * b.as_ref() - b.as_ref() * &tilde.matrix;
        c += b.tr_mul(&comm);
    }
    Ok(c)
}

/// Commutator built from the Galerkin compressions `Ã_M`, `B_{k,M}`, the
/// finite-section analogue `C_M`.
pub fn commutator_c_compressed(ops: &OperatorFamily, t: f64, m: usize) -> Result<Matrix> {
    let tilde = galerkin_compress(&assemble_tilde_a(ops, t)?.matrix, m)?;
    let n = ops.dim();
    let mut c = Matrix::zeros(n, n);
    for k in 0..ops.noise_count() {
        let b = galerkin_compress(&*ops.b_at(k, t)?, m)?;
        let comm = &tilde * &b - &b * &tilde;
        c += b.tr_mul(&comm);
    }
    Ok(c)
}

fn scale_columns(t: &Matrix, hat: &[f64]) -> Matrix {
    let mut m = t.clone();
    for (j, l) in hat.iter().enumerate() {
        let s = 1.0 / l.sqrt();
        m.column_mut(j).scale_mut(s);
    }
    m
}

/// `|T|_{L(V,V′)}`: largest singular value of `Â^{-1/2} T Â^{-1/2}`.
pub fn operator_norm_v_vprime(t: &Matrix, basis: &SpectralBasis) -> f64 {
    let hat = basis.eigenvalues();
    let mut m = scale_columns(t, hat);
    for (i, l) in hat.iter().enumerate() {
        m.row_mut(i).scale_mut(1.0 / l.sqrt());
    }
    spectral_norm(&m)
}

/// `|T|_{L(V,H)}`: largest singular value of `T Â^{-1/2}`.
pub fn operator_norm_v_h(t: &Matrix, hat_eigenvalues: &[f64]) -> f64 {
    spectral_norm(&scale_columns(t, hat_eigenvalues))
}

/// Eigenvalues sorted ascending by real part, with orthonormal eigenvectors
/// for symmetric input.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub vectors: Option<Matrix>,
}

impl Spectrum {
    /// Distinct real parts (merging values closer than `tol`).
    pub fn distinct(&self, tol: f64) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &v in &self.re {
            if out.last().is_none_or(|&l| (v - l).abs() > tol) {
                out.push(v);
            }
        }
        out
    }

    /// Smallest gap between distinct eigenvalues (infinite for one value).
    pub fn min_gap(&self, tol: f64) -> f64 {
        self.distinct(tol)
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest eigenvalue (real part) to `x`.
    pub fn nearest(&self, x: f64) -> Option<f64> {
        self.re.iter().copied().min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
    }
}

/// Spectrum of a square matrix. With `symmetric`, `sym(T)` is diagonalised.
pub fn spectrum(t: &Matrix, symmetric: bool) -> Result<Spectrum> {
    if t.nrows() != t.ncols() {
        return Err(Error::DimensionMismatch { expected: t.nrows(), got: t.ncols() });
    }
    if symmetric {
        let (re, vectors) = sym_eigen(&sym(t))?;
        let im = vec![0.0; re.len()];
        Ok(Spectrum { re, im, vectors: Some(vectors) })
    } else {
        let mut pairs = general_eigenvalues(t)?;
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let (re, im) = pairs.into_iter().unzip();
        Ok(Spectrum { re, im, vectors: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn basis_rejects_nonpositive_or_decreasing() {
        assert!(SpectralBasis::new(vec![0.0, 1.0], "x").is_err());
        assert!(SpectralBasis::new(vec![2.0, 1.0], "x").is_err());
        assert!(SpectralBasis::new(vec![1.0, 1.0, 4.0], "x").is_ok());
    }

    #[test]
    fn inner_h_examples() {
        assert_eq!(inner_h(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(inner_h(&v(&[3.0, 4.0]), &v(&[3.0, 4.0])).unwrap(), 25.0);
        assert!(inner_h(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..17).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..17).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut brute = 0.0;
        for i in 0..17 {
            brute += a[i] * b[i];
        }
        assert!((inner_h(&v(&a), &v(&b)).unwrap() - brute).abs() < 1e-14);
    }

    #[test]
    fn inner_v_examples() {
        let basis = SpectralBasis::new(vec![1.0, 4.0], "toy").unwrap();
        assert_eq!(inner_v(&v(&[1.0, 1.0]), &v(&[1.0, 1.0]), &basis).unwrap(), 5.0);
        assert_eq!(inner_v(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), &basis).unwrap(), 0.0);
        assert!(inner_v(&v(&[1.0]), &v(&[1.0]), &basis).is_err());
    }

    #[test]
    fn tilde_a_zero_noise_and_scalar_noise() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let fam = OperatorFamily::constant(a.clone(), vec![]).unwrap();
        assert_eq!(assemble_tilde_a(&fam, 0.0).unwrap().matrix, a);
        let c = 0.7;
        let fam = OperatorFamily::constant(a.clone(), vec![Matrix::identity(2, 2) * c]).unwrap();
        let expected = &a - Matrix::identity(2, 2) * (c * c / 2.0);
        assert!(linalg::rel_max_diff(&assemble_tilde_a(&fam, 0.0).unwrap().matrix, &expected) < 1e-15);
    }

    #[test]
    fn tilde_a_noise_correction_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 5);
        let b = random_matrix(&mut rng, 5);
        let s = 1.7;
        let base = assemble_tilde_a(&OperatorFamily::constant(a.clone(), vec![b.clone()]).unwrap(), 0.0).unwrap();
        let scaled = assemble_tilde_a(&OperatorFamily::constant(a.clone(), vec![&b * s]).unwrap(), 0.0).unwrap();
        let corr = &a - &base.matrix;
        let corr_s = &a - &scaled.matrix;
        assert!(linalg::rel_max_diff(&corr_s, &(corr * (s * s))) < 1e-12);
    }

    #[test]
    fn galerkin_compress_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_matrix(&mut rng, 6);
        assert_eq!(galerkin_compress(&t, 6).unwrap(), t);
        let d = Matrix::from_diagonal(&v(&[2.0, 3.0, 4.0]));
        let c = galerkin_compress(&d, 1).unwrap();
        assert_eq!(c, Matrix::from_diagonal(&v(&[2.0, 0.0, 0.0])));
        for m in 0..=6 {
            let c = galerkin_compress(&t, m).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let keep = if i < m && j < m { 1.0 } else { 0.0 };
                    assert_eq!(c[(i, j)], t[(i, j)] * keep);
                }
            }
        }
        assert!(matches!(galerkin_compress(&t, 7), Err(Error::TruncationTooLarge { .. })));
    }

    #[test]
    fn commutator_vanishes_for_diagonal_family() {
        let a = Matrix::from_diagonal(&v(&[1.0, 4.0, 9.0]));
        let b1 = Matrix::from_diagonal(&v(&[0.3, -0.2, 0.1]));
        let b2 = Matrix::from_diagonal(&v(&[1.0, 2.0, 3.0]));
        let fam = OperatorFamily::constant(a, vec![b1, b2]).unwrap();
        assert_eq!(commutator_c(&fam, 0.0).unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn v_vprime_norm_examples() {
        let basis = SpectralBasis::new(vec![1.0, 2.0, 5.0, 9.0], "toy").unwrap();
        assert!((operator_norm_v_vprime(&basis.hat_matrix(), &basis) - 1.0).abs() < 1e-14);
        assert_eq!(operator_norm_v_vprime(&Matrix::zeros(4, 4), &basis), 0.0);
    }

    /// Maximise |⟨Tu,v⟩|/(‖u‖‖v‖) by random restarts of alternating ascent.
    fn rayleigh_oracle(t: &Matrix, hat: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        let n = hat.len();
        let vnorm = |x: &Vector| x.iter().zip(hat).map(|(a, l)| l * a * a).sum::<f64>().sqrt();
        let ratio = |u: &Vector, w: &Vector| (t * u).dot(w).abs() / (vnorm(u) * vnorm(w));
        let mut best: f64 = 0.0;
        for _ in 0..2000 {
            let u = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let w = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            best = best.max(ratio(&u, &w));
        }
        for _ in 0..20 {
            let mut u = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let mut w = Vector::zeros(n);
            for _ in 0..200 {
                // best w for fixed u is Â^{-1}Tu (Riesz map of the functional)
                w = Vector::from_fn(n, |i, _| (t * &u)[i] / hat[i]);
                u = Vector::from_fn(n, |i, _| (t.transpose() * &w)[i] / hat[i]);
            }
            best = best.max(ratio(&u, &w));
        }
        best
    }

    #[test]
    fn v_vprime_norm_matches_randomized_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = SpectralBasis::new(vec![1.0, 2.0, 3.0, 7.0, 11.0], "toy").unwrap();
        for _ in 0..5 {
            let t = random_matrix(&mut rng, 5);
            let exact = operator_norm_v_vprime(&t, &basis);
            let oracle = rayleigh_oracle(&t, basis.eigenvalues(), &mut rng);
            assert!(oracle <= exact * (1.0 + 1e-9), "oracle {oracle} exceeds {exact}");
            assert!(oracle >= exact * 0.99, "oracle {oracle} vs {exact}");
        }
    }

    #[test]
    fn spectrum_examples() {
        let d = Matrix::from_diagonal(&v(&[9.0, 1.0, 4.0]));
        let s = spectrum(&d, true).unwrap();
        assert_eq!(s.re, vec![1.0, 4.0, 9.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_matrix(&mut rng, 12);
        let s = spectrum(&m, true).unwrap();
        let sm = linalg::sym(&m);
        let vecs = s.vectors.as_ref().unwrap();
        for (i, mu) in s.re.iter().enumerate() {
            let x = vecs.column(i);
            assert!((&sm * x - x * *mu).norm() < 1e-10);
        }
        let g = spectrum(&m, false).unwrap();
        assert!(g.re.windows(2).all(|w| w[0] <= w[1]));
        let trace: f64 = g.re.iter().sum();
        assert!((trace - m.trace()).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn compress_is_idempotent(seed in 0u64..1000, m in 0usize..=7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_matrix(&mut rng, 7);
            let once = galerkin_compress(&t, m).unwrap();
            prop_assert_eq!(galerkin_compress(&once, m).unwrap(), once);
        }

        #[test]
        fn norm_chain_inequalities(xs in proptest::collection::vec(-10.0f64..10.0, 4)) {
            let basis = SpectralBasis::new(vec![0.5, 1.0, 3.0, 8.0], "toy").unwrap();
            let u = Vector::from_vec(xs);
            let h = basis.norm_h_sq(&u);
            let vv = basis.norm_v_sq(&u);
            let d = basis.norm_d_sq(&u);
            prop_assert!(vv >= basis.lambda_min() * h * (1.0 - 1e-15));
            prop_assert!(d >= basis.lambda_min() * vv * (1.0 - 1e-15));
            prop_assert!((inner_v(&u, &u, &basis).unwrap() - vv).abs() <= 1e-12 * vv.max(1.0));
        }

        #[test]
        fn symmetric_spectrum_is_orthogonally_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = linalg::sym(&random_matrix(&mut rng, 6));
            let q = random_matrix(&mut rng, 6).qr().q();
            let rotated = q.transpose() * &m * &q;
            let a = spectrum(&m, true).unwrap().re;
            let b = spectrum(&rotated, true).unwrap().re;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
