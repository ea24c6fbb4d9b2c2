//! `F(x) = ⟨Cx,x⟩/(|x|²+ε)` and its first two derivatives.
//!
//! The derivative formulas are stated for symmetric `C`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::stream_rng;
use crate::spectral::linalg::sym;
use crate::spectral::{Matrix, Vector};

pub fn quotient_fn(c: &Matrix, eps: f64, x: &Vector) -> f64 {
    (c * x).dot(x) / (x.norm_squared() + eps)
}

/// `F′(x)h = 2⟨Cx,h⟩/D − 2⟨Cx,x⟩⟨x,h⟩/D²` with `D = |x|²+ε`.
pub fn quotient_fn_d1(c: &Matrix, eps: f64, x: &Vector, h: &Vector) -> f64 {
    let d = x.norm_squared() + eps;
    let cx = c * x;
    2.0 * cx.dot(h) / d - 2.0 * cx.dot(x) * x.dot(h) / (d * d)
}

/// `F″(x)(h₁,h₂)`.
pub fn quotient_fn_d2(c: &Matrix, eps: f64, x: &Vector, h1: &Vector, h2: &Vector) -> f64 {
    let d = x.norm_squared() + eps;
    let cx = c * x;
    let cxx = cx.dot(x);
    let xh1 = x.dot(h1);
    let xh2 = x.dot(h2);
    2.0 * (c * h1).dot(h2) / d - 4.0 * cx.dot(h1) * xh2 / (d * d) - 4.0 * cx.dot(h2) * xh1 / (d * d)
        - 2.0 * cxx * h2.dot(h1) / (d * d)
        + 8.0 * cxx * xh1 * xh2 / (d * d * d)
}

/// Largest relative discrepancies between the kernels and central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub max_rel_err_d1: f64,
    pub max_rel_err_d2: f64,
}

impl GradcheckReport {
    pub fn passes(&self, tol_d1: f64, tol_d2: f64) -> bool {
        self.max_rel_err_d1 <= tol_d1 && self.max_rel_err_d2 <= tol_d2
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Compares the kernels with (extrapolated) central finite differences of `F` on random
/// symmetric `C`, points and directions.
pub fn gradcheck(trials: usize, dim: usize, seed: u64) -> Result<GradcheckReport> {
    if trials == 0 || dim == 0 {
        return Err(Error::InvalidParameter("gradcheck needs at least one trial and dimension".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mut gauss = |n: usize| Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut max1: f64 = 0.0;
    let mut max2: f64 = 0.0;
    for i in 0..trials {
        let raw = Matrix::from_column_slice(dim, dim, gauss(dim * dim).as_slice());
        let c = sym(&raw);
        let x = gauss(dim);
        let h1 = gauss(dim);
        let h2 = gauss(dim);
        let eps = 0.1 + 0.9 * (i as f64 + 0.5) / trials as f64;
        let f = |y: &Vector| quotient_fn(&c, eps, y);
        let fd1 = |s: f64| (f(&(&x + s * &h1)) - f(&(&x - s * &h1))) / (2.0 * s);
        let fd2 = |s: f64| {
            (f(&(&x + s * &h1 + s * &h2)) - f(&(&x + s * &h1 - s * &h2)) - f(&(&x - s * &h1 + s * &h2))
                + f(&(&x - s * &h1 - s * &h2)))
                / (4.0 * s * s)
        };
        // Richardson extrapolation removes the O(s²) term of both stencils
        let fd1 = (4.0 * fd1(5e-6) - fd1(1e-5)) / 3.0;
        let fd2 = (4.0 * fd2(1e-4) - fd2(2e-4)) / 3.0;
        max1 = max1.max(rel_err(quotient_fn_d1(&c, eps, &x, &h1), fd1));
        max2 = max2.max(rel_err(quotient_fn_d2(&c, eps, &x, &h1, &h2), fd2));
    }
    Ok(GradcheckReport { trials, max_rel_err_d1: max1, max_rel_err_d2: max2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_simplification() {
        let c = Matrix::identity(3, 3);
        let x = Vector::from_row_slice(&[0.3, -1.0, 2.0]);
        let h = Vector::from_row_slice(&[1.0, 0.5, -0.2]);
        let eps = 0.7;
        let d = x.norm_squared() + eps;
        let expected = 2.0 * x.dot(&h) * eps / (d * d);
        assert!((quotient_fn_d1(&c, eps, &x, &h) - expected).abs() < 1e-15);
    }

    #[test]
    fn origin_values() {
        let c = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = Vector::zeros(2);
        let h1 = Vector::from_row_slice(&[1.0, 2.0]);
        let h2 = Vector::from_row_slice(&[-1.0, 0.5]);
        let eps = 0.25;
        assert_eq!(quotient_fn_d1(&c, eps, &x, &h1), 0.0);
        let expected = 2.0 * (&c * &h1).dot(&h2) / eps;
        assert!((quotient_fn_d2(&c, eps, &x, &h1, &h2) - expected).abs() < 1e-14);
    }

    #[test]
    fn finite_differences_agree() {
        let r = gradcheck(100, 6, 17).unwrap();
        assert!(r.passes(1e-6, 1e-5), "{r:?}");
    }
}
