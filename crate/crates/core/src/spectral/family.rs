//! Time-dependent operator families `A(t)`, `B_k(t)`, `Ã′(t)` and the
//! nonlinearity hook `F`.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::linalg::{Matrix, Vector};
use crate::error::{Error, Result};

const TIME_SLACK: f64 = 1e-12;

/// How sampled matrices are extended between grid times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    PiecewiseConstant,
    PiecewiseLinear,
}

/// A matrix-valued function of time.
#[derive(Debug, Clone)]
pub enum TimeMatrix {
    /// Time-independent; defined for every `t >= 0`.
    Constant(Matrix),
    /// Values on a strictly increasing grid. Piecewise-constant values are
    /// right-continuous.
    Sampled {
        times: Vec<f64>,
        values: Vec<Matrix>,
        rule: Interpolation,
    },
}

impl TimeMatrix {
    pub fn sampled(times: Vec<f64>, values: Vec<Matrix>, rule: Interpolation) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidGrid(format!(
                "{} times for {} matrices",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("times must be strictly increasing".into()));
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(Error::InvalidGrid("sampled matrices differ in shape".into()));
        }
        Ok(TimeMatrix::Sampled { times, values, rule })
    }

    pub fn nrows(&self) -> usize {
        match self {
            TimeMatrix::Constant(m) => m.nrows(),
            TimeMatrix::Sampled { values, .. } => values[0].nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            TimeMatrix::Constant(m) => m.ncols(),
            TimeMatrix::Sampled { values, .. } => values[0].ncols(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TimeMatrix::Constant(_))
    }

    pub fn range(&self) -> (f64, f64) {
        match self {
            TimeMatrix::Constant(_) => (0.0, f64::INFINITY),
            TimeMatrix::Sampled { times, .. } => (times[0], *times.last().unwrap()),
        }
    }

    /// Grid times (empty for constants).
    pub fn grid(&self) -> &[f64] {
        match self {
            TimeMatrix::Constant(_) => &[],
            TimeMatrix::Sampled { times, .. } => times,
        }
    }

    pub fn at(&self, t: f64) -> Result<Cow<'_, Matrix>> {
        match self {
            TimeMatrix::Constant(m) => {
                if t < -TIME_SLACK || t.is_nan() {
                    return Err(Error::TimeOutOfRange { t, start: 0.0, end: f64::INFINITY });
                }
                Ok(Cow::Borrowed(m))
            }
            TimeMatrix::Sampled { times, values, rule } => {
                let (start, end) = (times[0], *times.last().unwrap());
                let slack = TIME_SLACK * end.abs().max(1.0);
                if !(t >= start - slack && t <= end + slack) {
                    return Err(Error::TimeOutOfRange { t, start, end });
                }
                let t = t.clamp(start, end);
                // index of the last grid time <= t
                let i = times.partition_point(|&s| s <= t).saturating_sub(1);
                if i + 1 >= times.len() {
                    return Ok(Cow::Borrowed(&values[times.len() - 1]));
                }
                match rule {
                    Interpolation::PiecewiseConstant => Ok(Cow::Borrowed(&values[i])),
                    Interpolation::PiecewiseLinear => {
                        let w = (t - times[i]) / (times[i + 1] - times[i]);
                        if w == 0.0 {
                            return Ok(Cow::Borrowed(&values[i]));
                        }
                        Ok(Cow::Owned(&values[i] * (1.0 - w) + &values[i + 1] * w))
                    }
                }
            }
        }
    }

    /// Time derivative under the declared interpolation rule. Piecewise
    /// constant families have zero derivative (jumps excluded); piecewise
    /// linear ones use the interval slope, averaged at interior grid times.
    pub fn derivative_at(&self, t: f64) -> Result<Matrix> {
        let (r, c) = (self.nrows(), self.ncols());
        match self {
            TimeMatrix::Constant(_) => {
                self.at(t)?;
                Ok(Matrix::zeros(r, c))
            }
            TimeMatrix::Sampled { times, values, rule } => {
                self.at(t)?;
                match rule {
                    Interpolation::PiecewiseConstant => Ok(Matrix::zeros(r, c)),
                    Interpolation::PiecewiseLinear => {
                        if times.len() < 2 {
                            return Err(Error::InvalidGrid(
                                "differencing needs at least two grid times".into(),
                            ));
                        }
                        let slope = |i: usize| {
                            (&values[i + 1] - &values[i]) / (times[i + 1] - times[i])
                        };
                        let last = times.len() - 2;
                        let i = times.partition_point(|&s| s <= t).saturating_sub(1).min(last);
                        let on_node = (t - times[i]).abs() <= TIME_SLACK * times[i].abs().max(1.0);
                        if on_node && i > 0 {
                            Ok((slope(i - 1) + slope(i)) * 0.5)
                        } else {
                            Ok(slope(i))
                        }
                    }
                }
            }
        }
    }

    pub fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> TimeMatrix {
        match self {
            TimeMatrix::Constant(m) => TimeMatrix::Constant(f(m)),
            TimeMatrix::Sampled { times, values, rule } => TimeMatrix::Sampled {
                times: times.clone(),
                values: values.iter().map(f).collect(),
                rule: *rule,
            },
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            TimeMatrix::Constant(m) => m.iter().all(|x| x.is_finite()),
            TimeMatrix::Sampled { values, .. } => {
                values.iter().all(|m| m.iter().all(|x| x.is_finite()))
            }
        }
    }
}

/// The nonlinear drift term `F(t, u)`.
pub trait Nonlinearity: Send + Sync + fmt::Debug {
    fn apply(&self, t: f64, u: &Vector) -> Vector;

    /// A function `n(t)` with `|F(t,u)| <= n(t)‖u‖` for all `u`, when one is
    /// known independently of the path.
    fn witness(&self, _t: f64) -> Option<f64> {
        None
    }

    /// `true` when `F(t, ·)` is linear, so `F(t,0) = 0` and the system is
    /// linear in the initial condition.
    fn is_linear(&self) -> bool {
        false
    }

    fn name(&self) -> &str;
}

/// `F(t,u) = R(t)u`, with witness `n(t) = |R(t)|_{L(V,H)}`.
#[derive(Debug, Clone)]
pub struct LinearDrift {
    r: TimeMatrix,
    hat_eigenvalues: Vec<f64>,
}

impl LinearDrift {
    pub fn new(r: TimeMatrix, hat_eigenvalues: Vec<f64>) -> Self {
        LinearDrift { r, hat_eigenvalues }
    }

    pub fn matrix(&self) -> &TimeMatrix {
        &self.r
    }
}

impl Nonlinearity for LinearDrift {
    fn apply(&self, t: f64, u: &Vector) -> Vector {
        match self.r.at(t) {
            Ok(r) => r.as_ref() * u,
            Err(_) => Vector::from_element(u.len(), f64::NAN),
        }
    }

    fn witness(&self, t: f64) -> Option<f64> {
        let r = self.r.at(t).ok()?;
        Some(super::operator_norm_v_h(&r, &self.hat_eigenvalues))
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "linear-drift"
    }
}

/// Time-dependent operators of `du + (A(t)u + F(t,u))dt + Σ_k B_k(t)u dw^k = 0`
/// in Itô form, as matrices in the eigenbasis of `Â`.
#[derive(Clone)]
pub struct OperatorFamily {
    a: TimeMatrix,
    bs: Vec<TimeMatrix>,
    a_tilde_prime: Option<TimeMatrix>,
    f: Option<Arc<dyn Nonlinearity>>,
}

impl fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorFamily")
            .field("dim", &self.dim())
            .field("noises", &self.bs.len())
            .field("a_tilde_prime", &self.a_tilde_prime.is_some())
            .field("f", &self.f.as_ref().map(|f| f.name().to_string()))
            .finish()
    }
}

impl OperatorFamily {
    pub fn new(a: TimeMatrix, bs: Vec<TimeMatrix>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
        }
        for b in &bs {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, got: b.nrows() });
            }
        }
        Ok(OperatorFamily { a, bs, a_tilde_prime: None, f: None })
    }

    /// Time-independent family.
    pub fn constant(a: Matrix, bs: Vec<Matrix>) -> Result<Self> {
        Self::new(
            TimeMatrix::Constant(a),
            bs.into_iter().map(TimeMatrix::Constant).collect(),
        )
    }

    pub fn with_nonlinearity(mut self, f: Arc<dyn Nonlinearity>) -> Self {
        self.f = Some(f);
        self
    }

    pub fn with_a_tilde_prime(mut self, d: TimeMatrix) -> Result<Self> {
        if d.nrows() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: d.nrows() });
        }
        self.a_tilde_prime = Some(d);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noise_count(&self) -> usize {
        self.bs.len()
    }

    pub fn a(&self) -> &TimeMatrix {
        &self.a
    }

    pub fn bs(&self) -> &[TimeMatrix] {
        &self.bs
    }

    pub fn a_tilde_prime(&self) -> Option<&TimeMatrix> {
        self.a_tilde_prime.as_ref()
    }

    pub fn nonlinearity(&self) -> Option<&Arc<dyn Nonlinearity>> {
        self.f.as_ref()
    }

    pub fn a_at(&self, t: f64) -> Result<Cow<'_, Matrix>> {
        self.a.at(t)
    }

    pub fn b_at(&self, k: usize, t: f64) -> Result<Cow<'_, Matrix>> {
        self.bs[k].at(t)
    }

    pub fn f_at(&self, t: f64, u: &Vector) -> Option<Vector> {
        self.f.as_ref().map(|f| f.apply(t, u))
    }

    /// `true` when every member is time-independent.
    pub fn is_autonomous(&self) -> bool {
        self.a.is_constant()
            && self.bs.iter().all(TimeMatrix::is_constant)
            && self.a_tilde_prime.as_ref().is_none_or(TimeMatrix::is_constant)
    }

    /// `true` when the system is linear in `u` (no `F`, or a linear `F`).
    pub fn is_linear(&self) -> bool {
        self.f.as_ref().is_none_or(|f| f.is_linear())
    }

    /// Common time range of all members.
    pub fn time_range(&self) -> (f64, f64) {
        let mut lo: f64 = 0.0;
        let mut hi = f64::INFINITY;
        let members = std::iter::once(&self.a)
            .chain(self.bs.iter())
            .chain(self.a_tilde_prime.iter());
        for m in members {
            let (s, e) = m.range();
            lo = lo.max(s);
            hi = hi.min(e);
        }
        (lo, hi)
    }

    /// Union of the members' grid times.
    pub fn time_grid(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = std::iter::once(&self.a)
            .chain(self.bs.iter())
            .chain(self.a_tilde_prime.iter())
            .flat_map(|m| m.grid().iter().copied())
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() <= TIME_SLACK * b.abs().max(1.0));
        ts
    }

    /// Replace `A` (used by the Stratonovich conversion).
    pub fn with_a(&self, a: TimeMatrix) -> Self {
        OperatorFamily { a, ..self.clone() }
    }

    pub fn all_finite(&self) -> bool {
        self.a.all_finite() && self.bs.iter().all(TimeMatrix::all_finite)
    }
}
