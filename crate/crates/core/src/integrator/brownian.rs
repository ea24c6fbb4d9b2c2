//! Brownian drivers on uniform grids.
//!
//! Increments come from a counter-based ChaCha8 generator keyed by
//! `(seed, stream_id)`; the stream id is the path index, so every path of an
//! ensemble can be regenerated on its own and in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DIVIDES_TOL: f64 = 1e-12;

/// Uniform grid `0 = t_0 < ... < t_J = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    /// Requires `dt > 0` and `dt` dividing `t_end` to within 1e-12.
    pub fn new(t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidGrid(format!("dt = {dt} must be positive")));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidGrid(format!("T = {t_end} must be positive")));
        }
        let ratio = t_end / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > DIVIDES_TOL * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::InvalidGrid(format!("dt = {dt} does not divide T = {t_end}")));
        }
        Ok(TimeGrid { t_end, dt, steps: steps as usize })
    }

    /// Accepts only uniform grids starting at zero.
    pub fn from_times(times: &[f64]) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::InvalidGrid("grid must start at 0 with at least one step".into()));
        }
        let dt = times[1] - times[0];
        let uniform = times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt);
        if !uniform {
            return Err(Error::InvalidGrid("nonuniform grid".into()));
        }
        Self::new(*times.last().unwrap(), dt)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t_end
        } else {
            j as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }

    /// The grid with `factor` times larger steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::InvalidGrid(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        Ok(TimeGrid { t_end: self.t_end, dt: self.dt * factor as f64, steps: self.steps / factor })
    }
}

/// `n` independent Brownian motions sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    n: usize,
    /// `steps × n`, row-major.
    increments: Vec<f64>,
    seed: u64,
    stream_id: u64,
}

/// Deterministic generator for one `(seed, stream_id)` pair.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn sample_brownian(n: usize, grid: &TimeGrid, seed: u64, stream_id: u64) -> BrownianPath {
    let mut rng = stream_rng(seed, stream_id);
    let sd = grid.dt().sqrt();
    let increments = (0..grid.steps() * n)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    BrownianPath { grid: *grid, n, increments, seed, stream_id }
}

impl BrownianPath {
    /// The path with all increments zero (deterministic runs).
    pub fn zero(n: usize, grid: TimeGrid) -> Self {
        BrownianPath { grid, n, increments: vec![0.0; grid.steps() * n], seed: 0, stream_id: 0 }
    }

    /// Builds a path from row-major increments (`steps × n`).
    pub fn from_increments(n: usize, grid: TimeGrid, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.steps() * n {
            return Err(Error::DimensionMismatch { expected: grid.steps() * n, got: increments.len() });
        }
        Ok(BrownianPath { grid, n, increments, seed: 0, stream_id: 0 })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn noise_count(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Increments `Δw^1..Δw^n` over step `j`.
    pub fn increment(&self, j: usize) -> &[f64] {
        &self.increments[j * self.n..(j + 1) * self.n]
    }

    /// Column `k` of the increment matrix.
    pub fn increments_of(&self, k: usize) -> Vec<f64> {
        (0..self.grid.steps()).map(|j| self.increments[j * self.n + k]).collect()
    }

    /// `w^k(t_j)` for every grid time.
    pub fn values_of(&self, k: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.grid.steps() + 1);
        let mut acc = 0.0;
        w.push(0.0);
        for j in 0..self.grid.steps() {
            acc += self.increments[j * self.n + k];
            w.push(acc);
        }
        w
    }

    /// `w^k(T)`.
    pub fn terminal(&self, k: usize) -> f64 {
        (0..self.grid.steps()).map(|j| self.increments[j * self.n + k]).sum()
    }

    /// The same Brownian motion observed on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<BrownianPath> {
        let grid = self.grid.coarsen(factor)?;
        let mut increments = vec![0.0; grid.steps() * self.n];
        for j in 0..self.grid.steps() {
            for k in 0..self.n {
                increments[(j / factor) * self.n + k] += self.increments[j * self.n + k];
            }
        }
        Ok(BrownianPath { grid, n: self.n, increments, seed: self.seed, stream_id: self.stream_id })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        let g = TimeGrid::new(20.0, 1e-3).unwrap();
        assert_eq!(g.steps(), 20_000);
        assert_eq!(g.time(g.steps()), 20.0);
        assert!(TimeGrid::from_times(&[0.0, 0.1, 0.3]).is_err());
        assert_eq!(TimeGrid::from_times(&[0.0, 0.5, 1.0]).unwrap().steps(), 2);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let g = TimeGrid::new(1.0, 0.01).unwrap();
        let a = sample_brownian(3, &g, 42, 7);
        let b = sample_brownian(3, &g, 42, 7);
        assert_eq!(a, b);
        let c = sample_brownian(3, &g, 42, 8);
        assert_ne!(a.increment(0), c.increment(0));
    }

    #[test]
    fn increments_have_variance_dt() {
        // 10^5 increments; the sample variance has standard error dt·sqrt(2/(n-1)).
        let g = TimeGrid::new(1.0, 1e-5).unwrap();
        let p = sample_brownian(1, &g, 1, 0);
        let xs = p.increments_of(0);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = g.dt() * (2.0 / (n - 1.0)).sqrt();
        assert!((var - g.dt()).abs() < 3.0 * se, "var {var} vs dt {}", g.dt());
        assert!(mean.abs() < 3.0 * (g.dt() / n).sqrt());
    }

    #[test]
    fn streams_are_uncorrelated() {
        let g = TimeGrid::new(1.0, 1e-5).unwrap();
        let a = sample_brownian(1, &g, 9, 0).increments_of(0);
        let b = sample_brownian(1, &g, 9, 1).increments_of(0);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dot / (na * nb)).abs() < 0.01);
    }

    #[test]
    fn coarsening_preserves_terminal_value() {
        let g = TimeGrid::new(1.0, 1.0 / 64.0).unwrap();
        let p = sample_brownian(2, &g, 3, 1);
        let c = p.coarsen(8).unwrap();
        assert_eq!(c.grid().steps(), 8);
        for k in 0..2 {
            assert!((c.terminal(k) - p.terminal(k)).abs() < 1e-14);
        }
        assert!(p.coarsen(5).is_err());
    }
}
