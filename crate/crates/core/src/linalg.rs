//! Small dense linear algebra: vector norms and a row-major matrix with
//! power-iteration spectral norm calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn mean_of(vectors: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    if vectors.is_empty() {
        return out;
    }
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Least-squares slope of `ys` against `xs`. `None` with fewer than two
/// distinct abscissae.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

/// Iteration cap for spectral norm estimation.
pub const POWER_ITERATION_CAP: usize = 100_000;

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "matrix data",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = dot(self.row(r), v);
        }
    }

    pub fn tmul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate().take(self.rows) {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// Largest singular value by power iteration on `A^T A`, run until the
    /// Rayleigh estimate is stable to machine precision.
    pub fn spectral_norm(&self) -> Result<f64> {
        if self.data.iter().all(|&x| x == 0.0) {
            return Ok(0.0);
        }
        // Deterministic, non-degenerate start vector.
        let mut v: Vec<f64> = (0..self.cols).map(|i| 1.0 + (i as f64 * 0.618).sin() * 0.5).collect();
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        let mut prev = 0.0;
        let mut stable = 0;
        for _ in 0..POWER_ITERATION_CAP {
            let w = self.tmul_vec(&self.mul_vec(&v));
            let lambda = dot(&v, &w);
            let nw = norm(&w);
            if nw == 0.0 {
                return Ok(0.0);
            }
            v = w.into_iter().map(|x| x / nw).collect();
            if (lambda - prev).abs() <= 1e-15 * lambda {
                stable += 1;
                if stable >= 5 {
                    // Final Rayleigh quotient with the converged vector.
                    let av = self.mul_vec(&v);
                    return Ok(norm(&av));
                }
            } else {
                stable = 0;
            }
            prev = lambda;
        }
        Err(Error::Calibration {
            iterations: POWER_ITERATION_CAP,
        })
    }

    /// Rescale in place so the operator norm equals `target`.
    pub fn calibrate(&mut self, target: f64) -> Result<()> {
        let s = self.spectral_norm()?;
        if s == 0.0 {
            return Err(Error::Calibration { iterations: 0 });
        }
        self.scale(target / s);
        Ok(())
    }
}
