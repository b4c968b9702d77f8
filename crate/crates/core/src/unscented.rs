//! Sigma-point sets and unscented-transform moment propagation.
//!
//! The point scheme is the scaled symmetric set with parameters
//! `(alpha, beta, kappa)`: for a standardized n-dimensional input the points
//! are the origin plus `alpha*sqrt(n+kappa)` steps along each axis in both
//! directions, with separate weight vectors for mean and covariance
//! reconstruction. Weights may be negative; that is expected for n >= 3 with
//! the default `kappa = 3 - n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default spread parameter.
pub const DEFAULT_ALPHA: f64 = 0.9;
/// Default prior-knowledge parameter (optimal for Gaussian inputs).
pub const DEFAULT_BETA: f64 = 2.0;

/// Default secondary scaling for dimension `n`.
pub fn default_kappa(n: usize) -> f64 {
    3.0 - n as f64
}

/// A weighted sigma-point set for a standardized n-dimensional variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaPointSet {
    points: Vec<Vec<f64>>,
    mean_weights: Vec<f64>,
    cov_weights: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl SigmaPointSet {
    /// Sigma points with the default parameters for dimension `n`.
    pub fn for_dim(n: usize) -> SigmaPointSet {
        merwe_sigma_points(n, DEFAULT_ALPHA, DEFAULT_BETA, default_kappa(n))
            .expect("default parameters are always valid")
    }

    /// Single unit-weight point for a zero-dimensional variable, so that
    /// models without epistemic uncertainty go through the same code paths.
    pub fn degenerate() -> SigmaPointSet {
        SigmaPointSet {
            points: vec![Vec::new()],
            mean_weights: vec![1.0],
            cov_weights: vec![1.0],
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            kappa: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn mean_weights(&self) -> &[f64] {
        &self.mean_weights
    }

    pub fn cov_weights(&self) -> &[f64] {
        &self.cov_weights
    }

    /// Maps the points through a node-specific transform (for example the
    /// inverse isoprobabilistic map of a non-Gaussian epistemic variable),
    /// keeping the weights. `None` leaves the u-space points unchanged.
    pub fn transformed(&self, transform: Option<&dyn Fn(&[f64]) -> Vec<f64>>) -> SigmaPointSet {
        match transform {
            None => self.clone(),
            Some(t) => SigmaPointSet {
                points: self.points.iter().map(|p| t(p)).collect(),
                ..self.clone()
            },
        }
    }

    /// UT moments of a scalar transformation: `(mean, variance)`.
    ///
    /// The variance can come out negative when the zeroth covariance weight
    /// is negative; callers decide whether to clamp (see `estimators`).
    pub fn propagate_scalar<F>(&self, mut f: F) -> Result<(f64, f64)>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut vals = Vec::with_capacity(self.len());
        for (i, p) in self.points.iter().enumerate() {
            let y = f(p);
            if !y.is_finite() {
                return Err(Error::Propagation { index: i });
            }
            vals.push(y);
        }
        Ok(self.moments_of(&vals))
    }

    /// UT mean/variance of precomputed per-point scalar values.
    pub fn moments_of(&self, vals: &[f64]) -> (f64, f64) {
        debug_assert_eq!(vals.len(), self.len());
        let mean: f64 = self
            .mean_weights
            .iter()
            .zip(vals)
            .map(|(w, y)| w * y)
            .sum();
        let var: f64 = self
            .cov_weights
            .iter()
            .zip(vals)
            .map(|(w, y)| w * (y - mean) * (y - mean))
            .sum();
        (mean, var)
    }

    /// UT mean of precomputed per-point scalar values.
    pub fn mean_of(&self, vals: &[f64]) -> f64 {
        self.mean_weights
            .iter()
            .zip(vals)
            .map(|(w, y)| w * y)
            .sum()
    }
}

/// Builds the scaled symmetric sigma-point set for a standardized
/// n-dimensional input (zero mean, identity covariance).
pub fn merwe_sigma_points(n: usize, alpha: f64, beta: f64, kappa: f64) -> Result<SigmaPointSet> {
    if n == 0 {
        return Err(Error::Parameter("sigma points need dimension n >= 1".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let lambda = n as f64 + kappa;
    if lambda <= 0.0 {
        return Err(Error::Parameter(format!(
            "n + kappa must be positive, got n = {n}, kappa = {kappa}"
        )));
    }
    let spread = alpha * lambda.sqrt();
    let mut points = vec![vec![0.0; n]];
    for i in 0..n {
        let mut p = vec![0.0; n];
        p[i] = spread;
        points.push(p);
    }
    for i in 0..n {
        let mut p = vec![0.0; n];
        p[i] = -spread;
        points.push(p);
    }
    let denom = alpha * alpha * lambda;
    let w0_mean = 1.0 - n as f64 / denom;
    let w0_cov = w0_mean + 1.0 - alpha * alpha + beta;
    let wi = 1.0 / (2.0 * denom);
    let mut mean_weights = vec![wi; 2 * n + 1];
    let mut cov_weights = vec![wi; 2 * n + 1];
    mean_weights[0] = w0_mean;
    cov_weights[0] = w0_cov;
    Ok(SigmaPointSet {
        points,
        mean_weights,
        cov_weights,
        alpha,
        beta,
        kappa,
    })
}

/// UT moments of a vector-valued transformation: `(mean, covariance)`.
pub fn propagate<F>(sp: &SigmaPointSet, mut f: F) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut images: Vec<DVector<f64>> = Vec::with_capacity(sp.len());
    for (i, p) in sp.points().iter().enumerate() {
        let y = f(p);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Propagation { index: i });
        }
        images.push(DVector::from_vec(y));
    }
    let dim = images[0].len();
    let mut mean = DVector::zeros(dim);
    for (w, y) in sp.mean_weights().iter().zip(&images) {
        mean.axpy(*w, y, 1.0);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (w, y) in sp.cov_weights().iter().zip(&images) {
        let d = y - &mean;
        cov.syger(*w, &d, &d, 1.0);
    }
    // fill the upper triangle from the symmetric rank updates
    for i in 0..dim {
        for j in (i + 1)..dim {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    Ok((mean, cov))
}
