//! Gaussian-process surrogates with a constant prior mean and Matérn 5/2
//! covariance, exact conditioning on (possibly noisy) observations, and
//! maximum-likelihood hyperparameter refits.
//!
//! Surrogates have value semantics: `condition` returns a new surrogate and
//! posterior queries are read-only, so they can run concurrently. The Cholesky
//! factorization of the kernel matrix is cached per surrogate and rebuilt
//! lazily after deserialization.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Anisotropic Matérn 5/2 kernel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub sigma_c: f64,
    pub lengthscales: Vec<f64>,
}

impl Kernel {
    pub fn new(sigma_c: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(sigma_c > 0.0) || !sigma_c.is_finite() {
            return Err(Error::Parameter(format!("kernel sigma_c must be > 0, got {sigma_c}")));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::Parameter("kernel lengthscales must all be > 0".into()));
        }
        Ok(Kernel { sigma_c, lengthscales })
    }

    /// Isotropic kernel in `dim` inputs.
    pub fn isotropic(sigma_c: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Kernel::new(sigma_c, vec![lengthscale; dim])
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Matérn 5/2 covariance `sigma_c^2 (1 + sqrt5 r + 5/3 r^2) exp(-sqrt5 r)`
    /// with the anisotropic scaled distance `r`.
    pub fn matern52(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.lengthscales.len());
        debug_assert_eq!(y.len(), self.lengthscales.len());
        let mut r2 = 0.0;
        for i in 0..x.len() {
            let d = (x[i] - y[i]) / self.lengthscales[i];
            r2 += d * d;
        }
        let r = r2.sqrt();
        self.sigma_c * self.sigma_c * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * (-SQRT5 * r).exp()
    }

    pub fn variance(&self) -> f64 {
        self.sigma_c * self.sigma_c
    }
}

#[derive(Debug, Clone)]
struct Factorization {
    /// Lower Cholesky factor of `K + diag(noise) + jitter I`.
    l: DMatrix<f64>,
    /// `(K + diag(noise))^{-1} (y - mu)`.
    alpha: DVector<f64>,
    jitter: f64,
}

/// Posterior mean/variance at a point, plus the triangular solve vector
/// `L^{-1} k(X, z)` needed for cheap one-more-observation updates.
#[derive(Debug, Clone)]
pub struct PointPosterior {
    pub mean: f64,
    pub var: f64,
    pub solve: DVector<f64>,
}

/// Result summary of a hyperparameter refit attempt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefitReport {
    pub refitted: bool,
    pub initial_lml: f64,
    pub final_lml: f64,
}

/// Gaussian-process surrogate with constant prior mean.
#[derive(Debug, Serialize, Deserialize)]
pub struct GpSurrogate {
    prior_mean: f64,
    kernel: Kernel,
    /// Default observation noise standard deviation for new observations.
    noise_sd: f64,
    /// Kernel at construction time; refit bounds are relative to it.
    initial_kernel: Kernel,
    obs_x: Vec<Vec<f64>>,
    obs_y: Vec<f64>,
    obs_noise_sd: Vec<f64>,
    #[serde(skip)]
    factor: OnceLock<Factorization>,
}

impl Clone for GpSurrogate {
    fn clone(&self) -> Self {
        let factor = OnceLock::new();
        if let Some(f) = self.factor.get() {
            let _ = factor.set(f.clone());
        }
        GpSurrogate {
            prior_mean: self.prior_mean,
            kernel: self.kernel.clone(),
            noise_sd: self.noise_sd,
            initial_kernel: self.initial_kernel.clone(),
            obs_x: self.obs_x.clone(),
            obs_y: self.obs_y.clone(),
            obs_noise_sd: self.obs_noise_sd.clone(),
            factor,
        }
    }
}

impl PartialEq for GpSurrogate {
    fn eq(&self, other: &Self) -> bool {
        self.prior_mean == other.prior_mean
            && self.kernel == other.kernel
            && self.noise_sd == other.noise_sd
            && self.obs_x == other.obs_x
            && self.obs_y == other.obs_y
            && self.obs_noise_sd == other.obs_noise_sd
    }
}

impl GpSurrogate {
    pub fn new(prior_mean: f64, kernel: Kernel, noise_sd: f64) -> Result<Self> {
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(Error::Parameter(format!("noise_sd must be >= 0, got {noise_sd}")));
        }
        Ok(GpSurrogate {
            prior_mean,
            kernel: kernel.clone(),
            noise_sd,
            initial_kernel: kernel,
            obs_x: Vec::new(),
            obs_y: Vec::new(),
            obs_noise_sd: Vec::new(),
            factor: OnceLock::new(),
        })
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn n_obs(&self) -> usize {
        self.obs_y.len()
    }

    pub fn observations(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.obs_x.iter().map(|x| x.as_slice()).zip(self.obs_y.iter().copied())
    }

    /// New surrogate conditioned on one more observation with the surrogate's
    /// default noise level.
    pub fn condition(&self, x: Vec<f64>, y: f64) -> Result<GpSurrogate> {
        self.condition_with_noise(x, y, self.noise_sd)
    }

    /// New surrogate conditioned on one more observation with an explicit
    /// noise standard deviation.
    pub fn condition_with_noise(&self, x: Vec<f64>, y: f64, noise_sd: f64) -> Result<GpSurrogate> {
        if x.len() != self.input_dim() {
            return Err(Error::Parameter(format!(
                "observation dimension {} does not match kernel dimension {}",
                x.len(),
                self.input_dim()
            )));
        }
        if !y.is_finite() {
            return Err(Error::Parameter("observation outcome must be finite".into()));
        }
        if noise_sd == 0.0 {
            // exact duplicates: a repeat of a known value is a no-op, a
            // conflicting value cannot be conditioned on
            for (i, xi) in self.obs_x.iter().enumerate() {
                if self.obs_noise_sd[i] == 0.0 && xi == &x {
                    let scale = 1.0 + self.obs_y[i].abs();
                    if (self.obs_y[i] - y).abs() <= 1e-9 * scale {
                        return Ok(self.clone());
                    }
                    return Err(Error::IllConditioned(format!(
                        "conflicting noiseless observations at {x:?}: {} vs {y}",
                        self.obs_y[i]
                    )));
                }
            }
        }
        let mut next = self.clone();
        next.factor = OnceLock::new();
        next.obs_x.push(x);
        next.obs_y.push(y);
        next.obs_noise_sd.push(noise_sd);
        next.ensure_factorized()?;
        Ok(next)
    }

    /// Replaces the kernel (used by refits), keeping observations.
    fn with_kernel(&self, kernel: Kernel) -> Result<GpSurrogate> {
        let mut next = self.clone();
        next.kernel = kernel;
        next.factor = OnceLock::new();
        next.ensure_factorized()?;
        Ok(next)
    }

    /// Builds the Cholesky factorization if missing. Fails with an
    /// ill-conditioned-model error once the jitter ladder is exhausted.
    pub fn ensure_factorized(&self) -> Result<()> {
        if self.factor.get().is_some() || self.obs_y.is_empty() {
            return Ok(());
        }
        let f = self.build_factorization()?;
        let _ = self.factor.set(f);
        Ok(())
    }

    fn build_factorization(&self) -> Result<Factorization> {
        let n = self.obs_y.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.kernel.matern52(&self.obs_x[i], &self.obs_x[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += self.obs_noise_sd[i] * self.obs_noise_sd[i];
        }
        // jitter ladder: 1e-10 sigma_c^2, x10 up to 1e-4 sigma_c^2
        let var = self.kernel.variance();
        let mut jitters = vec![0.0];
        let mut j = 1e-10 * var;
        while j <= 1e-4 * var * (1.0 + 1e-12) {
            jitters.push(j);
            j *= 10.0;
        }
        for &jitter in &jitters {
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            if let Some(chol) = nalgebra::Cholesky::new(kj) {
                let resid =
                    DVector::from_iterator(n, self.obs_y.iter().map(|y| y - self.prior_mean));
                let alpha = chol.solve(&resid);
                let l = chol.unpack();
                return Ok(Factorization { l, alpha, jitter });
            }
        }
        Err(Error::IllConditioned(format!(
            "kernel matrix on {n} observations not positive definite after max jitter"
        )))
    }

    fn factorization(&self) -> &Factorization {
        self.ensure_factorized()
            .expect("surrogate factorization failed; conditioning should have caught this");
        self.factor.get().expect("factorization present after ensure")
    }

    /// Posterior mean and variance at a single query point.
    pub fn posterior_point(&self, z: &[f64]) -> (f64, f64) {
        let p = self.posterior_point_full(z);
        (p.mean, p.var)
    }

    /// Posterior at a point, including the solve vector for rank-one updates.
    pub fn posterior_point_full(&self, z: &[f64]) -> PointPosterior {
        debug_assert_eq!(z.len(), self.input_dim());
        let n = self.obs_y.len();
        if n == 0 {
            return PointPosterior {
                mean: self.prior_mean,
                var: self.kernel.variance(),
                solve: DVector::zeros(0),
            };
        }
        let f = self.factorization();
        let k: DVector<f64> =
            DVector::from_iterator(n, self.obs_x.iter().map(|x| self.kernel.matern52(x, z)));
        let mean = self.prior_mean + k.dot(&f.alpha);
        let mut v = k;
        forward_substitute(&f.l, &mut v);
        let var = (self.kernel.variance() - v.norm_squared()).max(0.0);
        PointPosterior { mean, var, solve: v }
    }

    /// Posterior covariance between two points given their solve vectors.
    pub fn posterior_cov(&self, z1: &[f64], z2: &[f64], p1: &PointPosterior, p2: &PointPosterior) -> f64 {
        self.kernel.matern52(z1, z2) - p1.solve.dot(&p2.solve)
    }

    /// Joint posterior mean vector and covariance matrix over `xs`.
    pub fn posterior_moments(&self, xs: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        for x in xs {
            if x.len() != self.input_dim() {
                return Err(Error::Parameter("query dimension mismatch".into()));
            }
        }
        let m = xs.len();
        let mut prior_cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = self.kernel.matern52(&xs[i], &xs[j]);
                prior_cov[(i, j)] = v;
                prior_cov[(j, i)] = v;
            }
        }
        let n = self.obs_y.len();
        if n == 0 {
            return Ok((DVector::from_element(m, self.prior_mean), prior_cov));
        }
        self.ensure_factorized()?;
        let f = self.factorization();
        // cross = c(X, xs), column per query
        let mut cross = DMatrix::zeros(n, m);
        for (j, z) in xs.iter().enumerate() {
            for (i, x) in self.obs_x.iter().enumerate() {
                cross[(i, j)] = self.kernel.matern52(x, z);
            }
        }
        let mean = DVector::from_iterator(
            m,
            (0..m).map(|j| self.prior_mean + cross.column(j).dot(&f.alpha)),
        );
        let mut v = cross;
        for j in 0..m {
            let mut col: DVector<f64> = v.column(j).into();
            forward_substitute(&f.l, &mut col);
            v.set_column(j, &col);
        }
        let cov = prior_cov - v.transpose() * v;
        Ok((mean, cov))
    }

    /// Log marginal likelihood of the observations under the current kernel.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.obs_y.len();
        if n == 0 {
            return 0.0;
        }
        let f = self.factorization();
        let resid = DVector::from_iterator(n, self.obs_y.iter().map(|y| y - self.prior_mean));
        let quad = resid.dot(&f.alpha);
        let logdet: f64 = (0..n).map(|i| f.l[(i, i)].ln()).sum();
        -0.5 * quad - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Maximum-likelihood refit of `(sigma_c, lengthscales)` once at least
    /// `min_obs` observations are available; otherwise returns the surrogate
    /// unchanged. Deterministic given `seed`.
    pub fn refit_hyperparameters(&self, min_obs: usize, seed: u64) -> (GpSurrogate, RefitReport) {
        let initial_lml = if self.obs_y.is_empty() {
            0.0
        } else {
            self.log_marginal_likelihood()
        };
        let mut report = RefitReport {
            refitted: false,
            initial_lml,
            final_lml: initial_lml,
        };
        if self.obs_y.len() < min_obs.max(2) {
            return (self.clone(), report);
        }
        let d = self.kernel.dim();
        // optimize in log-parameter space with bounds relative to the initial kernel
        let lo: Vec<f64> = std::iter::once(self.initial_kernel.sigma_c * 1e-2)
            .chain(self.initial_kernel.lengthscales.iter().map(|l| l * 1e-3))
            .map(|v| v.ln())
            .collect();
        let hi: Vec<f64> = std::iter::once(self.initial_kernel.sigma_c * 1e2)
            .chain(self.initial_kernel.lengthscales.iter().map(|l| l * 1e3))
            .map(|v| v.ln())
            .collect();
        let objective = |theta: &[f64]| -> f64 {
            for i in 0..theta.len() {
                if theta[i] < lo[i] || theta[i] > hi[i] {
                    return f64::INFINITY;
                }
            }
            let kernel = Kernel {
                sigma_c: theta[0].exp(),
                lengthscales: theta[1..].iter().map(|t| t.exp()).collect(),
            };
            match self.with_kernel(kernel) {
                Ok(gp) => {
                    let lml = gp.log_marginal_likelihood();
                    if lml.is_finite() {
                        -lml
                    } else {
                        f64::INFINITY
                    }
                }
                Err(_) => f64::INFINITY,
            }
        };
        let incumbent: Vec<f64> = std::iter::once(self.kernel.sigma_c.ln())
            .chain(self.kernel.lengthscales.iter().map(|l| l.ln()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best_theta: Option<Vec<f64>> = None;
        let mut best_val = f64::INFINITY;
        for start_idx in 0..8 {
            let start: Vec<f64> = if start_idx == 0 {
                incumbent.clone()
            } else {
                incumbent
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        (t + rng.random_range(-1.6..1.6)).clamp(lo[i], hi[i])
                    })
                    .collect()
            };
            if let Some((theta, val)) = nelder_mead(&objective, &start, 0.3, 250, 1e-9) {
                if val < best_val {
                    best_val = val;
                    best_theta = Some(theta);
                }
            }
        }
        let _ = d;
        match best_theta {
            Some(theta) if best_val < -initial_lml => {
                let kernel = Kernel {
                    sigma_c: theta[0].exp(),
                    lengthscales: theta[1..].iter().map(|t| t.exp()).collect(),
                };
                match self.with_kernel(kernel) {
                    Ok(gp) => {
                        report.refitted = true;
                        report.final_lml = -best_val;
                        (gp, report)
                    }
                    Err(_) => (self.clone(), report),
                }
            }
            // all starts failed or none beat the incumbent: keep it
            _ => (self.clone(), report),
        }
    }
}

/// Solves `L v = b` in place for lower-triangular `L`.
fn forward_substitute(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    let n = b.len();
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Minimal Nelder-Mead minimizer. Returns the best vertex and value, or
/// `None` when the objective was non-finite at the whole initial simplex.
fn nelder_mead<F>(f: &F, start: &[f64], step: f64, max_iter: usize, tol: f64) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += step;
        let fv = f(&v);
        simplex.push((v, fv));
    }
    if simplex.iter().all(|(_, fv)| !fv.is_finite()) {
        return None;
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    };
    order(&mut simplex);
    for _ in 0..max_iter {
        if (simplex[n].1 - simplex[0].1).abs() <= tol * (1.0 + simplex[0].1.abs()) {
            break;
        }
        // centroid of all but the worst
        let mut centroid = vec![0.0; n];
        for (v, _) in simplex.iter().take(n) {
            for i in 0..n {
                centroid[i] += v[i] / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let lerp = |t: f64| -> Vec<f64> {
            (0..n).map(|i| centroid[i] + t * (centroid[i] - worst.0[i])).collect()
        };
        let refl = lerp(1.0);
        let f_refl = f(&refl);
        if f_refl < simplex[0].1 {
            let expand = lerp(2.0);
            let f_exp = f(&expand);
            simplex[n] = if f_exp < f_refl { (expand, f_exp) } else { (refl, f_refl) };
        } else if f_refl < simplex[n - 1].1 {
            simplex[n] = (refl, f_refl);
        } else {
            let contract = lerp(0.5);
            let f_con = f(&contract);
            if f_con < simplex[n].1 {
                simplex[n] = (contract, f_con);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    for i in 0..n {
                        item.0[i] = best[i] + 0.5 * (item.0[i] - best[i]);
                    }
                    item.1 = f(&item.0);
                }
            }
        }
        order(&mut simplex);
    }
    if simplex[0].1.is_finite() {
        Some(simplex[0].clone())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gp_1d(sigma_c: f64, l: f64) -> GpSurrogate {
        GpSurrogate::new(0.0, Kernel::isotropic(sigma_c, l, 1).unwrap(), 0.0).unwrap()
    }

    /// Direct dense-linear-algebra evaluation of the conditioning equations,
    /// independent of the Cholesky query path.
    fn dense_oracle(
        gp: &GpSurrogate,
        obs_x: &[Vec<f64>],
        obs_y: &[f64],
        noise_sd: f64,
        query: &[Vec<f64>],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let n = obs_y.len();
        let m = query.len();
        let kern = gp.kernel();
        let mut kxx = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                kxx[(i, j)] = kern.matern52(&obs_x[i], &obs_x[j]);
            }
            kxx[(i, i)] += noise_sd * noise_sd;
        }
        let kinv = kxx.try_inverse().expect("oracle inverse");
        let mut ksx = DMatrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                ksx[(i, j)] = kern.matern52(&query[i], &obs_x[j]);
            }
        }
        let mut kss = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                kss[(i, j)] = kern.matern52(&query[i], &query[j]);
            }
        }
        let resid = DVector::from_iterator(n, obs_y.iter().map(|y| y - gp.prior_mean()));
        let mean = DVector::from_element(m, gp.prior_mean()) + &ksx * &kinv * resid;
        let cov = kss - &ksx * &kinv * ksx.transpose();
        (mean, cov)
    }

    #[test]
    fn matern_at_zero_distance_is_signal_variance() {
        let k = Kernel::new(1.7, vec![0.5, 2.0]).unwrap();
        assert_relative_eq!(k.matern52(&[1.0, -2.0], &[1.0, -2.0]), 1.7 * 1.7, max_relative = 1e-14);
    }

    #[test]
    fn matern_unit_distance_value() {
        let k = Kernel::isotropic(1.0, 1.0, 1).unwrap();
        let v = k.matern52(&[0.0], &[1.0]);
        let expect = (1.0 + SQRT5 + 5.0 / 3.0) * (-SQRT5).exp();
        assert_relative_eq!(v, expect, max_relative = 1e-14);
        assert_relative_eq!(v, 0.52399, max_relative = 1e-4);
    }

    #[test]
    fn matern_is_symmetric() {
        let k = Kernel::new(0.8, vec![0.4, 1.3, 2.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            assert_relative_eq!(k.matern52(&x, &y), k.matern52(&y, &x), max_relative = 1e-14);
        }
    }

    #[test]
    fn prior_before_any_observation() {
        let gp = gp_1d(0.7, 1.0);
        let (mean, var) = gp.posterior_point(&[3.2]);
        assert_relative_eq!(mean, 0.0, epsilon = 1e-14);
        assert_relative_eq!(var, 0.49, max_relative = 1e-14);
    }

    #[test]
    fn noiseless_observation_interpolates() {
        let gp = gp_1d(1.0, 1.0).condition(vec![0.3], 2.5).unwrap();
        let (mean, var) = gp.posterior_point(&[0.3]);
        assert!((mean - 2.5).abs() < 1e-6 * 3.5);
        assert!(var.abs() < 1e-8);
    }

    #[test]
    fn two_point_posterior_matches_dense_oracle() {
        let gp = gp_1d(1.0, 1.0)
            .condition(vec![0.0], 0.0)
            .unwrap()
            .condition(vec![1.0], 1.0)
            .unwrap();
        let query = vec![vec![0.5]];
        let (mean, cov) = gp.posterior_moments(&query).unwrap();
        let (omean, ocov) = dense_oracle(
            &gp,
            &[vec![0.0], vec![1.0]],
            &[0.0, 1.0],
            0.0,
            &query,
        );
        assert_relative_eq!(mean[0], omean[0], max_relative = 1e-10);
        assert!((cov[(0, 0)] - ocov[(0, 0)]).abs() < 1e-10);
    }

    #[test]
    fn random_problems_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let dim = 1 + trial % 2;
            let kern = Kernel::new(
                0.5 + rng.random::<f64>(),
                (0..dim).map(|_| 0.5 + rng.random::<f64>()).collect(),
            )
            .unwrap();
            let noise = if trial % 3 == 0 { 0.05 } else { 0.0 };
            let mut gp = GpSurrogate::new(rng.random::<f64>() - 0.5, kern, noise).unwrap();
            let n_obs = 2 + trial % 5;
            let mut obs_x = Vec::new();
            let mut obs_y = Vec::new();
            for _ in 0..n_obs {
                let x: Vec<f64> = (0..dim).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
                let y: f64 = rng.sample(StandardNormal);
                gp = gp.condition(x.clone(), y).unwrap();
                obs_x.push(x);
                obs_y.push(y);
            }
            let query: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..dim).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let (mean, cov) = gp.posterior_moments(&query).unwrap();
            let (omean, ocov) = dense_oracle(&gp, &obs_x, &obs_y, noise, &query);
            for i in 0..query.len() {
                assert!((mean[i] - omean[i]).abs() < 1e-6, "trial {trial} mean");
                for j in 0..query.len() {
                    assert!((cov[(i, j)] - ocov[(i, j)]).abs() < 1e-6, "trial {trial} cov");
                }
                // point query agrees with batch query
                let (pm, pv) = gp.posterior_point(&query[i]);
                assert!((pm - mean[i]).abs() < 1e-10);
                assert!((pv - cov[(i, i)].max(0.0)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn far_from_data_returns_to_prior() {
        let gp = GpSurrogate::new(-0.5, Kernel::isotropic(0.1f64.sqrt(), 0.5, 1).unwrap(), 0.0)
            .unwrap()
            .condition(vec![-0.5], 0.7)
            .unwrap();
        let (mean, var) = gp.posterior_point(&[-0.5 + 10.0 * 0.5 + 2.0]);
        assert!((mean - -0.5).abs() < 1e-3);
        assert!((var - 0.1).abs() < 1e-3);
        // example-1 prior shape: zero variance at the observation
        let (_, v0) = gp.posterior_point(&[-0.5]);
        assert!(v0 < 1e-10);
    }

    #[test]
    fn sequential_equals_batch_conditioning() {
        let base = gp_1d(1.3, 0.8);
        let seq = base
            .condition(vec![-0.4], 0.2)
            .unwrap()
            .condition(vec![0.9], -1.1)
            .unwrap();
        let swapped = base
            .condition(vec![0.9], -1.1)
            .unwrap()
            .condition(vec![-0.4], 0.2)
            .unwrap();
        let grid: Vec<Vec<f64>> = (-2..=2).map(|i| vec![i as f64 * 0.7]).collect();
        let (m1, c1) = seq.posterior_moments(&grid).unwrap();
        let (m2, c2) = swapped.posterior_moments(&grid).unwrap();
        for i in 0..grid.len() {
            assert!((m1[i] - m2[i]).abs() < 1e-8);
            assert!((c1[(i, i)] - c2[(i, i)]).abs() < 1e-8);
        }
    }

    #[test]
    fn posterior_variance_never_exceeds_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut gp = gp_1d(1.0, 1.0);
        let mut previous: Vec<f64> = Vec::new();
        let queries: Vec<Vec<f64>> = (0..40).map(|i| vec![-4.0 + 0.2 * i as f64]).collect();
        for step in 0..6 {
            let x: f64 = 3.0 * rng.sample::<f64, _>(StandardNormal);
            gp = gp.condition(vec![x], rng.sample(StandardNormal)).unwrap();
            let vars: Vec<f64> = queries.iter().map(|q| gp.posterior_point(q).1).collect();
            for (i, &v) in vars.iter().enumerate() {
                assert!(v <= 1.0 + 1e-8, "var exceeds prior at query {i}");
                if step > 0 {
                    assert!(
                        v <= previous[i] + 1e-8,
                        "conditioning increased variance at query {i}"
                    );
                }
            }
            previous = vars;
        }
    }

    #[test]
    fn log_marginal_likelihood_matches_direct_density() {
        let gp = gp_1d(0.9, 1.4)
            .condition(vec![0.0], 0.3)
            .unwrap()
            .condition(vec![0.7], -0.1)
            .unwrap()
            .condition(vec![-1.2], 0.8)
            .unwrap();
        let lml = gp.log_marginal_likelihood();
        // direct multivariate normal density on the training set
        let xs = [vec![0.0], vec![0.7], vec![-1.2]];
        let ys = DVector::from_vec(vec![0.3, -0.1, 0.8]);
        let mut k = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                k[(i, j)] = gp.kernel().matern52(&xs[i], &xs[j]);
            }
        }
        let det: f64 = k.determinant();
        let kinv = k.try_inverse().unwrap();
        let quad = (ys.transpose() * &kinv * &ys)[(0, 0)];
        let direct = -0.5 * quad - 0.5 * det.ln() - 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((lml - direct).abs() < 1e-6, "{lml} vs {direct}");
    }

    #[test]
    fn refit_skipped_below_threshold() {
        let gp = gp_1d(1.0, 1.0).condition(vec![0.0], 0.5).unwrap();
        let (refit, report) = gp.refit_hyperparameters(2, 99);
        assert!(!report.refitted);
        assert_eq!(refit.kernel(), gp.kernel());
    }

    #[test]
    fn refit_does_not_decrease_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // data sampled from the prior itself
        let truth = gp_1d(1.0, 1.0);
        let mut gp = gp_1d(1.0, 1.0);
        let mut cur = truth;
        for i in 0..20 {
            let x = -3.0 + 0.315 * i as f64;
            let (m, v) = cur.posterior_point(&[x]);
            let y = m + v.max(0.0).sqrt() * rng.sample::<f64, _>(StandardNormal);
            cur = cur.condition(vec![x], y).unwrap();
            gp = gp.condition(vec![x], y).unwrap();
        }
        let before = gp.log_marginal_likelihood();
        let (refit, report) = gp.refit_hyperparameters(2, 4);
        assert!(refit.log_marginal_likelihood() >= before - 1e-9);
        assert!(report.final_lml >= report.initial_lml - 1e-9);
    }

    #[test]
    fn refit_finds_longer_lengthscale_for_smooth_data() {
        let smooth_data: Vec<(f64, f64)> = (0..15)
            .map(|i| {
                let x = -3.0 + 0.43 * i as f64;
                (x, (0.4 * x).sin())
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let rough_data: Vec<(f64, f64)> = (0..15)
            .map(|i| (-3.0 + 0.43 * i as f64, rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let fit = |data: &[(f64, f64)]| -> f64 {
            let mut gp = gp_1d(1.0, 1.0);
            for (x, y) in data {
                gp = gp.condition(vec![*x], *y).unwrap();
            }
            let (refit, _) = gp.refit_hyperparameters(2, 13);
            refit.kernel().lengthscales[0]
        };
        let l_smooth = fit(&smooth_data);
        let l_rough = fit(&rough_data);
        assert!(
            l_smooth > l_rough,
            "smooth lengthscale {l_smooth} should exceed rough {l_rough}"
        );
    }

    #[test]
    fn conflicting_noiseless_duplicate_is_rejected() {
        let gp = gp_1d(1.0, 1.0).condition(vec![0.5], 1.0).unwrap();
        let err = gp.condition(vec![0.5], -1.0).unwrap_err();
        assert!(matches!(err, Error::IllConditioned(_)));
        // repeating the same value is a no-op
        let same = gp.condition(vec![0.5], 1.0).unwrap();
        assert_eq!(same.n_obs(), 1);
    }
}
