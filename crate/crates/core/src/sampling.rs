//! Weighted sample generation in the aleatory space.
//!
//! Produces the `(x_i, w_i, eta_hat_i)` triples used by the pruned
//! importance-sampling estimators: design-point searches in u-space, an
//! equal-weighted Gaussian mixture proposal centered at the design points
//! (with a uniform-hypercube fallback), importance weights computed in
//! u-space, and the eta pruning criterion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_graph::{EvalStats, ModelGraph};
use crate::probspace::{
    std_normal_cdf, std_normal_log_pdf, std_normal_quantile, RandomVector,
};
use crate::unscented::SigmaPointSet;

/// One importance sample: the point, its weight `p/q`, and the UT estimate of
/// the signed mean-to-sd ratio of the performance value there.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedSample {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub w: f64,
    pub eta_hat: f64,
}

/// A local minimum-norm point on the limit-state surface in u-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub u_star: Vec<f64>,
    pub norm: f64,
    pub converged: bool,
    pub g_value_at_point: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DesignPointParams {
    pub max_iter: usize,
    pub step_tol: f64,
    /// Convergence tolerance on `|g|`; callers scale it by the magnitude of
    /// `g` at the origin.
    pub g_tol: f64,
    pub merit_safety: f64,
}

impl Default for DesignPointParams {
    fn default() -> Self {
        DesignPointParams {
            max_iter: 100,
            step_tol: 1e-6,
            g_tol: 1e-6,
            merit_safety: 10.0,
        }
    }
}

impl DesignPointParams {
    /// Params with `g_tol` scaled to the limit state's magnitude at `u = 0`.
    pub fn scaled_to(g_at_origin: f64) -> Self {
        DesignPointParams {
            g_tol: 1e-6 * (1.0 + g_at_origin.abs()),
            ..Default::default()
        }
    }
}

/// iHL-RF search for a design point of `g` starting at `u0`.
///
/// Gradients come from central finite differences with step
/// `1e-5 * (1 + |u_i|)`. Non-finite `g` values are treated as uphill; the
/// search then either recovers through the line search or reports
/// `converged = false` after `max_iter`.
pub fn find_design_point<G>(g: &G, u0: &[f64], params: &DesignPointParams) -> Result<DesignPoint>
where
    G: Fn(&[f64]) -> f64 + ?Sized,
{
    let m = u0.len();
    let mut u = u0.to_vec();
    let mut g_val = g(&u);
    if !g_val.is_finite() {
        return Ok(DesignPoint {
            norm: norm(&u),
            u_star: u,
            converged: false,
            g_value_at_point: g_val,
        });
    }
    let mut converged = false;
    for iteration in 0..params.max_iter {
        let mut grad = vec![0.0; m];
        for i in 0..m {
            let h = 1e-5 * (1.0 + u[i].abs());
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += h;
            dn[i] -= h;
            grad[i] = (g(&up) - g(&dn)) / (2.0 * h);
        }
        let grad_norm2: f64 = grad.iter().map(|v| v * v).sum();
        let grad_norm = grad_norm2.sqrt();
        if !grad_norm.is_finite() || grad_norm < 1e-12 {
            return Err(Error::SingularGradient { iteration });
        }
        // HL-RF target point
        let coef = (dot(&grad, &u) - g_val) / grad_norm2;
        let target: Vec<f64> = grad.iter().map(|gi| coef * gi).collect();
        let direction: Vec<f64> = target.iter().zip(&u).map(|(t, ui)| t - ui).collect();
        // merit function with adaptive penalty
        let c = params.merit_safety * (2.0 * norm(&u) / grad_norm).max(1.0);
        let merit = |uu: &[f64], gg: f64| 0.5 * dot(uu, uu) + c * gg.abs();
        let m0 = merit(&u, g_val);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = u
                .iter()
                .zip(&direction)
                .map(|(ui, di)| ui + lambda * di)
                .collect();
            let g_cand = g(&cand);
            if g_cand.is_finite() && merit(&cand, g_cand) < m0 {
                let step = lambda * norm(&direction);
                u = cand;
                g_val = g_cand;
                accepted = true;
                if step < params.step_tol && g_val.abs() < params.g_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // no merit decrease possible; accept convergence only if already
            // on the surface
            converged = g_val.abs() < params.g_tol;
            break;
        }
        if converged {
            break;
        }
    }
    // final convergence check for runs that stalled right on the surface
    if !converged && g_val.abs() < params.g_tol {
        converged = true;
    }
    Ok(DesignPoint {
        norm: norm(&u),
        u_star: u,
        converged,
        g_value_at_point: g_val,
    })
}

/// Importance-sampling proposal over u-space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Proposal {
    /// Equal-weighted standard-normal mixture shifted to the given centers.
    Mixture { centers: Vec<Vec<f64>>, dim: usize },
    /// Uniform density on the hypercube `[-b, b]^m`.
    Hypercube { b: f64, dim: usize },
}

impl Proposal {
    pub fn standard_normal(dim: usize) -> Proposal {
        Proposal::Mixture {
            centers: vec![vec![0.0; dim]],
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Proposal::Mixture { dim, .. } | Proposal::Hypercube { dim, .. } => *dim,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Proposal::Mixture { centers, dim } => {
                let c = &centers[rng.random_range(0..centers.len())];
                (0..*dim)
                    .map(|i| c[i] + rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            Proposal::Hypercube { b, dim } => {
                (0..*dim).map(|_| rng.random_range(-*b..*b)).collect()
            }
        }
    }

    pub fn log_density(&self, u: &[f64]) -> f64 {
        match self {
            Proposal::Mixture { centers, .. } => {
                let logs: Vec<f64> = centers
                    .iter()
                    .map(|c| {
                        u.iter()
                            .zip(c)
                            .map(|(ui, ci)| std_normal_log_pdf(ui - ci))
                            .sum::<f64>()
                    })
                    .collect();
                log_sum_exp(&logs) - (centers.len() as f64).ln()
            }
            Proposal::Hypercube { b, dim } => {
                if u.iter().any(|ui| ui.abs() > *b) {
                    f64::NEG_INFINITY
                } else {
                    -(*dim as f64) * (2.0 * b).ln()
                }
            }
        }
    }

    /// Importance weight `phi_m(u) / q(u)`.
    pub fn weight(&self, u: &[f64]) -> f64 {
        let log_p: f64 = u.iter().copied().map(std_normal_log_pdf).sum();
        (log_p - self.log_density(u)).exp()
    }
}

/// Uniform proposal on the hypercube reaching out to the `1 - p_min` normal
/// quantile in every direction.
pub fn hypercube_proposal(dim: usize, p_min: f64) -> Result<Proposal> {
    if !(p_min > 0.0 && p_min < 0.5) {
        return Err(Error::Parameter(format!(
            "hypercube p_min must lie in (0, 0.5), got {p_min}"
        )));
    }
    Ok(Proposal::Hypercube {
        b: std_normal_quantile(1.0 - p_min),
        dim,
    })
}

/// How the proposal for the current model state was obtained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalReport {
    pub n_centers: usize,
    pub n_searches: usize,
    pub n_converged: usize,
    pub fallback: bool,
}

/// Builds the design-point mixture proposal for the current graph state.
///
/// Runs the design-point search on the finite-dimensional limit state at
/// every sigma point of `E`, with `restarts` randomized starts for the first
/// sigma point and warm starts from the previous sigma point's results for
/// the rest. Falls back to the hypercube proposal when no search converges.
pub fn build_proposal(
    graph: &ModelGraph,
    rv: &RandomVector,
    sigma_xi: &SigmaPointSet,
    restarts: usize,
    p_min: f64,
    seed: u64,
) -> Result<(Proposal, ProposalReport)> {
    let m = rv.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let restarts = restarts.max(1);
    let g_at = |u: &[f64], e: &[f64]| -> f64 {
        let x = rv.from_standard_normal(u);
        graph.eval_xi_hat(&x, e).unwrap_or(f64::NAN)
    };
    let origin = vec![0.0; m];
    let zero_e = vec![0.0; graph.epistemic_dim()];
    let params = DesignPointParams::scaled_to(g_at(&origin, &zero_e));

    let mut centers: Vec<Vec<f64>> = Vec::new();
    let mut n_searches = 0usize;
    let mut n_converged = 0usize;
    // starts for the first sigma point: the origin plus randomized draws
    let mut starts: Vec<Vec<f64>> = vec![origin.clone()];
    for _ in 1..restarts {
        starts.push(
            (0..m)
                .map(|_| 2.0f64.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
    }
    for e in sigma_xi.points() {
        let g_e = |u: &[f64]| g_at(u, e);
        let mut found: Vec<Vec<f64>> = Vec::new();
        for start in &starts {
            n_searches += 1;
            let mut attempt = start.clone();
            // a stationary start (e.g. the origin of a symmetric problem)
            // gets nudged and retried
            for retry in 0..3 {
                match find_design_point(&g_e, &attempt, &params) {
                    Ok(dp) => {
                        if dp.converged {
                            n_converged += 1;
                            found.push(dp.u_star);
                        }
                        break;
                    }
                    Err(Error::SingularGradient { .. }) if retry < 2 => {
                        attempt = attempt
                            .iter()
                            .map(|v| v + 0.5 * rng.sample::<f64, _>(StandardNormal))
                            .collect();
                    }
                    Err(Error::SingularGradient { .. }) => break,
                    Err(e) => return Err(e),
                }
            }
        }
        for p in &found {
            if !centers.iter().any(|c| dist(c, p) < 1e-3) {
                centers.push(p.clone());
            }
        }
        // warm-start the next sigma point from this one's results
        if !found.is_empty() {
            let mut next = found;
            while next.len() < restarts {
                next.push(
                    (0..m)
                        .map(|_| 2.0f64.sqrt() * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                );
            }
            starts = next;
        }
    }
    let fallback = centers.is_empty();
    let proposal = if fallback {
        hypercube_proposal(m, p_min)?
    } else {
        Proposal::Mixture {
            centers: centers.clone(),
            dim: m,
        }
    };
    Ok((
        proposal,
        ProposalReport {
            n_centers: centers.len(),
            n_searches,
            n_converged,
            fallback,
        },
    ))
}

/// The generated sample set, with the per-sample finite-dimensional values at
/// every sigma point kept for reuse by the estimators.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub samples: Vec<WeightedSample>,
    /// `xi_hat(x_i, e_j)` for all samples and sigma points, row per sample.
    pub xi_vals: Vec<Vec<f64>>,
}

/// Draws `n0` samples from the proposal and annotates them with importance
/// weights and the UT pruning statistic.
pub fn generate_samples(
    graph: &ModelGraph,
    rv: &RandomVector,
    proposal: &Proposal,
    n0: usize,
    sigma_xi: &SigmaPointSet,
    seed: u64,
    stats: &mut EvalStats,
) -> Result<SampleSet> {
    if n0 == 0 {
        return Err(Error::Parameter("sample count n0 must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let us: Vec<Vec<f64>> = (0..n0).map(|_| proposal.sample(&mut rng)).collect();
    let results: Vec<Result<(WeightedSample, Vec<f64>, EvalStats)>> = us
        .into_par_iter()
        .map(|u| {
            let mut local = EvalStats::default();
            let x = rv.from_standard_normal(&u);
            let w = proposal.weight(&u);
            let base = graph.base_trace(&x)?;
            let mut vals = Vec::with_capacity(sigma_xi.len());
            for e in sigma_xi.points() {
                vals.push(graph.eval_with_base(&x, e, &base)?);
            }
            local.xi_evals += sigma_xi.len() as u64;
            let (mu, var_raw) = sigma_xi.moments_of(&vals);
            let var = local.clamp_var(var_raw);
            let sd = var.sqrt();
            let eta_hat = if sd > 0.0 {
                mu / sd
            } else if mu > 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            Ok((WeightedSample { x, u, w, eta_hat }, vals, local))
        })
        .collect();
    let mut samples = Vec::with_capacity(n0);
    let mut xi_vals = Vec::with_capacity(n0);
    for r in results {
        let (s, vals, local) = r?;
        stats.merge(&local);
        samples.push(s);
        xi_vals.push(vals);
    }
    Ok(SampleSet { samples, xi_vals })
}

/// Pruning split of a sample set at threshold `tau`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneResult {
    /// `I_tau`: indices with `|eta_hat| < tau`, in generation order.
    pub kept: Vec<usize>,
    /// Complement of `I_tau`.
    pub pruned: Vec<usize>,
    /// Assumed indicator value `f_i = 1{eta_hat_i <= 0}` per pruned index.
    pub assumed_signs: Vec<f64>,
}

/// Splits samples into the uncertain-sign set and the pruned-away set with
/// assumed signs. Requires `tau > sqrt(2)` for the sign-flip bound to hold.
pub fn prune(samples: &[WeightedSample], tau: f64) -> Result<PruneResult> {
    if !(tau > std::f64::consts::SQRT_2) {
        return Err(Error::Parameter(format!(
            "pruning threshold tau = {tau} must exceed sqrt(2) for the one-sided \
             Chebyshev sign-flip bound to apply"
        )));
    }
    let mut kept = Vec::new();
    let mut pruned = Vec::new();
    let mut assumed_signs = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.eta_hat.abs() < tau {
            kept.push(i);
        } else {
            pruned.push(i);
            assumed_signs.push(if s.eta_hat <= 0.0 { 1.0 } else { 0.0 });
        }
    }
    Ok(PruneResult {
        kept,
        pruned,
        assumed_signs,
    })
}

/// Distribution-free bound on the sign-flip probability beyond `tau`.
pub fn chebyshev_flip_bound(tau: f64) -> f64 {
    (2.0 / (tau * tau)) * (1.0 - 1.0 / (tau * tau))
}

/// The tighter bound available when the performance value is Gaussian.
pub fn gaussian_flip_bound(tau: f64) -> f64 {
    2.0 * std_normal_cdf(tau) * std_normal_cdf(-tau)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
