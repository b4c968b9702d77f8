//! Failure-probability estimators.
//!
//! Pruned importance sampling: expectations of functions of `X` are split into
//! a cheap term over the pruned-away samples (whose indicator values are
//! assumed from the sign of `eta_hat`) and a subsampled term over the first
//! `n` uncertain samples. On top of that, the UT-over-sigma-points reductions
//! produce the expected failure probability and the three residual-uncertainty
//! measures. A double-loop Monte Carlo estimator (exact in the limit) serves
//! as the validation oracle for all of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_graph::{EvalStats, ModelGraph};
use crate::probspace::{std_normal_cdf, RandomVector};
use crate::sampling::{PruneResult, SampleSet, WeightedSample};
use crate::unscented::SigmaPointSet;

/// A pruned importance-sampling estimate with its variance estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedEstimate {
    pub value: f64,
    pub sample_variance: f64,
    pub h_bar: f64,
    pub n_used: usize,
    pub n_tau: usize,
    pub n0: usize,
}

/// The per-iteration uncertainty summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualUncertainty {
    pub alpha_mean: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub v_k: f64,
}

/// `h_bar` term of an estimator: the weighted sum of assumed values over the
/// pruned-away samples.
pub fn h_bar(samples: &[WeightedSample], pr: &PruneResult) -> f64 {
    let n0 = samples.len() as f64;
    pr.pruned
        .iter()
        .zip(&pr.assumed_signs)
        .map(|(&i, f)| f * samples[i].w)
        .sum::<f64>()
        / n0
}

/// Pruned importance-sampling estimate of `E[f(X)]`, evaluating `f` only on
/// the first `n` kept samples and assuming the recorded signs elsewhere.
pub fn pruned_expectation<F>(
    samples: &[WeightedSample],
    pr: &PruneResult,
    n: usize,
    mut f: F,
) -> Result<PrunedEstimate>
where
    F: FnMut(&[f64]) -> f64,
{
    let n0 = samples.len();
    let n_tau = pr.kept.len();
    let n_used = n.min(n_tau);
    if n_used == 0 && n_tau > 0 {
        return Err(Error::DegenerateEstimate(
            "no evaluation budget (n = 0) while uncertain samples remain".into(),
        ));
    }
    let hb = h_bar(samples, pr);
    // s_h_bar: second moment of the pruned-term summands over all N0 samples
    let s_hb = pr
        .pruned
        .iter()
        .zip(&pr.assumed_signs)
        .map(|(&i, fi)| (fi * samples[i].w).powi(2))
        .sum::<f64>()
        / n0 as f64;
    let scale = if n_used > 0 {
        n_tau as f64 / (n_used as f64 * n0 as f64)
    } else {
        0.0
    };
    let mut r_sum = 0.0;
    let mut r_sq = 0.0;
    for &i in pr.kept.iter().take(n_used) {
        let term = f(&samples[i].x) * samples[i].w;
        r_sum += term;
        r_sq += term * term;
    }
    let r_bar = scale * r_sum;
    let value = hb + r_bar;
    let var_pruned = (s_hb - hb * hb) / (n0 as f64 - 1.0);
    let var_active = if n_used > 0 && (n_used * n0) > n_tau {
        (n_tau as f64 / (n_used as f64 * n0 as f64 - n_tau as f64))
            * (-r_bar * r_bar + scale * r_sq)
    } else {
        0.0
    };
    Ok(PrunedEstimate {
        value,
        sample_variance: (var_pruned + var_active).max(0.0),
        h_bar: hb,
        n_used,
        n_tau,
        n0,
    })
}

/// UT-MCIS estimate of the expected failure probability and its epistemic
/// variance, reusing the finite-dimensional values cached in the sample set.
pub fn ut_mcis_h1(
    set: &SampleSet,
    pr: &PruneResult,
    n: usize,
    sigma_xi: &SigmaPointSet,
    stats: &mut EvalStats,
) -> (f64, f64) {
    let n0 = set.samples.len();
    let n_tau = pr.kept.len();
    let n_used = n.min(n_tau);
    let hb1 = h_bar(&set.samples, pr);
    let scale = if n_used > 0 {
        n_tau as f64 / (n_used as f64 * n0 as f64)
    } else {
        0.0
    };
    let mut alphas = vec![hb1; sigma_xi.len()];
    for &i in pr.kept.iter().take(n_used) {
        let w = set.samples[i].w;
        for (j, a) in alphas.iter_mut().enumerate() {
            if set.xi_vals[i][j] <= 0.0 {
                *a += scale * w;
            }
        }
    }
    let (alpha_mean, h1_raw) = sigma_xi.moments_of(&alphas);
    let h1 = stats.clamp_var(h1_raw);
    (alpha_mean, h1)
}

/// UT-MCIS estimates of the two gamma-based residual-uncertainty measures.
///
/// With `conservative_tails`, the pruned-away samples contribute their
/// worst-case gamma value at the threshold instead of zero, restoring the
/// upper-bound reading of these measures.
pub fn ut_mcis_h2_h3(
    set: &SampleSet,
    pr: &PruneResult,
    n: usize,
    tau: f64,
    conservative_tails: bool,
) -> (f64, f64) {
    let n0 = set.samples.len();
    let n_tau = pr.kept.len();
    let n_used = n.min(n_tau);
    let scale = if n_used > 0 {
        n_tau as f64 / (n_used as f64 * n0 as f64)
    } else {
        0.0
    };
    let (mut hb2, mut hb3) = (0.0, 0.0);
    if conservative_tails {
        let w_pruned: f64 = pr.pruned.iter().map(|&i| set.samples[i].w).sum();
        let gamma_tau = std_normal_cdf(tau) * std_normal_cdf(-tau);
        hb2 = gamma_tau * w_pruned / n0 as f64;
        hb3 = gamma_tau.sqrt() * w_pruned / n0 as f64;
    }
    let mut h2 = hb2;
    let mut h3_root = hb3;
    for &i in pr.kept.iter().take(n_used) {
        let s = &set.samples[i];
        let gamma = std_normal_cdf(s.eta_hat) * std_normal_cdf(-s.eta_hat);
        h2 += scale * gamma * s.w;
        h3_root += scale * gamma.sqrt() * s.w;
    }
    (h2, h3_root * h3_root)
}

/// Coefficient of variation of the failure probability under epistemic
/// uncertainty; infinite when the mean estimate is not positive.
pub fn coefficient_of_variation(alpha_mean: f64, h1: f64) -> f64 {
    if alpha_mean > 0.0 {
        h1.max(0.0).sqrt() / alpha_mean
    } else {
        f64::INFINITY
    }
}

/// Full residual-uncertainty summary for the current model state.
pub fn estimate_residual(
    set: &SampleSet,
    pr: &PruneResult,
    n: usize,
    tau: f64,
    sigma_xi: &SigmaPointSet,
    conservative_tails: bool,
    stats: &mut EvalStats,
) -> ResidualUncertainty {
    let (alpha_mean, h1) = ut_mcis_h1(set, pr, n, sigma_xi, stats);
    let (h2, h3) = ut_mcis_h2_h3(set, pr, n, tau, conservative_tails);
    ResidualUncertainty {
        alpha_mean,
        h1,
        h2,
        h3,
        v_k: coefficient_of_variation(alpha_mean, h1),
    }
}

/// Double-loop Monte Carlo estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleLoopEstimate {
    pub alpha_samples: Vec<f64>,
    pub alpha_mean: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

/// Double-loop Monte Carlo: `n2` epistemic realizations evaluated on a shared
/// set of `n1` aleatory draws. Exact in the limit; used to validate the
/// UT-MCIS approximations.
pub fn double_loop_mc(
    graph: &ModelGraph,
    rv: &RandomVector,
    n1: usize,
    n2: usize,
    seed: u64,
) -> Result<DoubleLoopEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edim = graph.epistemic_dim();
    let es: Vec<Vec<f64>> = (0..n2)
        .map(|_| (0..edim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let xs: Vec<Vec<f64>> = rv.sample(&mut rng, n1);
    // per-x row: indicator values across the n2 epistemic realizations
    let rows: Vec<Result<(Vec<bool>, f64)>> = xs
        .par_iter()
        .map(|x| {
            let base = graph.base_trace(x)?;
            let mut flags = Vec::with_capacity(n2);
            let mut count = 0usize;
            for e in &es {
                let fail = graph.eval_with_base(x, e, &base)? <= 0.0;
                flags.push(fail);
                if fail {
                    count += 1;
                }
            }
            Ok((flags, count as f64 / n2 as f64))
        })
        .collect();
    let mut col_counts = vec![0u64; n2];
    let mut gamma_sum = 0.0;
    let mut gamma_root_sum = 0.0;
    for row in rows {
        let (flags, p_i) = row?;
        for (j, &f) in flags.iter().enumerate() {
            if f {
                col_counts[j] += 1;
            }
        }
        let gamma = p_i * (1.0 - p_i);
        gamma_sum += gamma;
        gamma_root_sum += gamma.sqrt();
    }
    let alpha_samples: Vec<f64> = col_counts
        .iter()
        .map(|&c| c as f64 / n1 as f64)
        .collect();
    let alpha_mean = alpha_samples.iter().sum::<f64>() / n2 as f64;
    let h1 = alpha_samples
        .iter()
        .map(|a| (a - alpha_mean) * (a - alpha_mean))
        .sum::<f64>()
        / (n2 as f64 - 1.0);
    Ok(DoubleLoopEstimate {
        alpha_samples,
        alpha_mean,
        h1,
        h2: gamma_sum / n1 as f64,
        h3: (gamma_root_sum / n1 as f64).powi(2),
    })
}
