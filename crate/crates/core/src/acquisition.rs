//! Myopic acquisition: expected next-step residual uncertainty per candidate
//! decision, and its minimization over the decision space.
//!
//! For each candidate decision the outcome variable is discretized by sigma
//! points over (target-node coordinate, observation noise), giving a small set
//! of future scenarios. Every scenario is a one-more-observation update of the
//! target node, evaluated against the frozen sample traces via rank-one
//! posterior updates, so scoring a candidate costs no refactorization. One
//! sample set and one `h_bar` are shared across all candidates of an
//! iteration, which keeps the argmin comparison fair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_residual, ResidualUncertainty};
use crate::model_graph::{
    Decision, EvalStats, FrozenPoint, ModelGraph, NodeKind, ScenarioUpdate,
};
use crate::probspace::std_normal_cdf;
use crate::sampling::{PruneResult, SampleSet};
use crate::unscented::SigmaPointSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    H1,
    H2,
    H3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Score is `cost * E[H_next]`.
    None,
    /// Score is `cost * E[H_next] / H_current`.
    RelativeImprovement,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub criterion: Criterion,
    pub normalization: Normalization,
    pub multistarts: usize,
    pub halvings: usize,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec {
            criterion: Criterion::H1,
            normalization: Normalization::None,
            multistarts: 64,
            halvings: 20,
        }
    }
}

/// The sigma-point discretization of a decision's possible futures.
pub struct ScenarioSet {
    pub decision: Decision,
    pub outcomes: Vec<f64>,
    pub updates: Vec<ScenarioUpdate>,
    pub delta: SigmaPointSet,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    /// Materializes scenario `m` as a fully updated graph (test/diagnostic
    /// path; the scoring loop uses the rank-one updates instead).
    pub fn updated_graph(&self, graph: &ModelGraph, m: usize) -> Result<ModelGraph> {
        graph.update(crate::model_graph::Experiment {
            decision: self.decision.clone(),
            outcome: self.outcomes[m],
        })
    }
}

/// Builds the scenario set for a decision: one synthetic outcome per sigma
/// point of the outcome variable, each paired with the corresponding
/// one-more-observation update of the target node. No hyperparameter refit
/// happens here; refits apply only to real experiments.
pub fn build_scenarios(
    graph: &ModelGraph,
    decision: &Decision,
    stats: &mut EvalStats,
) -> Result<ScenarioSet> {
    graph.validate_decision(decision)?;
    let delta = graph.sigma_points_delta();
    let (mean, sd) = graph.target_moments(decision)?;
    let mut outcomes = Vec::with_capacity(delta.len());
    let mut updates = Vec::with_capacity(delta.len());
    let gp_post = match &graph.nodes()[decision.target].kind {
        NodeKind::Surrogate { gp, .. } => Some(gp.posterior_point_full(&decision.input)),
        _ => None,
    };
    for (m, e_delta) in delta.points().iter().enumerate() {
        let outcome = mean + e_delta[0] * sd + e_delta[1] * decision.noise_sd;
        if !outcome.is_finite() {
            return Err(Error::Scenario {
                index: m,
                source: Box::new(Error::Parameter("non-finite synthetic outcome".into())),
            });
        }
        let update = match (&graph.nodes()[decision.target].kind, &gp_post) {
            (NodeKind::Surrogate { .. }, Some(post)) => ScenarioUpdate::Gp {
                input: decision.input.clone(),
                solve: post.solve.clone(),
                resid: outcome - post.mean,
                denom: post.var + decision.noise_sd * decision.noise_sd,
            },
            (NodeKind::NormalParam { mean: m0, sd: s0 }, _) => {
                let (m1, s1) = crate::model_graph::conjugate_normal_update(
                    *m0,
                    *s0,
                    outcome,
                    decision.noise_sd,
                );
                ScenarioUpdate::Param { mean: m1, sd: s1 }
            }
            _ => unreachable!("validated decision targets an epistemic node"),
        };
        outcomes.push(outcome);
        updates.push(update);
        stats.model_updates += 1;
    }
    Ok(ScenarioSet {
        decision: decision.clone(),
        outcomes,
        updates,
        delta,
    })
}

/// The per-iteration frozen sample context shared by all candidate decisions.
pub struct FrozenSamples {
    pub active: Vec<usize>,
    pub weights: Vec<f64>,
    pub h_bar1: f64,
    /// `N_tau / (n * N0)`.
    pub scale: f64,
    pub n0: usize,
    pub n_tau: usize,
    pub xs: Vec<Vec<f64>>,
    pub sigma_xi: SigmaPointSet,
    /// Trace per active sample and sigma point.
    pub traces: Vec<Vec<FrozenPoint>>,
    /// Residual uncertainty of the current state over the same samples.
    pub current: ResidualUncertainty,
}

/// Builds the frozen evaluation traces for the first `n` kept samples.
pub fn freeze_samples(
    graph: &ModelGraph,
    set: &SampleSet,
    pr: &PruneResult,
    n: usize,
    tau: f64,
    stats: &mut EvalStats,
) -> Result<FrozenSamples> {
    let sigma_xi = graph.sigma_points_xi();
    let n0 = set.samples.len();
    let n_tau = pr.kept.len();
    let active: Vec<usize> = pr.kept.iter().take(n).copied().collect();
    let n_used = active.len();
    let scale = if n_used > 0 {
        n_tau as f64 / (n_used as f64 * n0 as f64)
    } else {
        0.0
    };
    let h_bar1 = crate::estimators::h_bar(&set.samples, pr);
    let weights: Vec<f64> = active.iter().map(|&i| set.samples[i].w).collect();
    let xs: Vec<Vec<f64>> = active.iter().map(|&i| set.samples[i].x.clone()).collect();
    let mut traces = Vec::with_capacity(n_used);
    for x in &xs {
        let mut per_sigma = Vec::with_capacity(sigma_xi.len());
        for e in sigma_xi.points() {
            per_sigma.push(graph.frozen_point(x, e)?);
        }
        traces.push(per_sigma);
    }
    let current = estimate_residual(set, pr, n, tau, &sigma_xi, false, stats);
    Ok(FrozenSamples {
        active,
        weights,
        h_bar1,
        scale,
        n0,
        n_tau,
        xs,
        sigma_xi,
        traces,
        current,
    })
}

impl FrozenSamples {
    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn current_h(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::H1 => self.current.h1,
            Criterion::H2 => self.current.h2,
            Criterion::H3 => self.current.h3,
        }
    }
}

/// Expected residual uncertainty after performing `decision`, for the chosen
/// criterion, by UT over the decision's scenario set.
pub fn expected_residual(
    graph: &ModelGraph,
    decision: &Decision,
    frozen: &FrozenSamples,
    criterion: Criterion,
    stats: &mut EvalStats,
) -> Result<f64> {
    let scenarios = build_scenarios(graph, decision, stats)?;
    expected_residual_with(graph, &scenarios, frozen, criterion, stats)
}

/// Same as [`expected_residual`], reusing an already-built scenario set.
pub fn expected_residual_with(
    graph: &ModelGraph,
    scenarios: &ScenarioSet,
    frozen: &FrozenSamples,
    criterion: Criterion,
    stats: &mut EvalStats,
) -> Result<f64> {
    let target = scenarios.decision.target;
    let affected = graph.descendants_mask(target);
    let m_delta = scenarios.len();
    let m_xi = frozen.sigma_xi.len();
    let n_active = frozen.n_active();
    // xi values per scenario, laid out [m][i][j]
    let mut vals = vec![0.0; m_delta * m_xi.max(1)];
    let mut h_per_scenario = vec![0.0; m_delta];
    let mut scratch: Vec<f64> = Vec::new();
    let mut out: Vec<f64> = Vec::new();
    match criterion {
        Criterion::H1 => {
            // alpha estimate per (m, j), then variance over j per scenario
            let mut alphas = vec![frozen.h_bar1; m_delta * m_xi];
            for (i_pos, x) in frozen.xs.iter().enumerate() {
                let w = frozen.weights[i_pos];
                for j in 0..m_xi {
                    let e = frozen.sigma_xi.point(j);
                    let frozen_pt = &frozen.traces[i_pos][j];
                    graph.eval_scenarios_at(
                        x,
                        e,
                        frozen_pt,
                        target,
                        &affected,
                        &scenarios.updates,
                        &mut out,
                        &mut scratch,
                        stats,
                    )?;
                    for m in 0..m_delta {
                        if out[m] <= 0.0 {
                            alphas[m * m_xi + j] += frozen.scale * w;
                        }
                    }
                }
            }
            for m in 0..m_delta {
                let slice = &alphas[m * m_xi..(m + 1) * m_xi];
                let (_, var) = frozen.sigma_xi.moments_of(slice);
                h_per_scenario[m] = stats.clamp_var(var);
            }
        }
        Criterion::H2 | Criterion::H3 => {
            // gamma-based accumulations per scenario
            let mut acc = vec![0.0; m_delta];
            for (i_pos, x) in frozen.xs.iter().enumerate() {
                let w = frozen.weights[i_pos];
                for j in 0..m_xi {
                    let e = frozen.sigma_xi.point(j);
                    let frozen_pt = &frozen.traces[i_pos][j];
                    graph.eval_scenarios_at(
                        x,
                        e,
                        frozen_pt,
                        target,
                        &affected,
                        &scenarios.updates,
                        &mut out,
                        &mut scratch,
                        stats,
                    )?;
                    for m in 0..m_delta {
                        vals[m * m_xi + j] = out[m];
                    }
                }
                for m in 0..m_delta {
                    let slice = &vals[m * m_xi..(m + 1) * m_xi];
                    let (mu, var_raw) = frozen.sigma_xi.moments_of(slice);
                    let var = stats.clamp_var(var_raw);
                    let sd = var.sqrt();
                    let eta = if sd > 0.0 {
                        mu / sd
                    } else if mu > 0.0 {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    };
                    let gamma = std_normal_cdf(eta) * std_normal_cdf(-eta);
                    acc[m] += match criterion {
                        Criterion::H2 => frozen.scale * gamma * w,
                        _ => frozen.scale * gamma.sqrt() * w,
                    };
                }
            }
            for m in 0..m_delta {
                h_per_scenario[m] = match criterion {
                    Criterion::H2 => acc[m],
                    _ => acc[m] * acc[m],
                };
            }
        }
    }
    let _ = n_active;
    Ok(scenarios
        .delta
        .mean_weights()
        .iter()
        .zip(&h_per_scenario)
        .map(|(v, h)| v * h)
        .sum())
}

/// One family of candidate decisions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DecisionFamily {
    /// Continuous input into a surrogate node; candidates are optimized.
    Continuous {
        name: String,
        target: usize,
        noise_sd: f64,
        cost: f64,
    },
    /// An explicit finite set of decisions, evaluated exhaustively.
    Finite { decisions: Vec<Decision> },
}

impl DecisionFamily {
    pub fn name(&self) -> String {
        match self {
            DecisionFamily::Continuous { name, .. } => name.clone(),
            DecisionFamily::Finite { decisions } => decisions
                .first()
                .map(|d| d.family.clone())
                .unwrap_or_else(|| "finite".into()),
        }
    }
}

/// A scored candidate decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub decision: Decision,
    pub expected: f64,
    pub score: f64,
}

/// Result of the decision optimization, with the per-family bests retained
/// for the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub best: Candidate,
    pub family_bests: Vec<Candidate>,
    pub evaluations: usize,
}

/// Minimizes the acquisition over all decision families.
///
/// Continuous families use seeded multistart coordinate descent with halving
/// steps; start points are the target node's local inputs observed at the
/// frozen samples, which concentrate where the limit state is uncertain.
/// Finite families are evaluated exhaustively. All candidates share the same
/// frozen sample set, so scores are comparable across families.
pub fn optimize_decision(
    graph: &ModelGraph,
    families: &[DecisionFamily],
    frozen: &FrozenSamples,
    spec: &AcquisitionSpec,
    seed: u64,
    stats: &mut EvalStats,
) -> Result<OptimizeOutcome> {
    if families.is_empty() {
        return Err(Error::Optimization("decision space is empty".into()));
    }
    let current_h = frozen.current_h(spec.criterion);
    let score_of = |cost: f64, expected: f64| -> f64 {
        match spec.normalization {
            Normalization::None => cost * expected,
            Normalization::RelativeImprovement => {
                if current_h > 0.0 {
                    cost * expected / current_h
                } else {
                    cost * expected
                }
            }
        }
    };
    let mut evaluations = 0usize;
    let mut family_bests: Vec<Candidate> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for family in families {
        let best = match family {
            DecisionFamily::Finite { decisions } => {
                let mut best: Option<Candidate> = None;
                for d in decisions {
                    let expected =
                        expected_residual(graph, d, frozen, spec.criterion, stats)?;
                    evaluations += 1;
                    let cand = Candidate {
                        decision: d.clone(),
                        expected,
                        score: score_of(d.cost, expected),
                    };
                    if cand.score.is_finite()
                        && best.as_ref().map_or(true, |b| cand.score < b.score)
                    {
                        best = Some(cand);
                    }
                }
                best
            }
            DecisionFamily::Continuous {
                name,
                target,
                noise_sd,
                cost,
            } => {
                let (starts, steps) = continuous_starts(
                    graph,
                    frozen,
                    *target,
                    spec.multistarts,
                    &mut rng,
                )?;
                let mut best: Option<Candidate> = None;
                for start in starts {
                    let mut point = start;
                    let make = |input: &[f64]| Decision {
                        target: *target,
                        input: input.to_vec(),
                        noise_sd: *noise_sd,
                        cost: *cost,
                        family: name.clone(),
                    };
                    let mut value = expected_residual(
                        graph,
                        &make(&point),
                        frozen,
                        spec.criterion,
                        stats,
                    )?;
                    evaluations += 1;
                    let mut step = steps.clone();
                    for _ in 0..spec.halvings {
                        for dim in 0..point.len() {
                            for dir in [1.0, -1.0] {
                                let mut cand = point.clone();
                                cand[dim] += dir * step[dim];
                                let v = expected_residual(
                                    graph,
                                    &make(&cand),
                                    frozen,
                                    spec.criterion,
                                    stats,
                                )?;
                                evaluations += 1;
                                if v < value {
                                    value = v;
                                    point = cand;
                                }
                            }
                        }
                        for s in step.iter_mut() {
                            *s *= 0.5;
                        }
                    }
                    let cand = Candidate {
                        decision: make(&point),
                        expected: value,
                        score: score_of(*cost, value),
                    };
                    if cand.score.is_finite()
                        && best.as_ref().map_or(true, |b| cand.score < b.score)
                    {
                        best = Some(cand);
                    }
                }
                best
            }
        };
        if let Some(b) = best {
            family_bests.push(b);
        }
    }
    let best = family_bests
        .iter()
        .min_by(|a, b| a.score.partial_cmp(&b.score).unwrap_or(std::cmp::Ordering::Equal))
        .cloned()
        .ok_or_else(|| {
            Error::Optimization("no finite acquisition value over the decision space".into())
        })?;
    Ok(OptimizeOutcome {
        best,
        family_bests,
        evaluations,
    })
}

/// Multistart seeds for a continuous family: a random subset of the target
/// node's local inputs at the frozen samples, with per-dimension step sizes
/// at 10% of the observed spread.
fn continuous_starts(
    graph: &ModelGraph,
    frozen: &FrozenSamples,
    target: usize,
    multistarts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let e_pos = graph.e_index_of(target).ok_or_else(|| {
        Error::Optimization(format!("node {target} is not epistemic"))
    })?;
    let inputs: Vec<&Vec<f64>> = frozen
        .traces
        .iter()
        .map(|per_sigma| &per_sigma[0].epi[e_pos].input)
        .collect();
    if inputs.is_empty() {
        return Err(Error::Optimization(
            "no active samples to seed the decision search".into(),
        ));
    }
    let dim = inputs[0].len();
    let n = inputs.len();
    let mut mean = vec![0.0; dim];
    for inp in &inputs {
        for d in 0..dim {
            mean[d] += inp[d] / n as f64;
        }
    }
    let mut sd = vec![0.0; dim];
    for inp in &inputs {
        for d in 0..dim {
            sd[d] += (inp[d] - mean[d]).powi(2) / n as f64;
        }
    }
    let steps: Vec<f64> = sd
        .iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = v.sqrt();
            if s > 0.0 {
                0.1 * s
            } else {
                0.1 * (1.0 + m.abs())
            }
        })
        .collect();
    let k = multistarts.max(1).min(n);
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(k);
    if k == n {
        starts.extend(inputs.iter().map(|v| (*v).clone()));
    } else {
        for _ in 0..k {
            let idx = rng.random_range(0..n);
            starts.push(inputs[idx].clone());
        }
    }
    // nudge duplicated starts apart so coordinate descent explores
    for s in starts.iter_mut().skip(1) {
        for d in 0..dim {
            s[d] += 0.25 * steps[d] * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok((starts, steps))
}
