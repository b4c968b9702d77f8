//! The sequential design loop.
//!
//! Each iteration regenerates the importance-sample set for the current model
//! state, estimates the failure probability and its residual uncertainty,
//! checks the stopping rules, optimizes the acquisition over the decision
//! space, queries the oracle for the chosen experiment's outcome, and updates
//! the model. All randomness is drawn from per-phase streams derived from the
//! master seed and the iteration index, so runs are reproducible bit for bit
//! and can be paused, snapshotted and resumed without perturbing any draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    freeze_samples, optimize_decision, AcquisitionSpec, Criterion, DecisionFamily, Normalization,
};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::estimators::{DoubleLoopEstimate, ResidualUncertainty};
use crate::model_graph::{Decision, EvalStats, Experiment, ModelGraph, NodeKind, Registry};
use crate::probspace::RandomVector;
use crate::sampling::{build_proposal, generate_samples, hypercube_proposal, prune};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum Stopping {
    /// Stop when the coefficient of variation drops to `v_max`.
    Cov,
    /// Stop when the estimate separates from the target by `z` epistemic
    /// standard deviations.
    Target { alpha_target: f64, z: f64 },
    /// Stop on whichever of the two rules fires first.
    Either { alpha_target: f64, z: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    Mixture,
    Hypercube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub tau: f64,
    pub n0: usize,
    pub n: usize,
    pub k_max: usize,
    pub v_max: f64,
    pub criterion: Criterion,
    pub normalization: Normalization,
    pub stopping: Stopping,
    pub seed: u64,
    pub proposal: ProposalKind,
    pub restarts: usize,
    pub p_min: f64,
    pub multistarts: usize,
    pub halvings: usize,
    pub conservative_tails: bool,
    /// Run a double-loop Monte Carlo validation on the final state.
    pub final_double_loop: Option<(usize, usize)>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            tau: 3.0,
            n0: 10_000,
            n: 1_000,
            k_max: 100,
            v_max: 0.05,
            criterion: Criterion::H1,
            normalization: Normalization::None,
            stopping: Stopping::Cov,
            seed: 0,
            proposal: ProposalKind::Mixture,
            restarts: 4,
            p_min: 1e-4,
            multistarts: 64,
            halvings: 20,
            conservative_tails: false,
            final_double_loop: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > std::f64::consts::SQRT_2) {
            return Err(Error::Parameter("tau must exceed sqrt(2)".into()));
        }
        if self.n == 0 || self.n > self.n0 {
            return Err(Error::Parameter(format!(
                "need 0 < n <= n0, got n = {}, n0 = {}",
                self.n, self.n0
            )));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::Parameter("v_max must be positive".into()));
        }
        if !(self.p_min > 0.0 && self.p_min < 0.5) {
            return Err(Error::Parameter("p_min must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    fn acquisition_spec(&self) -> AcquisitionSpec {
        AcquisitionSpec {
            criterion: self.criterion,
            normalization: self.normalization,
            multistarts: self.multistarts,
            halvings: self.halvings,
        }
    }
}

/// Why a session ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    BelowTarget,
    AboveTarget,
    MaxIterations,
    Aborted { message: String },
}

impl StopReason {
    pub fn label(&self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::BelowTarget => "below_target",
            StopReason::AboveTarget => "above_target",
            StopReason::MaxIterations => "max_iterations",
            StopReason::Aborted { .. } => "aborted",
        }
    }
}

/// One loop-head record: the estimates for the current state, and the
/// decision/outcome appended when an experiment follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub alpha_mean: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub v_k: f64,
    pub n_tau: usize,
    pub proposal_fallback: bool,
    pub decision: Option<Decision>,
    pub outcome: Option<f64>,
    pub refit: bool,
    pub cost_cum: f64,
    pub stop: Option<String>,
}

/// The problem a session runs on.
pub struct Problem {
    pub graph0: ModelGraph,
    pub rv: RandomVector,
    pub families: Vec<DecisionFamily>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub config: SessionConfig,
    pub k: usize,
    pub graph: ModelGraph,
    pub estimates: Vec<IterationRecord>,
    pub stopped: Option<StopReason>,
    pub cost_cum: f64,
    pub stats: EvalStats,
    pub final_double_loop: Option<DoubleLoopEstimate>,
}

impl SessionState {
    pub fn new(config: SessionConfig, graph0: ModelGraph) -> SessionState {
        SessionState {
            config,
            k: 0,
            graph: graph0,
            estimates: Vec::new(),
            stopped: None,
            cost_cum: 0.0,
            stats: EvalStats::default(),
            final_double_loop: None,
        }
    }

    pub fn history(&self) -> &[Experiment] {
        self.graph.history()
    }

    /// Experiments per decision family, in family-name order.
    pub fn family_counts(&self) -> std::collections::BTreeMap<String, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for exp in self.history() {
            *counts.entry(exp.decision.family.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn last_estimate(&self) -> Option<&IterationRecord> {
        self.estimates.last()
    }

    /// Fraction of UT variance evaluations that needed clamping; the run
    /// summary flags rates above 1%.
    pub fn clamp_rate(&self) -> f64 {
        if self.stats.var_checks == 0 {
            0.0
        } else {
            self.stats.neg_var_clamps as f64 / self.stats.var_checks as f64
        }
    }
}

/// Applies the configured stopping rules to a head estimate.
pub fn check_stop(res: &ResidualUncertainty, config: &SessionConfig) -> Option<StopReason> {
    let cov_fires = res.v_k <= config.v_max;
    let target_fires = |alpha_target: f64, z: f64| -> Option<StopReason> {
        let spread = z * res.h1.max(0.0).sqrt();
        if res.alpha_mean + spread < alpha_target {
            Some(StopReason::BelowTarget)
        } else if res.alpha_mean - spread > alpha_target {
            Some(StopReason::AboveTarget)
        } else {
            None
        }
    };
    match config.stopping {
        Stopping::Cov => cov_fires.then_some(StopReason::Converged),
        Stopping::Target { alpha_target, z } => target_fires(alpha_target, z),
        Stopping::Either { alpha_target, z } => {
            if cov_fires {
                Some(StopReason::Converged)
            } else {
                target_fires(alpha_target, z)
            }
        }
    }
}

/// Runs a session to completion.
pub fn run<F>(config: SessionConfig, problem: &Problem, oracle: &mut F) -> Result<SessionState>
where
    F: FnMut(&Decision, &mut ChaCha8Rng) -> Result<f64>,
{
    config.validate()?;
    let state = SessionState::new(config, problem.graph0.clone());
    resume(state, problem, oracle, None)
}

/// Continues a (possibly restored) session. With `pause_after_k` the loop
/// halts before the head of iteration `pause_after_k` without marking the
/// session stopped, so it can be snapshotted and resumed later.
pub fn resume<F>(
    mut state: SessionState,
    problem: &Problem,
    oracle: &mut F,
    pause_after_k: Option<usize>,
) -> Result<SessionState>
where
    F: FnMut(&Decision, &mut ChaCha8Rng) -> Result<f64>,
{
    state.config.validate()?;
    if state.stopped.is_some() {
        return Ok(state);
    }
    let config = state.config.clone();
    let seed = config.seed;
    let spec = config.acquisition_spec();
    while state.k < config.k_max {
        if let Some(pause) = pause_after_k {
            if state.k >= pause {
                return Ok(state);
            }
        }
        let k = state.k;
        let head = head_estimate(&state.graph, problem, &config, k, &mut state.stats)?;
        let (mut record, frozen) = head;
        record.cost_cum = state.cost_cum;
        if let Some(reason) = check_stop(&frozen.current, &config) {
            record.stop = Some(reason.label().to_string());
            state.estimates.push(record);
            state.stopped = Some(reason);
            return finalize(state, problem);
        }
        let outcome = optimize_decision(
            &state.graph,
            &problem.families,
            &frozen,
            &spec,
            derive_seed(seed, "acquisition", k as u64),
            &mut state.stats,
        )?;
        let decision = outcome.best.decision.clone();
        let mut oracle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "oracle", k as u64));
        let observed = match oracle(&decision, &mut oracle_rng) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                return abort(state, record, format!("oracle returned non-finite value {v}"))
            }
            Err(e) => return abort(state, record, format!("oracle failed: {e}")),
        };
        state.graph = state.graph.update(Experiment {
            decision: decision.clone(),
            outcome: observed,
        })?;
        let refit = state
            .graph
            .refit_node(decision.target, derive_seed(seed, "refit", k as u64));
        state.cost_cum += decision.cost;
        record.decision = Some(decision);
        record.outcome = Some(observed);
        record.refit = refit;
        record.cost_cum = state.cost_cum;
        state.estimates.push(record);
        state.k += 1;
    }
    // budget exhausted: record the final state's estimates
    let (mut record, frozen) = head_estimate(
        &state.graph,
        problem,
        &config,
        state.k,
        &mut state.stats,
    )?;
    record.cost_cum = state.cost_cum;
    let reason = check_stop(&frozen.current, &config).unwrap_or(StopReason::MaxIterations);
    record.stop = Some(reason.label().to_string());
    state.estimates.push(record);
    state.stopped = Some(reason);
    finalize(state, problem)
}

fn abort(
    mut state: SessionState,
    mut record: IterationRecord,
    message: String,
) -> Result<SessionState> {
    record.stop = Some("aborted".into());
    state.estimates.push(record);
    state.stopped = Some(StopReason::Aborted { message });
    Ok(state)
}

fn finalize(mut state: SessionState, problem: &Problem) -> Result<SessionState> {
    if let Some((n1, n2)) = state.config.final_double_loop {
        let seed = derive_seed(state.config.seed, "final-double-loop", state.k as u64);
        state.final_double_loop = Some(crate::estimators::double_loop_mc(
            &state.graph,
            &problem.rv,
            n1,
            n2,
            seed,
        )?);
    }
    Ok(state)
}

/// One loop head: regenerate samples, estimate, and freeze traces for the
/// acquisition step.
fn head_estimate(
    graph: &ModelGraph,
    problem: &Problem,
    config: &SessionConfig,
    k: usize,
    stats: &mut EvalStats,
) -> Result<(IterationRecord, crate::acquisition::FrozenSamples)> {
    let sigma_xi = graph.sigma_points_xi();
    let (proposal, fallback) = match config.proposal {
        ProposalKind::Mixture => {
            let (p, report) = build_proposal(
                graph,
                &problem.rv,
                &sigma_xi,
                config.restarts,
                config.p_min,
                derive_seed(config.seed, "proposal", k as u64),
            )?;
            (p, report.fallback)
        }
        ProposalKind::Hypercube => (hypercube_proposal(problem.rv.dim(), config.p_min)?, false),
    };
    let set = generate_samples(
        graph,
        &problem.rv,
        &proposal,
        config.n0,
        &sigma_xi,
        derive_seed(config.seed, "samples", k as u64),
        stats,
    )?;
    let pr = prune(&set.samples, config.tau)?;
    let frozen = freeze_samples(graph, &set, &pr, config.n, config.tau, stats)?;
    let res = frozen.current;
    let record = IterationRecord {
        k,
        alpha_mean: res.alpha_mean,
        h1: res.h1,
        h2: res.h2,
        h3: res.h3,
        v_k: res.v_k,
        n_tau: pr.kept.len(),
        proposal_fallback: fallback,
        decision: None,
        outcome: None,
        refit: false,
        cost_cum: 0.0,
        stop: None,
    };
    Ok((record, frozen))
}

/// Serializes a session state with format version and integrity checksum.
pub fn snapshot(state: &SessionState) -> Result<Vec<u8>> {
    let payload = serde_json::to_string(state)?;
    let checksum = format!("{:016x}", crate::fnv1a64(payload.as_bytes()));
    let wrapper = format!(
        "{{\"format_version\":{SNAPSHOT_FORMAT_VERSION},\"checksum\":\"{checksum}\",\"state\":{payload}}}"
    );
    Ok(wrapper.into_bytes())
}

#[derive(Deserialize)]
struct SnapshotWrapper<'a> {
    format_version: u32,
    checksum: String,
    #[serde(borrow)]
    state: &'a serde_json::value::RawValue,
}

/// Restores a session state, verifying version and checksum and rebinding
/// the graph against `registry`.
pub fn restore(bytes: &[u8], registry: &Registry) -> Result<SessionState> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Snapshot(format!("not valid UTF-8: {e}")))?;
    let wrapper: SnapshotWrapper =
        serde_json::from_str(text).map_err(|e| Error::Snapshot(format!("malformed: {e}")))?;
    if wrapper.format_version != SNAPSHOT_FORMAT_VERSION {
        return Err(Error::Snapshot(format!(
            "format version {} is not supported (expected {SNAPSHOT_FORMAT_VERSION})",
            wrapper.format_version
        )));
    }
    let payload = wrapper.state.get();
    let checksum = format!("{:016x}", crate::fnv1a64(payload.as_bytes()));
    if checksum != wrapper.checksum {
        return Err(Error::Snapshot(format!(
            "checksum mismatch: stored {}, computed {checksum}",
            wrapper.checksum
        )));
    }
    let mut state: SessionState =
        serde_json::from_str(payload).map_err(|e| Error::Snapshot(format!("bad state: {e}")))?;
    state.graph.refresh(registry)?;
    Ok(state)
}

/// Validates that an epistemic node exists for every decision family.
pub fn validate_problem(problem: &Problem) -> Result<()> {
    for family in &problem.families {
        match family {
            DecisionFamily::Continuous { target, .. } => {
                match problem.graph0.nodes().get(*target).map(|n| &n.kind) {
                    Some(NodeKind::Surrogate { .. }) => {}
                    _ => {
                        return Err(Error::Config(format!(
                            "continuous family target {target} is not a surrogate node"
                        )))
                    }
                }
            }
            DecisionFamily::Finite { decisions } => {
                for d in decisions {
                    problem.graph0.validate_decision(d)?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpSurrogate, Kernel};
    use crate::model_graph::{GraphBuilder, NodeInput};
    use crate::probspace::Marginal;

    fn param_problem(noise_sd: f64) -> (Problem, Registry) {
        let mut reg = Registry::new();
        reg.register("sub", |v: &[f64]| v[0] - v[1]);
        let mut b = GraphBuilder::new(&reg, 1);
        let p = b.normal_param("p", -1.0, 0.8).unwrap();
        let out = b
            .deterministic("g", "sub", vec![NodeInput::X(0), NodeInput::Node(p)])
            .unwrap();
        let graph0 = b.build(out).unwrap();
        let rv = RandomVector::new(vec![Marginal::normal(0.0, 1.0)]).unwrap();
        let families = vec![DecisionFamily::Finite {
            decisions: vec![Decision {
                target: p,
                input: vec![],
                noise_sd,
                cost: 1.0,
                family: "observe-p".into(),
            }],
        }];
        (
            Problem {
                graph0,
                rv,
                families,
            },
            reg,
        )
    }

    fn quick_config(seed: u64) -> SessionConfig {
        SessionConfig {
            n0: 2000,
            n: 300,
            k_max: 10,
            seed,
            restarts: 2,
            multistarts: 4,
            halvings: 6,
            ..Default::default()
        }
    }

    /// Truth: p = -1.3; observations have the decision's noise.
    fn param_oracle(truth: f64) -> impl FnMut(&Decision, &mut ChaCha8Rng) -> Result<f64> {
        move |d: &Decision, rng: &mut ChaCha8Rng| {
            use rand::Rng;
            Ok(truth + d.noise_sd * rng.sample::<f64, _>(rand_distr::StandardNormal))
        }
    }

    #[test]
    fn session_converges_on_simple_param_problem() {
        let (problem, _reg) = param_problem(0.3);
        let config = quick_config(5);
        let mut oracle = param_oracle(-1.3);
        let state = run(config, &problem, &mut oracle).unwrap();
        assert_eq!(state.stopped, Some(StopReason::Converged));
        // g = x - p with p known exactly gives alpha = P(X <= p)
        let last = state.last_estimate().unwrap();
        let expect = crate::probspace::std_normal_cdf(-1.3);
        assert!(
            (last.alpha_mean - expect).abs() < 0.3 * expect,
            "alpha {} vs {expect}",
            last.alpha_mean
        );
        assert!(last.v_k <= state.config.v_max);
        // estimates cover every loop head including the stopping one
        assert_eq!(state.estimates.len(), state.k + 1);
        assert_eq!(state.history().len(), state.k);
    }

    #[test]
    fn loop_contract_runs_exactly_k_max_experiments() {
        let (problem, _reg) = param_problem(0.5);
        let mut config = quick_config(7);
        config.k_max = 5;
        config.v_max = 1e-300; // unreachable: the cov rule never fires
        let mut oracle = param_oracle(-1.0);
        let state = run(config, &problem, &mut oracle).unwrap();
        assert_eq!(state.history().len(), 5);
        assert_eq!(state.stopped, Some(StopReason::MaxIterations));
        assert_eq!(state.estimates.len(), 6);
        // each iteration appended exactly one experiment and its cost
        assert!((state.cost_cum - 5.0).abs() < 1e-12);
    }

    #[test]
    fn check_stop_reference_cases() {
        let mk = |alpha: f64, h1: f64| ResidualUncertainty {
            alpha_mean: alpha,
            h1,
            h2: 0.0,
            h3: 0.0,
            v_k: crate::estimators::coefficient_of_variation(alpha, h1),
        };
        let mut config = SessionConfig {
            stopping: Stopping::Target {
                alpha_target: 1e-3,
                z: 4.0,
            },
            ..Default::default()
        };
        // 5e-4 + 4e-4 < 1e-3: below target
        assert_eq!(
            check_stop(&mk(5e-4, 1e-8), &config),
            Some(StopReason::BelowTarget)
        );
        // symmetric case above target
        assert_eq!(
            check_stop(&mk(2e-3, 1e-8), &config),
            Some(StopReason::AboveTarget)
        );
        assert_eq!(check_stop(&mk(1e-3, 1e-8), &config), None);
        config.stopping = Stopping::Cov;
        config.v_max = 0.05;
        assert_eq!(
            check_stop(&mk(1.0, 0.049f64.powi(2)), &config),
            Some(StopReason::Converged)
        );
        assert_eq!(check_stop(&mk(1.0, 0.051f64.powi(2)), &config), None);
    }

    #[test]
    fn runs_are_deterministic_given_seed() {
        let (problem, _reg) = param_problem(0.4);
        let mut o1 = param_oracle(-1.2);
        let mut o2 = param_oracle(-1.2);
        let s1 = run(quick_config(11), &problem, &mut o1).unwrap();
        let s2 = run(quick_config(11), &problem, &mut o2).unwrap();
        assert_eq!(
            serde_json::to_string(&s1).unwrap(),
            serde_json::to_string(&s2).unwrap()
        );
        let mut o3 = param_oracle(-1.2);
        let s3 = run(quick_config(12), &problem, &mut o3).unwrap();
        assert_ne!(
            serde_json::to_string(&s1).unwrap(),
            serde_json::to_string(&s3).unwrap()
        );
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let (problem, reg) = param_problem(0.4);
        let mut oracle = param_oracle(-1.2);
        let state = run(quick_config(13), &problem, &mut oracle).unwrap();
        let bytes = snapshot(&state).unwrap();
        let restored = restore(&bytes, &reg).unwrap();
        let bytes2 = snapshot(&restored).unwrap();
        assert_eq!(bytes, bytes2);
        // flip one digit inside the payload: checksum must catch it
        let text = String::from_utf8(bytes.clone()).unwrap();
        let corrupted = text.replacen("\"k\":", "\"k\": ", 1);
        if corrupted != text {
            let err = restore(corrupted.as_bytes(), &reg).unwrap_err();
            assert!(matches!(err, Error::Snapshot(_)), "{err:?}");
        }
        // version mismatch is explicit
        let wrong = text.replacen(
            &format!("\"format_version\":{SNAPSHOT_FORMAT_VERSION}"),
            "\"format_version\":99",
            1,
        );
        let err = restore(wrong.as_bytes(), &reg).unwrap_err();
        assert!(matches!(err, Error::Snapshot(_)));
    }

    #[test]
    fn pause_resume_matches_uninterrupted_run() {
        let (problem, reg) = param_problem(0.4);
        let mut o1 = param_oracle(-1.2);
        let full = run(quick_config(17), &problem, &mut o1).unwrap();

        let mut o2 = param_oracle(-1.2);
        let state0 = SessionState::new(quick_config(17), problem.graph0.clone());
        let paused = resume(state0, &problem, &mut o2, Some(1)).unwrap();
        assert_eq!(paused.k, 1);
        assert!(paused.stopped.is_none());
        let bytes = snapshot(&paused).unwrap();
        let restored = restore(&bytes, &reg).unwrap();
        let mut o3 = param_oracle(-1.2);
        let resumed = resume(restored, &problem, &mut o3, None).unwrap();
        assert_eq!(
            serde_json::to_string(&full).unwrap(),
            serde_json::to_string(&resumed).unwrap()
        );
    }

    #[test]
    fn oracle_failure_aborts_with_state_preserved() {
        let (problem, _reg) = param_problem(0.4);
        let mut calls = 0usize;
        let mut oracle = move |_d: &Decision, _rng: &mut ChaCha8Rng| -> Result<f64> {
            calls += 1;
            if calls >= 3 {
                Err(Error::Oracle("instrument offline".into()))
            } else {
                Ok(-1.0)
            }
        };
        let mut config = quick_config(19);
        config.v_max = 1e-300;
        config.k_max = 8;
        let state = run(config, &problem, &mut oracle).unwrap();
        match &state.stopped {
            Some(StopReason::Aborted { message }) => {
                assert!(message.contains("instrument offline"))
            }
            other => panic!("expected abort, got {other:?}"),
        }
        assert_eq!(state.history().len(), 2);
        assert_eq!(state.estimates.len(), 3);
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad_tau = SessionConfig {
            tau: 1.0,
            ..Default::default()
        };
        assert!(bad_tau.validate().is_err());
        let bad_n = SessionConfig {
            n: 0,
            ..Default::default()
        };
        assert!(bad_n.validate().is_err());
        let bad_n2 = SessionConfig {
            n: 20_000,
            ..Default::default()
        };
        assert!(bad_n2.validate().is_err());
    }

    #[test]
    fn gp_problem_session_smoke() {
        // 1-d GP surrogate of a known function, continuous decisions
        let reg = Registry::new();
        let truth = |x: f64| 1.0 - (0.3 * x + 0.1 * x * x + (-(x - 1.0).powi(2)).exp());
        let gp = GpSurrogate::new(-0.5, Kernel::isotropic(0.5, 0.8, 1).unwrap(), 0.0)
            .unwrap()
            .condition(vec![0.0], truth(0.0))
            .unwrap();
        let mut b = GraphBuilder::new(&reg, 1);
        let node = b.surrogate("g", gp, vec![NodeInput::X(0)], None).unwrap();
        let graph0 = b.build(node).unwrap();
        let problem = Problem {
            graph0,
            rv: RandomVector::new(vec![Marginal::normal(0.0, 1.0)]).unwrap(),
            families: vec![DecisionFamily::Continuous {
                name: "evaluate-g".into(),
                target: node,
                noise_sd: 0.0,
                cost: 1.0,
            }],
        };
        let mut oracle = |d: &Decision, _rng: &mut ChaCha8Rng| Ok(truth(d.input[0]));
        let mut config = quick_config(23);
        config.k_max = 12;
        config.criterion = Criterion::H3;
        let state = run(config, &problem, &mut oracle).unwrap();
        assert!(state.stopped.is_some());
        // the surrogate has absorbed every experiment outcome exactly
        for exp in state.history() {
            let (mean, _) = state.graph.surrogate(node).unwrap().posterior_point(&exp.decision.input);
            assert!((mean - exp.outcome).abs() < 1e-6);
        }
    }
}
