//! Hierarchical performance-function models.
//!
//! A `ModelGraph` is a DAG of scalar nodes: deterministic functions (registered
//! by name), Gaussian-process surrogate nodes, and unknown scalar parameters
//! with normal priors. Every epistemic node gets one coordinate of the
//! finite-dimensional standardized variable `E`; evaluating the graph at
//! `(x, e)` replaces each epistemic node by its two-moment representation
//! `mean + e_j * sd` and runs the deterministic nodes exactly. Within a node
//! all query points share the one coordinate, so they are treated as fully
//! correlated; distinct nodes get independent coordinates.
//!
//! Experiment updates are conjugate: surrogate targets are conditioned on the
//! new observation, normal parameters get the closed-form posterior. The
//! module also provides cached evaluation traces so that the sampling and
//! acquisition layers can re-evaluate the graph under hypothetical one-more-
//! observation updates without refactorizing anything.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpSurrogate, PointPosterior};
use crate::unscented::SigmaPointSet;

pub type DetFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Named deterministic node functions, so graphs can be declared in config
/// files and rebound after deserialization.
#[derive(Default, Clone)]
pub struct Registry {
    map: HashMap<String, DetFn>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn register<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.map.insert(name.to_string(), Arc::new(f));
    }

    pub fn get(&self, name: &str) -> Option<DetFn> {
        self.map.get(name).cloned()
    }
}

/// Where a node input comes from: an aleatory component or an earlier node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NodeInput {
    X(usize),
    Node(usize),
}

#[derive(Clone, Serialize, Deserialize)]
pub enum NodeKind {
    Deterministic {
        func_name: String,
        #[serde(skip)]
        func: Option<DetFn>,
    },
    Surrogate {
        gp: GpSurrogate,
        refit_min_obs: Option<usize>,
    },
    NormalParam {
        mean: f64,
        sd: f64,
    },
}

impl std::fmt::Debug for NodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeKind::Deterministic { func_name, .. } => {
                write!(f, "Deterministic({func_name})")
            }
            NodeKind::Surrogate { gp, .. } => write!(f, "Surrogate({} obs)", gp.n_obs()),
            NodeKind::NormalParam { mean, sd } => write!(f, "NormalParam({mean}, {sd})"),
        }
    }
}

impl PartialEq for NodeKind {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                NodeKind::Deterministic { func_name: a, .. },
                NodeKind::Deterministic { func_name: b, .. },
            ) => a == b,
            (
                NodeKind::Surrogate { gp: a, refit_min_obs: ra },
                NodeKind::Surrogate { gp: b, refit_min_obs: rb },
            ) => a == b && ra == rb,
            (
                NodeKind::NormalParam { mean: ma, sd: sa },
                NodeKind::NormalParam { mean: mb, sd: sb },
            ) => ma == mb && sa == sb,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub inputs: Vec<NodeInput>,
}

/// The choice of one experiment: which epistemic node to probe, at which
/// input (surrogates only), with what observation noise and cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub target: usize,
    pub input: Vec<f64>,
    pub noise_sd: f64,
    pub cost: f64,
    pub family: String,
}

/// A decision together with its realized outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub decision: Decision,
    pub outcome: f64,
}

/// Running counters for evaluation work and variance clamping.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalStats {
    pub xi_evals: u64,
    pub model_updates: u64,
    pub neg_var_clamps: u64,
    pub var_checks: u64,
}

impl EvalStats {
    pub fn merge(&mut self, other: &EvalStats) {
        self.xi_evals += other.xi_evals;
        self.model_updates += other.model_updates;
        self.neg_var_clamps += other.neg_var_clamps;
        self.var_checks += other.var_checks;
    }

    /// Records a UT variance value, clamping negatives to zero.
    pub fn clamp_var(&mut self, var: f64) -> f64 {
        self.var_checks += 1;
        if var < 0.0 {
            self.neg_var_clamps += 1;
            0.0
        } else {
            var
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    x_dim: usize,
    nodes: Vec<Node>,
    output: usize,
    /// Indices of epistemic nodes; position in this list is the node's
    /// coordinate in `E`.
    epi_nodes: Vec<usize>,
    /// Whether each node's value depends on `E`.
    value_e_dep: Vec<bool>,
    history: Vec<Experiment>,
}

/// Builds a graph, enforcing acyclicity by only allowing references to
/// already-added nodes.
pub struct GraphBuilder<'r> {
    registry: &'r Registry,
    x_dim: usize,
    nodes: Vec<Node>,
    ids: HashMap<String, usize>,
}

impl<'r> GraphBuilder<'r> {
    pub fn new(registry: &'r Registry, x_dim: usize) -> Self {
        GraphBuilder {
            registry,
            x_dim,
            nodes: Vec::new(),
            ids: HashMap::new(),
        }
    }

    fn check_inputs(&self, inputs: &[NodeInput]) -> Result<()> {
        for input in inputs {
            match *input {
                NodeInput::X(i) if i >= self.x_dim => {
                    return Err(Error::Graph(format!(
                        "input X({i}) out of range for x_dim {}",
                        self.x_dim
                    )));
                }
                NodeInput::Node(j) if j >= self.nodes.len() => {
                    return Err(Error::Graph(format!(
                        "input Node({j}) references a node that does not exist yet"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn push(&mut self, node: Node) -> Result<usize> {
        if self.ids.contains_key(&node.id) {
            return Err(Error::Graph(format!("duplicate node id '{}'", node.id)));
        }
        let idx = self.nodes.len();
        self.ids.insert(node.id.clone(), idx);
        self.nodes.push(node);
        Ok(idx)
    }

    pub fn deterministic(
        &mut self,
        id: &str,
        func_name: &str,
        inputs: Vec<NodeInput>,
    ) -> Result<usize> {
        self.check_inputs(&inputs)?;
        let func = self.registry.get(func_name).ok_or_else(|| {
            Error::Graph(format!("deterministic function '{func_name}' not registered"))
        })?;
        self.push(Node {
            id: id.to_string(),
            kind: NodeKind::Deterministic {
                func_name: func_name.to_string(),
                func: Some(func),
            },
            inputs,
        })
    }

    pub fn surrogate(
        &mut self,
        id: &str,
        gp: GpSurrogate,
        inputs: Vec<NodeInput>,
        refit_min_obs: Option<usize>,
    ) -> Result<usize> {
        self.check_inputs(&inputs)?;
        if gp.input_dim() != inputs.len() {
            return Err(Error::Graph(format!(
                "surrogate '{id}' kernel dimension {} does not match {} inputs",
                gp.input_dim(),
                inputs.len()
            )));
        }
        self.push(Node {
            id: id.to_string(),
            kind: NodeKind::Surrogate { gp, refit_min_obs },
            inputs,
        })
    }

    pub fn normal_param(&mut self, id: &str, mean: f64, sd: f64) -> Result<usize> {
        if !(sd >= 0.0) || !sd.is_finite() || !mean.is_finite() {
            return Err(Error::Graph(format!(
                "normal parameter '{id}' needs finite mean and sd >= 0"
            )));
        }
        self.push(Node {
            id: id.to_string(),
            kind: NodeKind::NormalParam { mean, sd },
            inputs: Vec::new(),
        })
    }

    /// Finishes the graph with `output` as the designated scalar output node.
    pub fn build(self, output: usize) -> Result<ModelGraph> {
        if output >= self.nodes.len() {
            return Err(Error::Graph("output node index out of range".into()));
        }
        let mut value_e_dep = vec![false; self.nodes.len()];
        let mut epi_nodes = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Deterministic { .. } => {
                    value_e_dep[i] = node.inputs.iter().any(|inp| match *inp {
                        NodeInput::Node(j) => value_e_dep[j],
                        NodeInput::X(_) => false,
                    });
                }
                _ => {
                    epi_nodes.push(i);
                    value_e_dep[i] = true;
                }
            }
        }
        Ok(ModelGraph {
            x_dim: self.x_dim,
            nodes: self.nodes,
            output,
            epi_nodes,
            value_e_dep,
            history: Vec::new(),
        })
    }
}

/// Epistemic-node moments at a specific local input, with the solve vector
/// needed for one-more-observation updates of surrogate nodes.
#[derive(Debug, Clone)]
pub struct EpiRecord {
    pub input: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub solve: Option<DVector<f64>>,
}

/// Cached per-sample trace at a fixed `(x, e)`: all node values plus the
/// epistemic records, enabling cheap re-evaluation under scenario updates.
#[derive(Debug, Clone)]
pub struct FrozenPoint {
    pub values: Vec<f64>,
    pub epi: Vec<EpiRecord>,
    pub xi: f64,
}

/// Moments of epistemic nodes whose local input does not depend on `E`,
/// cached once per sample and shared across sigma points.
#[derive(Debug, Clone)]
pub struct BaseTrace {
    cached: Vec<Option<(f64, f64)>>,
}

/// A hypothetical one-more-observation update of a single epistemic node.
#[derive(Debug, Clone)]
pub enum ScenarioUpdate {
    /// Rank-one Gaussian-process update: conditioning the current posterior
    /// on one observation at `input` with residual `resid = o - mean_k(input)`
    /// and denominator `var_k(input) + noise^2`.
    Gp {
        input: Vec<f64>,
        solve: DVector<f64>,
        resid: f64,
        denom: f64,
    },
    /// Replacement posterior for a normal parameter.
    Param { mean: f64, sd: f64 },
}

impl ModelGraph {
    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn history(&self) -> &[Experiment] {
        &self.history
    }

    pub fn epistemic_dim(&self) -> usize {
        self.epi_nodes.len()
    }

    pub fn epistemic_nodes(&self) -> &[usize] {
        &self.epi_nodes
    }

    /// Coordinate of a node in `E`, if it is epistemic.
    pub fn e_index_of(&self, node: usize) -> Option<usize> {
        self.epi_nodes.iter().position(|&n| n == node)
    }

    /// Sigma-point set for the graph's epistemic variable `E`.
    pub fn sigma_points_xi(&self) -> SigmaPointSet {
        sigma_points_for_dim(self.epistemic_dim())
    }

    /// Rebinds deterministic functions and rebuilds surrogate factorizations
    /// after deserialization.
    pub fn refresh(&mut self, registry: &Registry) -> Result<()> {
        for node in &mut self.nodes {
            match &mut node.kind {
                NodeKind::Deterministic { func_name, func } => {
                    *func = Some(registry.get(func_name).ok_or_else(|| {
                        Error::Graph(format!(
                            "deterministic function '{func_name}' not registered"
                        ))
                    })?);
                }
                NodeKind::Surrogate { gp, .. } => gp.ensure_factorized()?,
                NodeKind::NormalParam { .. } => {}
            }
        }
        Ok(())
    }

    fn gather_inputs(&self, node: &Node, x: &[f64], values: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        for input in &node.inputs {
            buf.push(match *input {
                NodeInput::X(i) => x[i],
                NodeInput::Node(j) => values[j],
            });
        }
    }

    fn node_moments(&self, idx: usize, input: &[f64]) -> (f64, f64) {
        match &self.nodes[idx].kind {
            NodeKind::Surrogate { gp, .. } => {
                let (mean, var) = gp.posterior_point(input);
                (mean, var.max(0.0).sqrt())
            }
            NodeKind::NormalParam { mean, sd } => (*mean, *sd),
            NodeKind::Deterministic { .. } => unreachable!("moments of deterministic node"),
        }
    }

    /// Evaluates the finite-dimensional approximation at `(x, e)`.
    pub fn eval_xi_hat(&self, x: &[f64], e: &[f64]) -> Result<f64> {
        self.eval_inner(x, e, None)
    }

    fn eval_inner(&self, x: &[f64], e: &[f64], base: Option<&BaseTrace>) -> Result<f64> {
        debug_assert_eq!(x.len(), self.x_dim);
        debug_assert_eq!(e.len(), self.epistemic_dim());
        let mut values = vec![0.0; self.nodes.len()];
        let mut buf = Vec::new();
        let mut e_pos = 0usize;
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.kind {
                NodeKind::Deterministic { func, func_name } => {
                    self.gather_inputs(node, x, &values, &mut buf);
                    let f = func.as_ref().ok_or_else(|| {
                        Error::Graph(format!("function '{func_name}' not bound; call refresh()"))
                    })?;
                    let v = f(&buf);
                    if !v.is_finite() {
                        return Err(Error::Evaluation {
                            node: node.id.clone(),
                            message: format!("non-finite value at inputs {buf:?}"),
                        });
                    }
                    values[i] = v;
                }
                _ => {
                    let (mean, sd) = match base.and_then(|b| b.cached[e_pos]) {
                        Some(ms) => ms,
                        None => {
                            self.gather_inputs(node, x, &values, &mut buf);
                            self.node_moments(i, &buf)
                        }
                    };
                    values[i] = mean + e[e_pos] * sd;
                    e_pos += 1;
                }
            }
        }
        Ok(values[self.output])
    }

    /// Precomputes moments of epistemic nodes whose inputs do not depend on
    /// `E`, so that repeated evaluations at the same `x` skip the surrogate
    /// queries.
    pub fn base_trace(&self, x: &[f64]) -> Result<BaseTrace> {
        let mut cached = vec![None; self.epistemic_dim()];
        let mut values = vec![0.0; self.nodes.len()];
        let mut buf = Vec::new();
        let mut e_pos = 0usize;
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.kind {
                NodeKind::Deterministic { func, func_name } => {
                    self.gather_inputs(node, x, &values, &mut buf);
                    let f = func.as_ref().ok_or_else(|| {
                        Error::Graph(format!("function '{func_name}' not bound; call refresh()"))
                    })?;
                    let v = f(&buf);
                    if !v.is_finite() {
                        return Err(Error::Evaluation {
                            node: node.id.clone(),
                            message: format!("non-finite value at inputs {buf:?}"),
                        });
                    }
                    values[i] = v;
                }
                _ => {
                    let input_e_dep = node.inputs.iter().any(|inp| match *inp {
                        NodeInput::Node(j) => self.value_e_dep[j],
                        NodeInput::X(_) => false,
                    });
                    self.gather_inputs(node, x, &values, &mut buf);
                    let (mean, sd) = self.node_moments(i, &buf);
                    if !input_e_dep {
                        cached[e_pos] = Some((mean, sd));
                    }
                    values[i] = mean; // e = 0 walk
                    e_pos += 1;
                }
            }
        }
        Ok(BaseTrace { cached })
    }

    /// Evaluates at `(x, e)` reusing a base trace built for the same `x`.
    pub fn eval_with_base(&self, x: &[f64], e: &[f64], base: &BaseTrace) -> Result<f64> {
        self.eval_inner(x, e, Some(base))
    }

    /// Full evaluation trace at `(x, e)`, with solve vectors on surrogate
    /// records for subsequent scenario re-evaluations.
    pub fn frozen_point(&self, x: &[f64], e: &[f64]) -> Result<FrozenPoint> {
        let mut values = vec![0.0; self.nodes.len()];
        let mut epi = Vec::with_capacity(self.epistemic_dim());
        let mut buf = Vec::new();
        let mut e_pos = 0usize;
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.kind {
                NodeKind::Deterministic { func, func_name } => {
                    self.gather_inputs(node, x, &values, &mut buf);
                    let f = func.as_ref().ok_or_else(|| {
                        Error::Graph(format!("function '{func_name}' not bound; call refresh()"))
                    })?;
                    let v = f(&buf);
                    if !v.is_finite() {
                        return Err(Error::Evaluation {
                            node: node.id.clone(),
                            message: format!("non-finite value at inputs {buf:?}"),
                        });
                    }
                    values[i] = v;
                }
                NodeKind::Surrogate { gp, .. } => {
                    self.gather_inputs(node, x, &values, &mut buf);
                    let post: PointPosterior = gp.posterior_point_full(&buf);
                    let sd = post.var.max(0.0).sqrt();
                    values[i] = post.mean + e[e_pos] * sd;
                    epi.push(EpiRecord {
                        input: buf.clone(),
                        mean: post.mean,
                        sd,
                        solve: Some(post.solve),
                    });
                    e_pos += 1;
                }
                NodeKind::NormalParam { mean, sd } => {
                    values[i] = mean + e[e_pos] * sd;
                    epi.push(EpiRecord {
                        input: Vec::new(),
                        mean: *mean,
                        sd: *sd,
                        solve: None,
                    });
                    e_pos += 1;
                }
            }
        }
        Ok(FrozenPoint {
            xi: values[self.output],
            values,
            epi,
        })
    }

    /// Marks `target` and all its descendants.
    pub fn descendants_mask(&self, target: usize) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        mask[target] = true;
        for i in (target + 1)..self.nodes.len() {
            mask[i] = mask[i]
                || self.nodes[i].inputs.iter().any(|inp| match *inp {
                    NodeInput::Node(j) => mask[j],
                    NodeInput::X(_) => false,
                });
        }
        mask
    }

    /// Re-evaluates a frozen point under a hypothetical update of `target`.
    ///
    /// Nodes outside the target's descendant set keep their frozen values;
    /// the target applies the scenario posterior; downstream epistemic nodes
    /// are re-queried at their (possibly shifted) inputs against the current,
    /// un-updated surrogates.
    pub fn eval_scenario(
        &self,
        x: &[f64],
        e: &[f64],
        frozen: &FrozenPoint,
        target: usize,
        affected: &[bool],
        update: &ScenarioUpdate,
        stats: &mut EvalStats,
    ) -> Result<f64> {
        stats.xi_evals += 1;
        let mut values = frozen.values.clone();
        let mut buf = Vec::new();
        let mut e_pos = self.e_index_before(target);
        for i in target..self.nodes.len() {
            if !affected[i] {
                if self.is_epistemic(i) {
                    e_pos += 1;
                }
                continue;
            }
            let node = &self.nodes[i];
            match &node.kind {
                NodeKind::Deterministic { func, func_name } => {
                    self.gather_inputs(node, x, &values, &mut buf);
                    let f = func.as_ref().ok_or_else(|| {
                        Error::Graph(format!("function '{func_name}' not bound; call refresh()"))
                    })?;
                    let v = f(&buf);
                    if !v.is_finite() {
                        return Err(Error::Evaluation {
                            node: node.id.clone(),
                            message: format!("non-finite value at inputs {buf:?}"),
                        });
                    }
                    values[i] = v;
                }
                _ if i == target => {
                    let rec = &frozen.epi[e_pos];
                    let (mean, sd) = scenario_moments(rec, update, node);
                    values[i] = mean + e[e_pos] * sd;
                    e_pos += 1;
                }
                _ => {
                    // epistemic node downstream of the target: its input may
                    // have shifted, so query the current posterior afresh
                    self.gather_inputs(node, x, &values, &mut buf);
                    let (mean, sd) = self.node_moments(i, &buf);
                    values[i] = mean + e[e_pos] * sd;
                    e_pos += 1;
                }
            }
        }
        Ok(values[self.output])
    }

    /// Evaluates all scenarios of one decision at a frozen point, sharing
    /// the posterior cross-covariance across scenarios (it depends on the
    /// decision input, not on the hypothetical outcome).
    #[allow(clippy::too_many_arguments)]
    pub fn eval_scenarios_at(
        &self,
        x: &[f64],
        e: &[f64],
        frozen: &FrozenPoint,
        target: usize,
        affected: &[bool],
        updates: &[ScenarioUpdate],
        out: &mut Vec<f64>,
        scratch: &mut Vec<f64>,
        stats: &mut EvalStats,
    ) -> Result<()> {
        out.clear();
        stats.xi_evals += updates.len() as u64;
        let target_e = self.e_index_before(target);
        let rec = &frozen.epi[target_e];
        // per-scenario target moments (variance shared for GP updates)
        let mut moments: Vec<(f64, f64)> = Vec::with_capacity(updates.len());
        match &updates[0] {
            ScenarioUpdate::Gp { input, solve, denom, .. } => {
                let gp = match &self.nodes[target].kind {
                    NodeKind::Surrogate { gp, .. } => gp,
                    _ => unreachable!(),
                };
                let scale = gp.kernel().variance();
                if *denom <= 1e-14 * scale {
                    for _ in updates {
                        moments.push((rec.mean, rec.sd));
                    }
                } else {
                    let rec_solve =
                        rec.solve.as_ref().expect("surrogate record has solve vector");
                    let cross = gp.kernel().matern52(&rec.input, input) - rec_solve.dot(solve);
                    let var = (rec.sd * rec.sd - cross * cross / denom).max(0.0);
                    let sd = var.sqrt();
                    for u in updates {
                        let resid = match u {
                            ScenarioUpdate::Gp { resid, .. } => *resid,
                            _ => unreachable!("mixed scenario kinds"),
                        };
                        moments.push((rec.mean + cross * resid / denom, sd));
                    }
                }
            }
            ScenarioUpdate::Param { .. } => {
                for u in updates {
                    match u {
                        ScenarioUpdate::Param { mean, sd } => moments.push((*mean, *sd)),
                        _ => unreachable!("mixed scenario kinds"),
                    }
                }
            }
        }
        for (mean, sd) in moments {
            scratch.clone_from(&frozen.values);
            scratch[target] = mean + e[target_e] * sd;
            let mut e_pos = target_e + 1;
            let mut buf = Vec::new();
            for i in (target + 1)..self.nodes.len() {
                if !affected[i] {
                    if self.is_epistemic(i) {
                        e_pos += 1;
                    }
                    continue;
                }
                let node = &self.nodes[i];
                match &node.kind {
                    NodeKind::Deterministic { func, func_name } => {
                        self.gather_inputs(node, x, scratch, &mut buf);
                        let f = func.as_ref().ok_or_else(|| {
                            Error::Graph(format!(
                                "function '{func_name}' not bound; call refresh()"
                            ))
                        })?;
                        let v = f(&buf);
                        if !v.is_finite() {
                            return Err(Error::Evaluation {
                                node: node.id.clone(),
                                message: format!("non-finite value at inputs {buf:?}"),
                            });
                        }
                        scratch[i] = v;
                    }
                    _ => {
                        self.gather_inputs(node, x, scratch, &mut buf);
                        let (m2, s2) = self.node_moments(i, &buf);
                        scratch[i] = m2 + e[e_pos] * s2;
                        e_pos += 1;
                    }
                }
            }
            out.push(scratch[self.output]);
        }
        Ok(())
    }

    fn is_epistemic(&self, idx: usize) -> bool {
        !matches!(self.nodes[idx].kind, NodeKind::Deterministic { .. })
    }

    fn e_index_before(&self, node: usize) -> usize {
        self.epi_nodes.iter().take_while(|&&n| n < node).count()
    }

    /// Predictive outcome model: the target node's two-moment value at the
    /// decision input plus the decision's dedicated noise coordinate.
    ///
    /// `e_delta[0]` drives the target's epistemic coordinate, `e_delta[1]`
    /// the observation noise.
    pub fn predictive_outcome(&self, decision: &Decision, e_delta: &[f64]) -> Result<f64> {
        self.validate_decision(decision)?;
        debug_assert_eq!(e_delta.len(), 2);
        let (mean, sd) = self.target_moments(decision)?;
        Ok(mean + e_delta[0] * sd + e_delta[1] * decision.noise_sd)
    }

    /// Sigma points for the decision's outcome variable (target coordinate
    /// plus one noise coordinate).
    pub fn sigma_points_delta(&self) -> SigmaPointSet {
        SigmaPointSet::for_dim(2)
    }

    pub fn validate_decision(&self, decision: &Decision) -> Result<()> {
        if decision.target >= self.nodes.len() {
            return Err(Error::Graph(format!(
                "decision target {} out of range",
                decision.target
            )));
        }
        match &self.nodes[decision.target].kind {
            NodeKind::Deterministic { .. } => Err(Error::Graph(format!(
                "decision target '{}' is deterministic",
                self.nodes[decision.target].id
            ))),
            NodeKind::Surrogate { gp, .. } => {
                if decision.input.len() != gp.input_dim() {
                    return Err(Error::Graph(format!(
                        "decision input dimension {} does not match surrogate dimension {}",
                        decision.input.len(),
                        gp.input_dim()
                    )));
                }
                Ok(())
            }
            NodeKind::NormalParam { .. } => {
                if !decision.input.is_empty() {
                    return Err(Error::Graph("parameter observations take no input".into()));
                }
                Ok(())
            }
        }
    }

    /// Applies an experiment: conditions the surrogate or performs the
    /// conjugate normal update, returning the new graph with the experiment
    /// appended to its history.
    pub fn update(&self, experiment: Experiment) -> Result<ModelGraph> {
        self.validate_decision(&experiment.decision)?;
        if !experiment.outcome.is_finite() {
            return Err(Error::Parameter("experiment outcome must be finite".into()));
        }
        let mut next = self.clone();
        let target = experiment.decision.target;
        match &mut next.nodes[target].kind {
            NodeKind::Surrogate { gp, .. } => {
                *gp = gp.condition_with_noise(
                    experiment.decision.input.clone(),
                    experiment.outcome,
                    experiment.decision.noise_sd,
                )?;
            }
            NodeKind::NormalParam { mean, sd } => {
                let (m1, s1) = conjugate_normal_update(
                    *mean,
                    *sd,
                    experiment.outcome,
                    experiment.decision.noise_sd,
                );
                *mean = m1;
                *sd = s1;
            }
            NodeKind::Deterministic { .. } => unreachable!(),
        }
        next.history.push(experiment);
        Ok(next)
    }

    /// Maximum-likelihood refit of the surrogate at `node`, if it has a refit
    /// policy and enough observations. Returns whether a refit happened.
    pub fn refit_node(&mut self, node: usize, seed: u64) -> bool {
        if let NodeKind::Surrogate { gp, refit_min_obs } = &mut self.nodes[node].kind {
            if let Some(min_obs) = *refit_min_obs {
                let (new_gp, report) = gp.refit_hyperparameters(min_obs, seed);
                *gp = new_gp;
                return report.refitted;
            }
        }
        false
    }

    /// Access to a surrogate node's process.
    pub fn surrogate(&self, node: usize) -> Option<&GpSurrogate> {
        match &self.nodes[node].kind {
            NodeKind::Surrogate { gp, .. } => Some(gp),
            _ => None,
        }
    }

    /// Current `(mean, sd)` of an epistemic node at a decision input.
    pub fn target_moments(&self, decision: &Decision) -> Result<(f64, f64)> {
        self.validate_decision(decision)?;
        Ok(match &self.nodes[decision.target].kind {
            NodeKind::Surrogate { gp, .. } => {
                let (mean, var) = gp.posterior_point(&decision.input);
                (mean, var.max(0.0).sqrt())
            }
            NodeKind::NormalParam { mean, sd } => (*mean, *sd),
            NodeKind::Deterministic { .. } => unreachable!(),
        })
    }

    /// Builds the scenario update object for conditioning `decision.target`
    /// on a hypothetical outcome.
    pub fn scenario_update(&self, decision: &Decision, outcome: f64) -> Result<ScenarioUpdate> {
        self.validate_decision(decision)?;
        Ok(match &self.nodes[decision.target].kind {
            NodeKind::Surrogate { gp, .. } => {
                let post: PointPosterior = gp.posterior_point_full(&decision.input);
                let denom = post.var + decision.noise_sd * decision.noise_sd;
                ScenarioUpdate::Gp {
                    input: decision.input.clone(),
                    solve: post.solve,
                    resid: outcome - post.mean,
                    denom,
                }
            }
            NodeKind::NormalParam { mean, sd } => {
                let (m1, s1) = conjugate_normal_update(*mean, *sd, outcome, decision.noise_sd);
                ScenarioUpdate::Param { mean: m1, sd: s1 }
            }
            NodeKind::Deterministic { .. } => unreachable!(),
        })
    }
}

/// Posterior `(mean, sd)` of a normal prior after one observation with noise.
pub fn conjugate_normal_update(mean0: f64, sd0: f64, obs: f64, noise_sd: f64) -> (f64, f64) {
    if sd0 == 0.0 {
        // degenerate prior: the parameter is known
        return (mean0, 0.0);
    }
    if noise_sd == 0.0 {
        // exact observation collapses the posterior
        return (obs, 0.0);
    }
    let prec0 = 1.0 / (sd0 * sd0);
    let precn = 1.0 / (noise_sd * noise_sd);
    let var1 = 1.0 / (prec0 + precn);
    let mean1 = var1 * (mean0 * prec0 + obs * precn);
    (mean1, var1.sqrt())
}

/// Scenario `(mean, sd)` of the target node at a frozen record.
fn scenario_moments(rec: &EpiRecord, update: &ScenarioUpdate, node: &Node) -> (f64, f64) {
    match update {
        ScenarioUpdate::Param { mean, sd } => (*mean, *sd),
        ScenarioUpdate::Gp {
            input,
            solve,
            resid,
            denom,
        } => {
            let gp = match &node.kind {
                NodeKind::Surrogate { gp, .. } => gp,
                _ => unreachable!("GP scenario on non-surrogate node"),
            };
            let scale = gp.kernel().variance();
            if *denom <= 1e-14 * scale {
                // conditioning where the model is already certain: no-op
                return (rec.mean, rec.sd);
            }
            let rec_solve = rec.solve.as_ref().expect("surrogate record has solve vector");
            let cross = gp.kernel().matern52(&rec.input, input) - rec_solve.dot(solve);
            let mean = rec.mean + cross * resid / denom;
            let var = rec.sd * rec.sd - cross * cross / denom;
            (mean, var.max(0.0).sqrt())
        }
    }
}

/// Sigma points for a standardized epistemic variable of dimension `dim`;
/// the zero-dimensional case degenerates to a single unit-weight point.
pub fn sigma_points_for_dim(dim: usize) -> SigmaPointSet {
    if dim == 0 {
        SigmaPointSet::degenerate()
    } else {
        SigmaPointSet::for_dim(dim)
    }
}
