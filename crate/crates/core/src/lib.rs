//! Sequential Bayesian experimental design for structural reliability analysis.
//!
//! This crate estimates failure probabilities `P(g(X) <= 0)` for performance
//! functions `g` that are expensive to evaluate, by maintaining probabilistic
//! surrogates of `g` (or of its sub-components in a hierarchical model) and
//! selecting the next experiment to run with a myopic, cost-aware acquisition
//! rule. Epistemic uncertainty carried by the surrogates is propagated with an
//! unscented transform over a finite-dimensional representation, while aleatory
//! uncertainty over the inputs `X` is integrated with pruned importance
//! sampling around design points.
//!
//! The main pieces are:
//!
//! - [`probspace`]: marginal laws of the aleatory vector `X` and the
//!   isoprobabilistic transform to standard normal space.
//! - [`gp`]: Gaussian-process surrogates with a Matérn 5/2 kernel.
//! - [`model_graph`]: hierarchical performance models combining deterministic
//!   nodes with epistemic ones (surrogates, unknown scalar parameters).
//! - [`unscented`]: sigma-point sets and moment propagation.
//! - [`sampling`]: design-point search, mixture/hypercube proposals, weighted
//!   sample generation and pruning.
//! - [`estimators`]: pruned importance-sampling estimators of the failure
//!   probability and its residual-uncertainty measures, plus a double-loop
//!   Monte Carlo validation oracle.
//! - [`acquisition`]: expected next-step residual uncertainty per candidate
//!   decision, and the decision optimizer.
//! - [`session`]: the sequential design loop with stopping rules, run logs and
//!   snapshots.
//! - [`benchmarks`]: built-in reference problems with synthetic oracles and
//!   expected-result manifests.




pub mod acquisition;
pub mod error;
pub mod estimators;

pub mod gp;
pub mod model_graph;
pub mod probspace;
pub mod sampling;
pub mod session;


pub mod unscented;

pub use error::{Error, Result};

/// Derives a child RNG seed from a master seed and a label, so that separate
/// phases of a run consume independent, reproducible streams.
///
/// The mix is a splitmix64 chain over the label bytes and the iteration
/// index; adding a new labelled stream cannot perturb existing ones.
pub fn derive_seed(master: u64, label: &str, k: u64) -> u64 {
    let mut state = master ^ 0x9e37_79b9_7f4a_7c15;
    for &b in label.as_bytes() {
        state = splitmix64(state ^ u64::from(b));
    }
    splitmix64(state ^ k)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a 64-bit hash, used for snapshot integrity checks.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
