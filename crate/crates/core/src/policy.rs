//! Softmax-linear navigation policy.
//!
//! Each candidate action is scored by `w · features` and the scores are
//! normalized with a softmax. Because the score is linear, the gradient of a
//! log-probability is the chosen feature vector minus the expected feature
//! vector, and every objective built on top has a closed-form gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envgraph::{ActionCandidate, Features, FEATURE_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    pub w: Features,
    /// Incremented by every parameter update.
    pub version: u64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self::new([0.0; FEATURE_DIM])
    }
}

impl PolicyParams {
    pub fn new(w: Features) -> Self {
        PolicyParams { w, version: 0 }
    }

    pub fn score(&self, features: &Features) -> f64 {
        dot(&self.w, features)
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|x| x.is_finite())
    }
}

pub fn dot(a: &Features, b: &Features) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `acc += scale * v`
pub fn add_scaled(acc: &mut Features, v: &Features, scale: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

pub fn feature_matrix(cands: &[ActionCandidate]) -> Vec<Features> {
    cands.iter().map(|c| c.features).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    pub logprobs: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        assert!(!logits.is_empty(), "softmax over an empty candidate set");
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let logprobs: Vec<f64> = logits.iter().map(|l| l - lse).collect();
        let probs = logprobs.iter().map(|lp| lp.exp()).collect();
        ActionDistribution { probs, logprobs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability-weighted mean of the candidate features.
    pub fn mean_features(&self, features: &[Features]) -> Features {
        let mut mean = [0.0; FEATURE_DIM];
        for (p, f) in self.probs.iter().zip(features) {
            add_scaled(&mut mean, f, *p);
        }
        mean
    }
}

pub fn action_distribution(features: &[Features], params: &PolicyParams) -> ActionDistribution {
    let logits: Vec<f64> = features.iter().map(|f| params.score(f)).collect();
    ActionDistribution::from_logits(&logits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    Sample,
    Greedy,
    LeastProbable,
}

/// Picks an action index and returns it with its log-probability. Greedy and
/// least-probable break ties toward the lowest index.
pub fn select<R: Rng + ?Sized>(dist: &ActionDistribution, mode: SelectMode, rng: &mut R) -> (usize, f64) {
    let idx = match mode {
        SelectMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = dist.len() - 1;
            for (i, p) in dist.probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        }
        SelectMode::Greedy => extreme_index(&dist.logprobs, |a, b| a > b),
        SelectMode::LeastProbable => extreme_index(&dist.logprobs, |a, b| a < b),
    };
    (idx, dist.logprobs[idx])
}

fn extreme_index(values: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[best]) {
            best = i;
        }
    }
    best
}

/// Gradient of `log π(chosen)` with respect to the weights.
pub fn grad_logprob(features: &[Features], chosen: usize, params: &PolicyParams) -> Features {
    let dist = action_distribution(features, params);
    score_gradient(features, &dist, chosen)
}

pub(crate) fn score_gradient(features: &[Features], dist: &ActionDistribution, chosen: usize) -> Features {
    let mean = dist.mean_features(features);
    let mut g = features[chosen];
    add_scaled(&mut g, &mean, -1.0);
    g
}

/// Exact KL(p ‖ q) between two distributions over the same candidates.
pub fn kl_divergence(p: &ActionDistribution, q: &ActionDistribution) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions over different candidate sets");
    let kl: f64 = p
        .probs
        .iter()
        .zip(p.logprobs.iter().zip(&q.logprobs))
        .map(|(pi, (lp, lq))| pi * (lp - lq))
        .sum();
    kl.max(0.0)
}

/// Gradient of KL(π_w ‖ π_ref) with respect to `w`; the reference is fixed.
pub fn grad_kl(features: &[Features], params: &PolicyParams, reference: &PolicyParams) -> Features {
    let p = action_distribution(features, params);
    let q = action_distribution(features, reference);
    kl_gradient(features, &p, &q)
}

pub(crate) fn kl_gradient(features: &[Features], p: &ActionDistribution, q: &ActionDistribution) -> Features {
    // dKL/dw = Σ_i p_i (log p_i − log q_i) (f_i − f̄)
    let mean = p.mean_features(features);
    let mut g = [0.0; FEATURE_DIM];
    for i in 0..p.len() {
        let coef = p.probs[i] * (p.logprobs[i] - q.logprobs[i]);
        add_scaled(&mut g, &features[i], coef);
        add_scaled(&mut g, &mean, -coef);
    }
    g
}

/// Gradient-ascent step. Rejects non-finite gradients.
pub fn apply_update(params: &PolicyParams, grad: &Features, lr: f64) -> Result<PolicyParams> {
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    if !lr.is_finite() {
        return Err(Error::NonFinite("learning rate"));
    }
    let mut w = params.w;
    add_scaled(&mut w, grad, lr);
    Ok(PolicyParams { w, version: params.version + 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Sft,
    Rl,
}

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Serialized policy snapshot with its frozen reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub artifact_version: String,
    pub phase: Phase,
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(phase: Phase, params: PolicyParams, reference: PolicyParams, config: serde_json::Value) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT,
            artifact_version: crate::VERSION.to_string(),
            phase,
            params,
            reference,
            config,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Version { expected: CHECKPOINT_FORMAT, found: self.format_version });
        }
        if !self.params.is_finite() || !self.reference.is_finite() {
            return Err(Error::NonFinite("checkpoint weights"));
        }
        Ok(())
    }
}
