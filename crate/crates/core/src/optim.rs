//! Group-relative policy optimization objectives.
//!
//! Every objective here is evaluated on stored rollouts and returns its exact
//! gradient with respect to the policy weights. Advantages and progress
//! coefficients are constants under differentiation; a clipped branch
//! contributes no gradient.
//!
//! | variant            | advantage                | aggregation                          |
//! |--------------------|--------------------------|--------------------------------------|
//! | `drgrpo`           | `r − mean`               | `1/K Σ_k Σ_t` clipped γÂρ − β·KL     |
//! | `grpo`             | `(r − mean)/std`         | `1/K Σ_k 1/|τ_k| Σ_t` (same terms)   |
//! | `gspo`             | `(r − mean)/std`         | sequence ratio, trajectory clip      |
//! | `gmpo`             | `(r − mean)/std`         | geometric mean of token terms        |
//! | `reinforce_nogroup`| `r − batch mean`         | `1/K Σ_k Σ_t Â log π`                |

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgraph::{EpisodeSpec, Features, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::policy::{self, action_distribution, add_scaled, PolicyParams};
use crate::reward::{advantage_sign, progress_coefficient, trajectory_reward, RewardConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Drgrpo,
    Grpo,
    Gspo,
    Gmpo,
    ReinforceNogroup,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Drgrpo,
        Variant::Grpo,
        Variant::Gspo,
        Variant::Gmpo,
        Variant::ReinforceNogroup,
    ];

    pub fn advantage_kind(self) -> AdvantageKind {
        match self {
            Variant::Drgrpo => AdvantageKind::GroupCentered,
            Variant::Grpo | Variant::Gspo | Variant::Gmpo => AdvantageKind::GroupStandardized,
            Variant::ReinforceNogroup => AdvantageKind::BatchCentered,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Drgrpo => "drgrpo",
            Variant::Grpo => "grpo",
            Variant::Gspo => "gspo",
            Variant::Gmpo => "gmpo",
            Variant::ReinforceNogroup => "reinforce_nogroup",
        }
    }
}

/// How the advantages stored on a group were computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvantageKind {
    GroupCentered,
    GroupStandardized,
    BatchCentered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub variant: Variant,
    /// Token ratio clip width.
    pub delta: f64,
    /// KL penalty weight.
    pub beta: f64,
    pub inner_epochs: usize,
    pub std_floor: f64,
    /// Sequence ratio clip width (GSPO).
    pub gspo_delta: f64,
    /// Log-ratio clip width (GMPO).
    pub gmpo_eps: f64,
    /// Step size for RL updates.
    pub lr: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            variant: Variant::Drgrpo,
            delta: 0.2,
            beta: 0.01,
            inner_epochs: 1,
            std_floor: 1e-6,
            gspo_delta: 0.1,
            gmpo_eps: 0.4,
            lr: 0.1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param("delta", "must lie in (0, 1)"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::param("beta", "must be finite and non-negative"));
        }
        if self.inner_epochs < 1 {
            return Err(Error::param("inner_epochs", "must be at least 1"));
        }
        if !(self.std_floor.is_finite() && self.std_floor > 0.0) {
            return Err(Error::param("std_floor", "must be finite and positive"));
        }
        if !(self.gspo_delta > 0.0 && self.gspo_delta < 1.0) {
            return Err(Error::param("gspo_delta", "must lie in (0, 1)"));
        }
        if !(self.gmpo_eps.is_finite() && self.gmpo_eps > 0.0) {
            return Err(Error::param("gmpo_eps", "must be finite and positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::param("lr", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One decision of a stored rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Feature vectors of all candidates at this decision point.
    pub features: Vec<Features>,
    pub chosen: usize,
    /// Behavior-policy log-probability of `chosen`, recorded at sampling time.
    pub logp_old: f64,
    pub d_before: f64,
    pub d_after: f64,
    pub edge_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode_id: usize,
    pub steps: Vec<StepRecord>,
    /// Visited node sequence, starting with the start node.
    pub nodes: Vec<usize>,
    pub d_final: f64,
    pub path_len: f64,
    /// Closest geodesic approach to the goal over visited nodes.
    pub min_d: f64,
    pub stopped: bool,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_node(&self) -> usize {
        *self.nodes.last().expect("trajectory has a start node")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub episode_id: usize,
    pub l_star: f64,
    pub epsilon: f64,
    pub trajectories: Vec<TrajectoryRecord>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub advantage_kind: Option<AdvantageKind>,
}

impl RolloutGroup {
    /// Scores each trajectory; advantages are left empty.
    pub fn new(episode: &EpisodeSpec, trajectories: Vec<TrajectoryRecord>, alpha: f64) -> Self {
        let cfg = RewardConfig { epsilon: episode.epsilon, alpha };
        let rewards = trajectories
            .iter()
            .map(|t| trajectory_reward(t.d_final, t.path_len, episode.l_star, &cfg))
            .collect();
        RolloutGroup {
            episode_id: episode.id,
            l_star: episode.l_star,
            epsilon: episode.epsilon,
            trajectories,
            rewards,
            advantages: Vec::new(),
            advantage_kind: None,
        }
    }

    pub fn successes(&self) -> usize {
        self.trajectories.iter().filter(|t| t.d_final < self.epsilon).count()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean-centered group advantages.
pub fn advantage_drgrpo(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    let m = mean(rewards);
    Ok(rewards.iter().map(|r| r - m).collect())
}

/// Mean-centered advantages divided by the population standard deviation,
/// floored at `std_floor`.
pub fn advantage_grpo(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>> {
    let centered = advantage_drgrpo(rewards)?;
    let var = centered.iter().map(|a| a * a).sum::<f64>() / centered.len() as f64;
    let scale = var.sqrt().max(std_floor);
    Ok(centered.into_iter().map(|a| a / scale).collect())
}

/// Fills `advantages` on every group as the configured variant expects. The
/// no-group baseline uses the mean reward over the whole batch.
pub fn populate_advantages(groups: &mut [RolloutGroup], cfg: &OptimConfig) -> Result<()> {
    let kind = cfg.variant.advantage_kind();
    match kind {
        AdvantageKind::GroupCentered => {
            for g in groups.iter_mut() {
                g.advantages = advantage_drgrpo(&g.rewards)?;
            }
        }
        AdvantageKind::GroupStandardized => {
            for g in groups.iter_mut() {
                g.advantages = advantage_grpo(&g.rewards, cfg.std_floor)?;
            }
        }
        AdvantageKind::BatchCentered => {
            let all: Vec<f64> = groups.iter().flat_map(|g| g.rewards.iter().copied()).collect();
            if all.len() < 2 {
                return Err(Error::GroupTooSmall(all.len()));
            }
            let m = mean(&all);
            for g in groups.iter_mut() {
                g.advantages = g.rewards.iter().map(|r| r - m).collect();
            }
        }
    }
    for g in groups.iter_mut() {
        g.advantage_kind = Some(kind);
    }
    Ok(())
}

/// Importance ratio from a current and a stored log-probability.
pub fn ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old).exp()
}

/// `min(γÂρ, γÂ·clip(ρ, 1−δ, 1+δ))`
pub fn clipped_term(gamma: f64, adv: f64, rho: f64, delta: f64) -> f64 {
    let c = gamma * adv;
    (c * rho).min(c * rho.clamp(1.0 - delta, 1.0 + delta))
}

/// Whether the unclipped branch of the pessimistic minimum is active, i.e.
/// whether the term carries gradient.
fn unclipped_active(coef: f64, rho: f64, lo: f64, hi: f64) -> bool {
    coef * rho <= coef * rho.clamp(lo, hi)
}

/// Objective value and gradient for a group (or a batch of groups).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub objective: f64,
    pub grad: Features,
    /// Sum of per-step KL(π_θ ‖ π_ref) over visited decision points.
    pub kl_sum: f64,
    pub kl_steps: usize,
}

impl ObjectiveEval {
    fn zero() -> Self {
        ObjectiveEval { objective: 0.0, grad: [0.0; FEATURE_DIM], kl_sum: 0.0, kl_steps: 0 }
    }

    pub fn mean_kl(&self) -> f64 {
        if self.kl_steps == 0 {
            0.0
        } else {
            self.kl_sum / self.kl_steps as f64
        }
    }
}

struct StepEval {
    logp: f64,
    score: Features,
    kl: f64,
    kl_grad: Features,
}

fn eval_step(step: &StepRecord, params: &PolicyParams, reference: &PolicyParams) -> StepEval {
    let p = action_distribution(&step.features, params);
    let q = action_distribution(&step.features, reference);
    StepEval {
        logp: p.logprobs[step.chosen],
        score: policy::score_gradient(&step.features, &p, step.chosen),
        kl: policy::kl_divergence(&p, &q),
        kl_grad: policy::kl_gradient(&step.features, &p, &q),
    }
}

/// Evaluates the configured objective on one group at `params`.
pub fn objective_and_gradient(
    group: &RolloutGroup,
    params: &PolicyParams,
    reference: &PolicyParams,
    cfg: &OptimConfig,
) -> Result<ObjectiveEval> {
    let expected = cfg.variant.advantage_kind();
    if group.advantage_kind != Some(expected) || group.advantages.len() != group.trajectories.len() {
        return Err(Error::AdvantageMismatch { expected, found: group.advantage_kind });
    }
    let k = group.trajectories.len() as f64;
    let mut out = ObjectiveEval::zero();

    for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
        if traj.is_empty() {
            continue;
        }
        let n = traj.len() as f64;
        let evals: Vec<StepEval> = traj.steps.iter().map(|s| eval_step(s, params, reference)).collect();
        for e in &evals {
            out.kl_sum += e.kl;
        }
        out.kl_steps += evals.len();

        let (value, grad) = match cfg.variant {
            Variant::Drgrpo | Variant::Grpo => {
                let sign = advantage_sign(adv);
                let mut value = 0.0;
                let mut grad = [0.0; FEATURE_DIM];
                for (s, e) in traj.steps.iter().zip(&evals) {
                    let gamma = progress_coefficient(s.d_before, s.d_after, group.l_star, sign);
                    let coef = gamma * adv;
                    let rho = ratio(e.logp, s.logp_old);
                    value += clipped_term(gamma, adv, rho, cfg.delta) - cfg.beta * e.kl;
                    if unclipped_active(coef, rho, 1.0 - cfg.delta, 1.0 + cfg.delta) {
                        add_scaled(&mut grad, &e.score, coef * rho);
                    }
                    add_scaled(&mut grad, &e.kl_grad, -cfg.beta);
                }
                if cfg.variant == Variant::Grpo {
                    value /= n;
                    grad.iter_mut().for_each(|g| *g /= n);
                }
                (value, grad)
            }
            Variant::Gspo => {
                let mean_log_ratio =
                    traj.steps.iter().zip(&evals).map(|(s, e)| e.logp - s.logp_old).sum::<f64>() / n;
                let seq_ratio = mean_log_ratio.exp();
                let lo = 1.0 - cfg.gspo_delta;
                let hi = 1.0 + cfg.gspo_delta;
                let value = (seq_ratio * adv).min(seq_ratio.clamp(lo, hi) * adv);
                let mut grad = [0.0; FEATURE_DIM];
                if unclipped_active(adv, seq_ratio, lo, hi) {
                    for e in &evals {
                        add_scaled(&mut grad, &e.score, adv * seq_ratio / n);
                    }
                }
                (value, grad)
            }
            Variant::Gmpo => {
                let sign = f64::from(advantage_sign(adv));
                let mut sum_log = 0.0;
                let mut active: Vec<&Features> = Vec::with_capacity(evals.len());
                for (s, e) in traj.steps.iter().zip(&evals) {
                    let log_ratio = e.logp - s.logp_old;
                    let clipped = log_ratio.clamp(-cfg.gmpo_eps, cfg.gmpo_eps);
                    // pessimistic per-token choice in log space
                    if sign * log_ratio <= sign * clipped {
                        sum_log += log_ratio;
                        active.push(&e.score);
                    } else {
                        sum_log += clipped;
                    }
                }
                let value = adv * (sum_log / n).exp();
                let mut grad = [0.0; FEATURE_DIM];
                for score in active {
                    add_scaled(&mut grad, score, value / n);
                }
                (value, grad)
            }
            Variant::ReinforceNogroup => {
                let mut value = 0.0;
                let mut grad = [0.0; FEATURE_DIM];
                for e in &evals {
                    value += adv * e.logp;
                    add_scaled(&mut grad, &e.score, adv);
                }
                (value, grad)
            }
        };
        out.objective += value / k;
        add_scaled(&mut out.grad, &grad, 1.0 / k);
    }
    Ok(out)
}

/// Mean of the per-group objectives over a batch. Groups are evaluated in
/// parallel and reduced in their given order.
pub fn batch_objective_and_gradient(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    reference: &PolicyParams,
    cfg: &OptimConfig,
) -> Result<ObjectiveEval> {
    let evals: Vec<ObjectiveEval> = groups
        .par_iter()
        .map(|g| objective_and_gradient(g, params, reference, cfg))
        .collect::<Result<_>>()?;
    let b = groups.len().max(1) as f64;
    let mut out = ObjectiveEval::zero();
    for e in evals {
        out.objective += e.objective / b;
        add_scaled(&mut out.grad, &e.grad, 1.0 / b);
        out.kl_sum += e.kl_sum;
        out.kl_steps += e.kl_steps;
    }
    Ok(out)
}

pub use crate::policy::apply_update;
