//! Supervised warm-up, group rollouts and the RL loop with hard-case replay.

use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgraph::{AgentState, EnvSplit, EpisodeSpec, Features, NavGraph, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::optim::{self, OptimConfig, RolloutGroup};
use crate::policy::{
    action_distribution, add_scaled, apply_update, feature_matrix, select, PolicyParams, SelectMode,
};
use crate::rng;
use crate::rollout::rollout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Episodes per iteration (B).
    pub batch_size: usize,
    /// Trajectories per episode (K).
    pub group_size: usize,
    pub warmup_steps: usize,
    pub rl_steps: usize,
    /// Hard-case buffer size that triggers a supervised flush; `None`
    /// disables replay.
    pub hard_case_trigger: Option<usize>,
    pub lr_sft: f64,
    /// Path-efficiency weight of the trajectory reward.
    pub alpha: f64,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            group_size: 8,
            warmup_steps: 300,
            rl_steps: 300,
            hard_case_trigger: Some(200),
            lr_sft: 0.5,
            alpha: 0.25,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if self.group_size < 2 {
            return Err(Error::param("group_size", "must be at least 2"));
        }
        if self.hard_case_trigger == Some(0) {
            return Err(Error::param("hard_case_trigger", "must be at least 1"));
        }
        if !(self.lr_sft.is_finite() && self.lr_sft >= 0.0) {
            return Err(Error::param("lr_sft", "must be finite and non-negative"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::param("alpha", "must be finite and non-negative"));
        }
        self.optim.validate()
    }
}

/// Teacher-forced expert decisions along the shortest path, ending with the
/// stop at the goal: `(candidate features, expert index)` per step.
pub fn expert_demonstration(graph: &NavGraph, episode: &EpisodeSpec) -> Result<Vec<(Vec<Features>, usize)>> {
    let mut state = AgentState::start(graph, episode);
    let mut demo = Vec::new();
    loop {
        let cands = graph.candidates(&state, episode);
        let expert = graph.expert_action(&state, episode);
        let action = cands[expert].clone();
        demo.push((feature_matrix(&cands), expert));
        let (next, terminated) = graph.step(state, &action, episode)?;
        if terminated {
            break;
        }
        state = next;
    }
    Ok(demo)
}

/// Supervised loss `−1/|B| Σ_i Σ_t log π(a*_t | s*_t)` and the gradient of
/// the mean expert log-likelihood (the ascent direction).
pub fn sft_loss_and_grad(items: &[(&NavGraph, &EpisodeSpec)], params: &PolicyParams) -> Result<(f64, Features)> {
    let mut loglik = 0.0;
    let mut grad = [0.0; FEATURE_DIM];
    for (graph, episode) in items {
        for (features, expert) in expert_demonstration(graph, episode)? {
            let dist = action_distribution(&features, params);
            loglik += dist.logprobs[expert];
            let mean = dist.mean_features(&features);
            add_scaled(&mut grad, &features[expert], 1.0);
            add_scaled(&mut grad, &mean, -1.0);
        }
    }
    let b = items.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= b);
    Ok((-loglik / b, grad))
}

/// One gradient step on the mean expert log-likelihood.
pub fn sft_update(items: &[(&NavGraph, &EpisodeSpec)], params: &PolicyParams, lr: f64) -> Result<PolicyParams> {
    let (_, grad) = sft_loss_and_grad(items, params)?;
    apply_update(params, &grad, lr)
}

/// Samples `k` trajectories from the current policy.
pub fn rollout_group<R: Rng + ?Sized>(
    graph: &NavGraph,
    episode: &EpisodeSpec,
    params: &PolicyParams,
    k: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<RolloutGroup> {
    if k < 2 {
        return Err(Error::GroupTooSmall(k));
    }
    let trajectories = (0..k)
        .map(|_| rollout(graph, episode, params, rng, |_, d, r| select(d, SelectMode::Sample, r).0))
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutGroup::new(episode, trajectories, alpha))
}

/// True when no trajectory of the group ended strictly within the success
/// threshold.
pub fn hard_case_check(group: &RolloutGroup) -> bool {
    group.trajectories.iter().all(|t| t.d_final >= group.epsilon)
}

/// Episodes whose latest rollout group failed entirely.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HardCaseBuffer {
    episodes: Vec<usize>,
    trigger: Option<usize>,
}

impl HardCaseBuffer {
    pub fn new(trigger: Option<usize>) -> Self {
        HardCaseBuffer { episodes: Vec::new(), trigger }
    }

    /// Adds a hard episode, or drops it if its latest group had a success.
    pub fn record(&mut self, episode_id: usize, hard: bool) {
        let pos = self.episodes.iter().position(|&e| e == episode_id);
        match (hard, pos) {
            (true, None) => self.episodes.push(episode_id),
            (false, Some(i)) => {
                self.episodes.remove(i);
            }
            _ => {}
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[usize] {
        &self.episodes
    }

    pub fn ready(&self) -> bool {
        self.trigger.is_some_and(|m| self.episodes.len() >= m)
    }

    pub fn drain(&mut self) -> Vec<usize> {
        std::mem::take(&mut self.episodes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub success_frac: f64,
    pub mean_kl: f64,
    pub buffer_size: usize,
    pub wall_ms: u64,
}

/// One supervised pass over the drained hard-case buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlushRecord {
    pub iteration: usize,
    /// Episode ids in buffer order.
    pub episodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Policy after the supervised warm-up; also the frozen reference.
    pub sft: PolicyParams,
    pub final_params: PolicyParams,
    pub log: Vec<LogRow>,
    /// Hard-case supervised passes in the order they ran.
    pub flushes: Vec<FlushRecord>,
}

impl TrainOutcome {
    pub fn reference(&self) -> &PolicyParams {
        &self.sft
    }
}

/// Training failed after some progress; `last_good` holds the last finite
/// parameters.
#[derive(Debug)]
pub struct TrainAbort {
    pub iteration: usize,
    pub last_good: PolicyParams,
    pub log: Vec<LogRow>,
    pub error: Error,
}

impl std::fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted at iteration {}: {}", self.iteration, self.error)
    }
}

impl std::error::Error for TrainAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn pick_batch<'a>(split: &'a EnvSplit, size: usize, seed: u64, tag: &str, iteration: usize) -> Vec<&'a EpisodeSpec> {
    let mut r = rng::stream(seed, tag, &[iteration as u64]);
    let n = split.episodes.len();
    index::sample(&mut r, n, size.min(n))
        .into_iter()
        .map(|i| &split.episodes[i])
        .collect()
}

fn with_graphs<'a>(split: &'a EnvSplit, episodes: &[&'a EpisodeSpec]) -> Result<Vec<(&'a NavGraph, &'a EpisodeSpec)>> {
    episodes.iter().map(|&e| Ok((split.graph_for(e)?, e))).collect()
}

/// Runs warm-up then RL with hard-case replay, starting from `init`.
///
/// Rollout groups within an iteration run on the current rayon pool, each
/// with its own random stream keyed by `(seed, episode, iteration)`, so the
/// result does not depend on the number of threads.
pub fn train(cfg: &TrainConfig, split: &EnvSplit, init: PolicyParams) -> Result<TrainOutcome, TrainAbort> {
    let abort = |iteration, last_good: &PolicyParams, log: &[LogRow], error| TrainAbort {
        iteration,
        last_good: last_good.clone(),
        log: log.to_vec(),
        error,
    };
    let fail_early = |e| abort(0, &init, &[], e);
    cfg.validate().map_err(fail_early)?;
    if split.episodes.is_empty() {
        return Err(fail_early(Error::param("episodes", "training split is empty")));
    }

    let mut params = init.clone();
    for step in 0..cfg.warmup_steps {
        let batch = pick_batch(split, cfg.batch_size, cfg.seed, "sft-batch", step);
        let items = with_graphs(split, &batch).map_err(|e| abort(0, &params, &[], e))?;
        params = sft_update(&items, &params, cfg.lr_sft).map_err(|e| abort(0, &params, &[], e))?;
    }
    let reference = params.clone();
    let sft = params.clone();

    let mut buffer = HardCaseBuffer::new(cfg.hard_case_trigger);
    let mut log = Vec::with_capacity(cfg.rl_steps);
    let mut flushes = Vec::new();

    for iteration in 1..=cfg.rl_steps {
        let started = Instant::now();
        let result = (|| -> Result<(PolicyParams, LogRow)> {
            let batch = pick_batch(split, cfg.batch_size, cfg.seed, "rl-batch", iteration);
            let items = with_graphs(split, &batch)?;
            let behavior = params.clone();
            let mut groups = items
                .par_iter()
                .map(|(graph, ep)| {
                    let mut r = rng::stream(cfg.seed, "rollout", &[ep.id as u64, iteration as u64]);
                    rollout_group(graph, ep, &behavior, cfg.group_size, cfg.alpha, &mut r)
                })
                .collect::<Result<Vec<_>>>()?;
            optim::populate_advantages(&mut groups, &cfg.optim)?;

            let mut next = behavior.clone();
            let mut first_eval = None;
            for _ in 0..cfg.optim.inner_epochs {
                let eval = optim::batch_objective_and_gradient(&groups, &next, &reference, &cfg.optim)?;
                if !eval.objective.is_finite() {
                    return Err(Error::NonFinite("objective"));
                }
                next = apply_update(&next, &eval.grad, cfg.optim.lr)?;
                first_eval.get_or_insert(eval);
            }
            let eval = first_eval.expect("at least one inner epoch");

            for g in &groups {
                buffer.record(g.episode_id, hard_case_check(g));
            }
            if buffer.ready() {
                let ids = buffer.drain();
                let eps = ids.iter().map(|&id| split.episode(id)).collect::<Result<Vec<_>>>()?;
                let items = with_graphs(split, &eps)?;
                next = sft_update(&items, &next, cfg.lr_sft)?;
                flushes.push(FlushRecord { iteration, episodes: ids });
            }
            if !next.is_finite() {
                return Err(Error::NonFinite("parameters"));
            }

            let n_traj: usize = groups.iter().map(|g| g.trajectories.len()).sum();
            let reward_sum: f64 = groups.iter().flat_map(|g| g.rewards.iter()).sum();
            let successes: usize = groups.iter().map(|g| g.successes()).sum();
            let row = LogRow {
                iteration,
                mean_reward: reward_sum / n_traj as f64,
                success_frac: successes as f64 / n_traj as f64,
                mean_kl: eval.mean_kl(),
                buffer_size: buffer.len(),
                wall_ms: 0,
            };
            Ok((next, row))
        })();
        match result {
            Ok((next, mut row)) => {
                row.wall_ms = started.elapsed().as_millis() as u64;
                params = next;
                log.push(row);
            }
            Err(e) => return Err(abort(iteration, &params, &log, e)),
        }
    }

    Ok(TrainOutcome { sft, final_params: params, log, flushes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgraph::generate_graph;
    use crate::envgraph::sample_episodes;

    fn tiny() -> (NavGraph, EpisodeSpec) {
        let g = NavGraph::from_edges(
            vec![[0.0, 0.0], [3.0, 0.0], [6.0, 0.0], [3.0, 3.0]],
            &[(0, 1), (1, 2), (1, 3)],
            4.0,
            0,
        )
        .unwrap();
        let ep = EpisodeSpec::new(&g, 0, 0, 2, [6.0, 0.5], 1.0).unwrap();
        (g, ep)
    }

    #[test]
    fn zero_rate_sft_keeps_weights() {
        let (g, ep) = tiny();
        let p = PolicyParams::new([0.1, 0.2, -0.3, 0.4, 0.0, 1.0]);
        let q = sft_update(&[(&g, &ep)], &p, 0.0).unwrap();
        assert_eq!(p.w, q.w);
    }

    #[test]
    fn sft_converges_on_tiny_episode() {
        let (g, ep) = tiny();
        let mut p = PolicyParams::default();
        for _ in 0..500 {
            p = sft_update(&[(&g, &ep)], &p, 1.0).unwrap();
        }
        for (features, expert) in expert_demonstration(&g, &ep).unwrap() {
            let d = action_distribution(&features, &p);
            assert!(d.probs[expert] > 0.99, "expert prob {}", d.probs[expert]);
        }
    }

    #[test]
    fn hard_case_rule() {
        let mk = |ds: &[f64]| RolloutGroup {
            episode_id: 0,
            l_star: 10.0,
            epsilon: 3.0,
            trajectories: ds
                .iter()
                .map(|&d| crate::optim::TrajectoryRecord {
                    episode_id: 0,
                    steps: Vec::new(),
                    nodes: vec![0],
                    d_final: d,
                    path_len: 0.0,
                    min_d: d,
                    stopped: true,
                })
                .collect(),
            rewards: vec![0.0; ds.len()],
            advantages: Vec::new(),
            advantage_kind: None,
        };
        assert!(hard_case_check(&mk(&[5.0, 4.0, 7.0])));
        assert!(!hard_case_check(&mk(&[5.0, 2.0, 7.0])));
        assert!(hard_case_check(&mk(&[3.0, 3.0, 3.0])));
    }

    #[test]
    fn buffer_tracks_latest_outcome() {
        let mut b = HardCaseBuffer::new(Some(2));
        b.record(4, true);
        b.record(4, true);
        assert_eq!(b.len(), 1);
        b.record(4, false);
        assert!(b.is_empty());
        b.record(1, true);
        b.record(2, true);
        assert!(b.ready());
        assert_eq!(b.drain(), vec![1, 2]);
        assert!(b.is_empty());
        let mut never = HardCaseBuffer::new(None);
        never.record(1, true);
        assert!(!never.ready());
    }

    #[test]
    fn stored_logp_matches_recomputation() {
        let g = generate_graph(30, 25.0, 7.0, 5).unwrap();
        let ep = &sample_episodes(&g, 1, (8.0, 20.0), 1.0, 3.0, 5).unwrap()[0];
        let p = PolicyParams::new([-1.0, 2.0, 0.3, -1.0, 1.5, 0.0]);
        let mut r = rng::stream(1, "t", &[]);
        let group = rollout_group(&g, ep, &p, 8, 0.25, &mut r).unwrap();
        for t in &group.trajectories {
            for s in &t.steps {
                let d = action_distribution(&s.features, &p);
                assert!((d.logprobs[s.chosen] - s.logp_old).abs() <= 1e-12);
            }
            let len: f64 = t.steps.iter().map(|s| s.edge_len).sum();
            assert!((len - t.path_len).abs() < 1e-9);
        }
    }
}
