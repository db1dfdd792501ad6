#![allow(dead_code)]

use graphnav_core::envgraph::{Features, FEATURE_DIM};
use graphnav_core::optim::{populate_advantages, OptimConfig, RolloutGroup, StepRecord, TrajectoryRecord, Variant};
use graphnav_core::policy::{action_distribution, PolicyParams};
use rand::Rng;

pub fn random_features<R: Rng>(rng: &mut R, n: usize) -> Vec<Features> {
    (0..n)
        .map(|i| {
            let mut f = [0.0; FEATURE_DIM];
            f[0] = if i == 0 { 1.0 } else { 0.0 };
            for x in f.iter_mut().take(FEATURE_DIM - 1).skip(1) {
                *x = rng.random_range(-1.0..1.0);
            }
            f[FEATURE_DIM - 1] = 1.0;
            f
        })
        .collect()
}

pub fn random_params<R: Rng>(rng: &mut R, scale: f64) -> PolicyParams {
    let mut w = [0.0; FEATURE_DIM];
    for x in &mut w {
        *x = rng.random_range(-scale..scale);
    }
    PolicyParams::new(w)
}

/// Random stored trajectory with behavior log-probs from `behavior`.
pub fn random_trajectory<R: Rng>(rng: &mut R, behavior: &PolicyParams, steps: usize, l_star: f64) -> TrajectoryRecord {
    let mut d = rng.random_range(2.0..l_star + 4.0);
    let mut out = Vec::with_capacity(steps);
    let mut path = 0.0;
    for _ in 0..steps {
        let n = rng.random_range(2..6);
        let features = random_features(rng, n);
        let chosen = rng.random_range(0..n);
        let edge: f64 = rng.random_range(0.5..3.0);
        let d_after = (d + rng.random_range(-edge..edge)).max(0.0);
        let dist = action_distribution(&features, behavior);
        out.push(StepRecord { features, chosen, logp_old: dist.logprobs[chosen], d_before: d, d_after, edge_len: edge });
        d = d_after;
        path += edge;
    }
    TrajectoryRecord {
        episode_id: 0,
        steps: out,
        nodes: vec![0],
        d_final: d,
        path_len: path,
        min_d: d,
        stopped: true,
    }
}

/// Random group for `cfg.variant` with advantages populated. Behavior
/// log-probs come from a perturbation of `params` so ratios differ from 1.
pub fn random_group<R: Rng>(rng: &mut R, params: &PolicyParams, cfg: &OptimConfig, k: usize, max_len: usize, off_policy: f64) -> RolloutGroup {
    let mut behavior = params.clone();
    for x in &mut behavior.w {
        *x += rng.random_range(-off_policy..=off_policy);
    }
    let l_star = rng.random_range(5.0..15.0);
    let trajectories = (0..k)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            random_trajectory(rng, &behavior, len, l_star)
        })
        .collect();
    let mut group = RolloutGroup {
        episode_id: 0,
        l_star,
        epsilon: 3.0,
        trajectories,
        rewards: (0..k).map(|_| rng.random_range(-0.5..1.0)).collect(),
        advantages: Vec::new(),
        advantage_kind: None,
    };
    populate_advantages(std::slice::from_mut(&mut group), cfg).unwrap();
    group
}

/// Distance of every ratio used by `variant` from its clipping boundaries.
pub fn kink_margin(group: &RolloutGroup, params: &PolicyParams, cfg: &OptimConfig) -> f64 {
    let mut margin = f64::INFINITY;
    for t in &group.trajectories {
        let log_ratios: Vec<f64> = t
            .steps
            .iter()
            .map(|s| action_distribution(&s.features, params).logprobs[s.chosen] - s.logp_old)
            .collect();
        match cfg.variant {
            Variant::Drgrpo | Variant::Grpo => {
                for lr in &log_ratios {
                    let r = lr.exp();
                    margin = margin.min((r - (1.0 - cfg.delta)).abs()).min((r - (1.0 + cfg.delta)).abs());
                }
            }
            Variant::Gspo => {
                let s = (log_ratios.iter().sum::<f64>() / log_ratios.len() as f64).exp();
                margin = margin.min((s - (1.0 - cfg.gspo_delta)).abs()).min((s - (1.0 + cfg.gspo_delta)).abs());
            }
            Variant::Gmpo => {
                for lr in &log_ratios {
                    margin = margin.min((lr - cfg.gmpo_eps).abs()).min((lr + cfg.gmpo_eps).abs());
                }
            }
            Variant::ReinforceNogroup => {}
        }
    }
    margin
}

pub fn central_difference(f: impl Fn(&PolicyParams) -> f64, at: &PolicyParams, h: f64) -> Features {
    let mut g = [0.0; FEATURE_DIM];
    for i in 0..FEATURE_DIM {
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus.w[i] += h;
        minus.w[i] -= h;
        g[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

pub fn max_rel_err(analytic: &Features, numeric: &Features) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-4);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}
