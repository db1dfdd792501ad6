//! Versioned JSON document holding the train and unseen-validation splits.

use serde::{Deserialize, Serialize};

use crate::envgraph::{generate_graph, sample_episodes, EnvSplit};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const BUNDLE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_nodes: usize,
    pub area_side: f64,
    pub connect_radius: f64,
    pub train_graphs: usize,
    pub val_graphs: usize,
    pub train_episodes_per_graph: usize,
    pub val_episodes_per_graph: usize,
    /// Admissible shortest-path lengths `[lo, hi]` in meters.
    pub l_range: [f64; 2],
    /// Std of the goal-position noise, meters.
    pub noise_sigma: f64,
    /// Success threshold, meters.
    pub epsilon: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_nodes: 40,
            area_side: 30.0,
            connect_radius: 7.0,
            train_graphs: 20,
            val_graphs: 20,
            train_episodes_per_graph: 10,
            val_episodes_per_graph: 5,
            l_range: [8.0, 20.0],
            noise_sigma: 2.0,
            epsilon: 3.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::param("n_nodes", "at least two nodes are required"));
        }
        if !(self.area_side.is_finite() && self.area_side > 0.0) {
            return Err(Error::param("area_side", "must be finite and positive"));
        }
        if !(self.connect_radius.is_finite() && self.connect_radius > 0.0) {
            return Err(Error::param("connect_radius", "must be finite and positive"));
        }
        if self.train_graphs == 0 || self.val_graphs == 0 {
            return Err(Error::param("train_graphs/val_graphs", "each split needs at least one graph"));
        }
        let [lo, hi] = self.l_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::param("l_range", "need 0 <= lo <= hi"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::param("noise_sigma", "must be finite and non-negative"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be finite and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvBundle {
    pub format_version: u32,
    pub artifact_version: String,
    pub seed: u64,
    pub env: EnvConfig,
    /// Free-form echo of the full experiment configuration.
    pub config: serde_json::Value,
    pub train: EnvSplit,
    pub val_unseen: EnvSplit,
}

impl EnvBundle {
    /// Generates both splits. Graph ids are globally unique, validation graphs
    /// never appear in the training split, and episode ids are unique across
    /// the bundle.
    pub fn generate(env: &EnvConfig, seed: u64, config: serde_json::Value) -> Result<Self> {
        env.validate()?;
        let mut next_graph = 0;
        let mut next_episode = 0;
        let mut build = |split: u64, graphs: usize, per_graph: usize| -> Result<EnvSplit> {
            let mut out = EnvSplit { graphs: Vec::with_capacity(graphs), episodes: Vec::new() };
            for i in 0..graphs {
                let gseed = derive_seed(seed, "graph", &[split, i as u64]);
                let graph = generate_graph(env.n_nodes, env.area_side, env.connect_radius, gseed)?
                    .with_id(next_graph);
                next_graph += 1;
                let eseed = derive_seed(seed, "episodes", &[split, i as u64]);
                let range = (env.l_range[0], env.l_range[1]);
                for mut ep in sample_episodes(&graph, per_graph, range, env.noise_sigma, env.epsilon, eseed)? {
                    ep.id = next_episode;
                    next_episode += 1;
                    out.episodes.push(ep);
                }
                out.graphs.push(graph);
            }
            Ok(out)
        };
        let train = build(0, env.train_graphs, env.train_episodes_per_graph)?;
        let val_unseen = build(1, env.val_graphs, env.val_episodes_per_graph)?;
        Ok(EnvBundle {
            format_version: BUNDLE_FORMAT,
            artifact_version: crate::VERSION.to_string(),
            seed,
            env: env.clone(),
            config,
            train,
            val_unseen,
        })
    }

    pub fn check(&self) -> Result<()> {
        if self.format_version != BUNDLE_FORMAT {
            return Err(Error::Version { expected: BUNDLE_FORMAT, found: self.format_version });
        }
        self.train.validate()?;
        self.val_unseen.validate()?;
        let train_ids: Vec<usize> = self.train.graphs.iter().map(|g| g.id()).collect();
        if self.val_unseen.graphs.iter().any(|g| train_ids.contains(&g.id())) {
            return Err(Error::param("val_unseen", "validation graphs overlap the training graphs"));
        }
        Ok(())
    }
}
