//! Greedy evaluation, navigation metrics and perturbation sweeps.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgraph::{EnvSplit, EpisodeSpec, NavGraph};
use crate::error::{Error, Result};
use crate::optim::TrajectoryRecord;
use crate::policy::{select, PolicyParams, SelectMode};
use crate::rng;
use crate::rollout::rollout;

/// Action perturbation applied at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PerturbSpec {
    None,
    /// Sample from the policy with probability `p` at each step, else argmax.
    Global { p: f64 },
    /// Least probable action for the first `n` steps, argmax afterwards.
    Early { n: usize },
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PerturbSpec::Global { p } if !(0.0..=1.0).contains(&p) => {
                Err(Error::param("global_p", format!("probability {p} outside [0, 1]")))
            }
            PerturbSpec::Early { n: 0 } => Err(Error::param("early_n", "must be at least 1")),
            _ => Ok(()),
        }
    }

    fn key(&self) -> u64 {
        match *self {
            PerturbSpec::None => 0,
            PerturbSpec::Global { p } => 1 ^ p.to_bits().rotate_left(3),
            PerturbSpec::Early { n } => 2 ^ ((n as u64) << 8),
        }
    }
}

impl fmt::Display for PerturbSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerturbSpec::None => write!(f, "none"),
            PerturbSpec::Global { p } => write!(f, "global:{p}"),
            PerturbSpec::Early { n } => write!(f, "early:{n}"),
        }
    }
}

/// Runs one evaluation episode under `perturb`. Without perturbation the
/// policy acts greedily and `rng` is never consulted.
pub fn run_episode<R: Rng + ?Sized>(
    graph: &NavGraph,
    params: &PolicyParams,
    episode: &EpisodeSpec,
    perturb: PerturbSpec,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    rollout(graph, episode, params, rng, |step, dist, r| {
        let mode = match perturb {
            PerturbSpec::None => SelectMode::Greedy,
            PerturbSpec::Global { p } => {
                if r.random::<f64>() < p {
                    SelectMode::Sample
                } else {
                    SelectMode::Greedy
                }
            }
            PerturbSpec::Early { n } if step < n => SelectMode::LeastProbable,
            PerturbSpec::Early { .. } => SelectMode::Greedy,
        };
        select(dist, mode, r).0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode_id: usize,
    pub d_final: f64,
    pub path_len: f64,
    pub l_star: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub min_d: f64,
}

impl EpisodeRow {
    /// Re-derives terminal distances from the graph rather than trusting the
    /// record.
    pub fn new(graph: &NavGraph, episode: &EpisodeSpec, traj: &TrajectoryRecord) -> Self {
        let d_final = graph.dist(traj.final_node(), episode.goal);
        let min_d = traj
            .nodes
            .iter()
            .map(|&n| graph.dist(n, episode.goal))
            .fold(f64::INFINITY, f64::min);
        EpisodeRow {
            episode_id: episode.id,
            d_final,
            path_len: traj.path_len,
            l_star: episode.l_star,
            success: d_final < episode.epsilon,
            oracle_success: min_d < episode.epsilon,
            min_d,
        }
    }
}

/// Aggregate navigation metrics; rates are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
    pub osr: f64,
    pub rows: Vec<EpisodeRow>,
}

pub fn compute_metrics(rows: Vec<EpisodeRow>) -> Result<EvalResult> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let n = rows.len() as f64;
    let ne = rows.iter().map(|r| r.d_final).sum::<f64>() / n;
    let sr = 100.0 * rows.iter().filter(|r| r.success).count() as f64 / n;
    let osr = 100.0 * rows.iter().filter(|r| r.oracle_success).count() as f64 / n;
    let spl = 100.0
        * rows
            .iter()
            .filter(|r| r.success)
            .map(|r| r.l_star / r.path_len.max(r.l_star))
            .sum::<f64>()
        / n;
    Ok(EvalResult { ne, sr, spl, osr, rows })
}

/// Evaluates every episode of a split. Each episode draws from its own
/// stream keyed by `(seed, episode, perturbation)`.
pub fn evaluate(split: &EnvSplit, params: &PolicyParams, perturb: PerturbSpec, seed: u64) -> Result<EvalResult> {
    perturb.validate()?;
    let rows = split
        .episodes
        .par_iter()
        .map(|ep| {
            let graph = split.graph_for(ep)?;
            let mut r = rng::stream(seed, "eval", &[ep.id as u64, perturb.key()]);
            let traj = run_episode(graph, params, ep, perturb, &mut r)?;
            Ok(EpisodeRow::new(graph, ep, &traj))
        })
        .collect::<Result<Vec<_>>>()?;
    compute_metrics(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub method: String,
    pub perturbation: PerturbSpec,
    /// `None` on rows averaged over seeds.
    pub seed: Option<u64>,
    pub osr: f64,
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
    pub delta_spl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    /// One row per method × perturbation × seed.
    pub rows: Vec<RobustnessRow>,
    /// One row per method × perturbation, averaged over seeds.
    pub summary: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn summary_row(&self, method: &str, perturbation: PerturbSpec) -> Option<&RobustnessRow> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.perturbation == perturbation)
    }
}

/// Sweeps every method over every perturbation and seed. ΔSPL compares each
/// row with the unperturbed row of the same method and seed.
pub fn robustness_table(
    methods: &[(String, PolicyParams)],
    split: &EnvSplit,
    specs: &[PerturbSpec],
    seeds: &[u64],
) -> Result<RobustnessTable> {
    if !specs.contains(&PerturbSpec::None) {
        return Err(Error::param("perturbations", "the unperturbed setting must be included"));
    }
    if seeds.is_empty() {
        return Err(Error::param("seeds", "at least one seed is required"));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (name, params) in methods {
        let mut per_spec: Vec<Vec<EvalResult>> = Vec::with_capacity(specs.len());
        for &spec in specs {
            per_spec.push(
                seeds
                    .iter()
                    .map(|&s| evaluate(split, params, spec, s))
                    .collect::<Result<_>>()?,
            );
        }
        let base_idx = specs.iter().position(|s| *s == PerturbSpec::None).expect("checked above");
        for (spec, results) in specs.iter().zip(&per_spec) {
            for (i, (&seed, res)) in seeds.iter().zip(results).enumerate() {
                rows.push(RobustnessRow {
                    method: name.clone(),
                    perturbation: *spec,
                    seed: Some(seed),
                    osr: res.osr,
                    ne: res.ne,
                    sr: res.sr,
                    spl: res.spl,
                    delta_spl: res.spl - per_spec[base_idx][i].spl,
                });
            }
            let n = results.len() as f64;
            let avg = |f: fn(&EvalResult) -> f64| results.iter().map(f).sum::<f64>() / n;
            let base_spl = per_spec[base_idx].iter().map(|r| r.spl).sum::<f64>() / n;
            let spl = avg(|r| r.spl);
            summary.push(RobustnessRow {
                method: name.clone(),
                perturbation: *spec,
                seed: None,
                osr: avg(|r| r.osr),
                ne: avg(|r| r.ne),
                sr: avg(|r| r.sr),
                spl,
                delta_spl: if *spec == PerturbSpec::None { 0.0 } else { spl - base_spl },
            });
        }
    }
    Ok(RobustnessTable { rows, summary })
}

/// The perturbation grid of the robustness study: unperturbed, global
/// sampling at each `p > 0`, and early least-probable steps for each `n`.
pub fn perturbation_grid(global_p: &[f64], early_n: &[usize]) -> Vec<PerturbSpec> {
    let mut specs = vec![PerturbSpec::None];
    specs.extend(global_p.iter().filter(|&&p| p > 0.0).map(|&p| PerturbSpec::Global { p }));
    specs.extend(early_n.iter().map(|&n| PerturbSpec::Early { n }));
    specs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row(d_final: f64, path_len: f64, l_star: f64, min_d: f64) -> EpisodeRow {
        EpisodeRow {
            episode_id: 0,
            d_final,
            path_len,
            l_star,
            success: d_final < 3.0,
            oracle_success: min_d < 3.0,
            min_d,
        }
    }

    #[test]
    fn perfect_episode() {
        let m = compute_metrics(vec![row(0.0, 10.0, 10.0, 0.0)]).unwrap();
        assert_eq!((m.sr, m.spl, m.osr, m.ne), (100.0, 100.0, 100.0, 0.0));
    }

    #[test]
    fn double_length_halves_spl() {
        let m = compute_metrics(vec![row(1.0, 20.0, 10.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(m.spl, 50.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_without_success() {
        let m = compute_metrics(vec![row(6.0, 12.0, 10.0, 2.5)]).unwrap();
        assert_eq!(m.sr, 0.0);
        assert_eq!(m.osr, 100.0);
    }

    #[test]
    fn empty_rows_rejected() {
        assert!(matches!(compute_metrics(Vec::new()), Err(Error::EmptyRows)));
    }

    #[test]
    fn grid_shape() {
        let g = perturbation_grid(&[0.0, 0.2, 0.4, 0.8], &[1, 2, 3]);
        assert_eq!(g.len(), 7);
        assert_eq!(g[0], PerturbSpec::None);
        assert!(PerturbSpec::Global { p: 1.5 }.validate().is_err());
        assert!(PerturbSpec::Early { n: 0 }.validate().is_err());
    }
}
