//! Policy rollouts on a navigation graph.

use rand::Rng;

use crate::envgraph::{ActionKind, AgentState, EpisodeSpec, NavGraph};
use crate::error::Result;
use crate::optim::{StepRecord, TrajectoryRecord};
use crate::policy::{action_distribution, feature_matrix, ActionDistribution, PolicyParams};

/// Runs one episode, asking `choose` for the action index at every decision
/// point. `choose` receives the zero-based step index and the current action
/// distribution. The behavior log-probability of the chosen action is stored
/// on each step.
pub fn rollout<R, F>(
    graph: &NavGraph,
    episode: &EpisodeSpec,
    params: &PolicyParams,
    rng: &mut R,
    mut choose: F,
) -> Result<TrajectoryRecord>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &ActionDistribution, &mut R) -> usize,
{
    let mut state = AgentState::start(graph, episode);
    let mut steps = Vec::new();
    let mut nodes = vec![state.node];
    let mut min_d = state.d_t;
    let mut stopped = false;

    loop {
        let cands = graph.candidates(&state, episode);
        let features = feature_matrix(&cands);
        let dist = action_distribution(&features, params);
        let chosen = choose(state.step, &dist, rng);
        let action = &cands[chosen];
        let d_before = state.d_t;
        let edge_len = match action.kind {
            ActionKind::Move => graph.edge_length(state.node, action.target).unwrap_or(0.0),
            ActionKind::Stop => 0.0,
        };
        let (next, terminated) = graph.step(state, action, episode)?;
        match action.kind {
            ActionKind::Move => nodes.push(next.node),
            ActionKind::Stop => stopped = true,
        }
        min_d = min_d.min(next.d_t);
        steps.push(StepRecord {
            features,
            chosen,
            logp_old: dist.logprobs[chosen],
            d_before,
            d_after: next.d_t,
            edge_len,
        });
        state = next;
        if terminated {
            break;
        }
    }

    Ok(TrajectoryRecord {
        episode_id: episode.id,
        steps,
        nodes,
        d_final: graph.dist(state.node, episode.goal),
        path_len: state.path_len,
        min_d,
        stopped,
    })
}
