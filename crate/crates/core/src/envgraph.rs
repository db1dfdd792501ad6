//! Synthetic navigation environments.
//!
//! A [`NavGraph`] is an undirected random geometric graph over points in the
//! plane, with every edge weighted by the Euclidean distance between its
//! endpoints and all-pairs geodesic distances precomputed. Episodes pick a
//! start and goal on a graph and hand the agent only a noisy estimate of the
//! goal position; the true geodesic distances are used for rewards, metrics
//! and the shortest-path expert.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Number of entries in a candidate feature vector.
pub const FEATURE_DIM: usize = 6;

pub type Features = [f64; FEATURE_DIM];

/// Index of each entry in [`Features`].
pub mod feature {
    pub const IS_STOP: usize = 0;
    pub const BEARING_COS: usize = 1;
    pub const NORM_EDGE_LEN: usize = 2;
    pub const REVISIT: usize = 3;
    pub const PROXIMITY: usize = 4;
    pub const BIAS: usize = 5;
}

/// Extra hops allowed beyond the shortest path before an episode is cut off.
pub const STEP_SLACK: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc", into = "GraphDoc")]
pub struct NavGraph {
    id: usize,
    seed: u64,
    connect_radius: f64,
    positions: Vec<[f64; 2]>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
    dist: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: usize,
    x: f64,
    y: f64,
}

/// On-disk layout of a graph. Distances are recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    id: usize,
    seed: u64,
    connect_radius: f64,
    nodes: Vec<NodeDoc>,
    edges: Vec<Edge>,
}

impl From<NavGraph> for GraphDoc {
    fn from(g: NavGraph) -> Self {
        GraphDoc {
            id: g.id,
            seed: g.seed,
            connect_radius: g.connect_radius,
            nodes: g
                .positions
                .iter()
                .enumerate()
                .map(|(id, p)| NodeDoc { id, x: p[0], y: p[1] })
                .collect(),
            edges: g.edges,
        }
    }
}

impl TryFrom<GraphDoc> for NavGraph {
    type Error = Error;

    fn try_from(doc: GraphDoc) -> Result<Self> {
        for (i, n) in doc.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::param("nodes", format!("node {i} has id {}", n.id)));
            }
        }
        let positions: Vec<[f64; 2]> = doc.nodes.iter().map(|n| [n.x, n.y]).collect();
        let pairs: Vec<(usize, usize)> = doc.edges.iter().map(|e| (e.u, e.v)).collect();
        let g = NavGraph::from_edges(positions, &pairs, doc.connect_radius, doc.seed)?;
        for (stored, rebuilt) in doc.edges.iter().zip(&g.edges) {
            if (stored.length - rebuilt.length).abs() > 1e-9 {
                return Err(Error::param(
                    "edges",
                    format!("edge ({}, {}) length disagrees with node positions", stored.u, stored.v),
                ));
            }
        }
        Ok(g.with_id(doc.id))
    }
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then node id
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adjacency: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier { dist: 0.0, node: source });
    while let Some(Frontier { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &adjacency[node] {
            let candidate = d + w;
            if candidate < dist[next] {
                dist[next] = candidate;
                heap.push(Frontier { dist: candidate, node: next });
            }
        }
    }
    dist
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn validate_positions(positions: &[[f64; 2]], connect_radius: f64) -> Result<()> {
    if positions.len() < 2 {
        return Err(Error::param("n_nodes", "at least two nodes are required"));
    }
    if !(connect_radius.is_finite() && connect_radius > 0.0) {
        return Err(Error::param("connect_radius", "must be finite and positive"));
    }
    if positions.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::param("positions", "coordinates must be finite"));
    }
    Ok(())
}

impl NavGraph {
    /// Connects every pair of nodes closer than `connect_radius`, then joins
    /// any remaining components through their nearest node pairs.
    pub fn from_positions(positions: Vec<[f64; 2]>, connect_radius: f64, seed: u64) -> Result<Self> {
        validate_positions(&positions, connect_radius)?;
        let n = positions.len();
        let mut pairs = Vec::new();
        let mut uf = UnionFind::new(n);
        let mut components = n;
        for u in 0..n {
            for v in u + 1..n {
                if euclid(positions[u], positions[v]) <= connect_radius {
                    pairs.push((u, v));
                    if uf.union(u, v) {
                        components -= 1;
                    }
                }
            }
        }
        while components > 1 {
            let mut best: Option<(f64, usize, usize)> = None;
            for u in 0..n {
                for v in u + 1..n {
                    if uf.find(u) == uf.find(v) {
                        continue;
                    }
                    let d = euclid(positions[u], positions[v]);
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, u, v));
                    }
                }
            }
            let (_, u, v) = best.expect("more than one component implies a cross pair");
            pairs.push((u, v));
            uf.union(u, v);
            components -= 1;
        }
        Self::from_edges(positions, &pairs, connect_radius, seed)
    }

    /// Builds a graph with exactly the given undirected edges. Fails if the
    /// result is not connected.
    pub fn from_edges(
        positions: Vec<[f64; 2]>,
        pairs: &[(usize, usize)],
        connect_radius: f64,
        seed: u64,
    ) -> Result<Self> {
        validate_positions(&positions, connect_radius)?;
        let n = positions.len();
        let mut keyed = BTreeSet::new();
        for &(a, b) in pairs {
            if a >= n || b >= n || a == b {
                return Err(Error::param("edges", format!("invalid edge ({a}, {b})")));
            }
            keyed.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<Edge> = keyed
            .into_iter()
            .map(|(u, v)| Edge { u, v, length: euclid(positions[u], positions[v]) })
            .collect();
        if let Some(e) = edges.iter().find(|e| e.length <= 0.0) {
            return Err(Error::param("edges", format!("edge ({}, {}) has zero length", e.u, e.v)));
        }
        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            adjacency[e.u].push((e.v, e.length));
            adjacency[e.v].push((e.u, e.length));
        }
        for nbrs in &mut adjacency {
            nbrs.sort_by_key(|&(v, _)| v);
        }

        let mut dist = vec![0.0; n * n];
        for s in 0..n {
            let row = dijkstra(&adjacency, s);
            if row.iter().any(|d| !d.is_finite()) {
                return Err(Error::Disconnected);
            }
            dist[s * n..(s + 1) * n].copy_from_slice(&row);
        }
        // keep the matrix exactly symmetric
        for u in 0..n {
            for v in u + 1..n {
                dist[v * n + u] = dist[u * n + v];
            }
        }

        Ok(NavGraph {
            id: 0,
            seed,
            connect_radius,
            positions,
            edges,
            adjacency,
            dist,
        })
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn connect_radius(&self) -> f64 {
        self.connect_radius
    }

    pub fn num_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, node: usize) -> [f64; 2] {
        self.positions[node]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbors of `node` with edge lengths, sorted by neighbor id.
    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    pub fn edge_length(&self, u: usize, v: usize) -> Option<f64> {
        let nbrs = &self.adjacency[u];
        nbrs.binary_search_by_key(&v, |&(n, _)| n).ok().map(|i| nbrs[i].1)
    }

    /// Geodesic (shortest-path) distance in meters.
    pub fn dist(&self, u: usize, v: usize) -> f64 {
        self.dist[u * self.positions.len() + v]
    }

    /// Next node on a shortest path from `node` to `goal`, lowest id among
    /// ties. `None` when already at the goal.
    pub fn next_hop(&self, node: usize, goal: usize) -> Option<usize> {
        if node == goal {
            return None;
        }
        let via = |&(v, w): &(usize, f64)| w + self.dist(v, goal);
        let best = self.adjacency[node].iter().map(via).fold(f64::INFINITY, f64::min);
        let tol = 1e-9 * best.max(1.0);
        self.adjacency[node]
            .iter()
            .find(|e| via(e) <= best + tol)
            .map(|&(v, _)| v)
    }

    /// Node sequence of the expert's shortest path, including both ends.
    pub fn shortest_path(&self, start: usize, goal: usize) -> Vec<usize> {
        let mut path = vec![start];
        let mut node = start;
        while let Some(next) = self.next_hop(node, goal) {
            path.push(next);
            node = next;
        }
        path
    }

    pub fn hop_count(&self, start: usize, goal: usize) -> usize {
        self.shortest_path(start, goal).len() - 1
    }
}

/// Random geometric graph on `n_nodes` points uniform in a square.
pub fn generate_graph(n_nodes: usize, area_side: f64, connect_radius: f64, seed: u64) -> Result<NavGraph> {
    if n_nodes < 2 {
        return Err(Error::param("n_nodes", "at least two nodes are required"));
    }
    if !(area_side.is_finite() && area_side > 0.0) {
        return Err(Error::param("area_side", "must be finite and positive"));
    }
    let mut rng = rng::stream(seed, "graph", &[]);
    let positions = (0..n_nodes)
        .map(|_| [rng.random::<f64>() * area_side, rng.random::<f64>() * area_side])
        .collect();
    NavGraph::from_positions(positions, connect_radius, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub id: usize,
    pub graph_id: usize,
    pub start: usize,
    pub goal: usize,
    /// Noisy goal position; the only goal information the policy sees.
    pub goal_estimate: [f64; 2],
    pub l_star: f64,
    /// Success threshold in meters.
    pub epsilon: f64,
    pub t_max: usize,
}

impl EpisodeSpec {
    /// Builds an episode with the standard step budget and checks it against
    /// the graph.
    pub fn new(
        graph: &NavGraph,
        id: usize,
        start: usize,
        goal: usize,
        goal_estimate: [f64; 2],
        epsilon: f64,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if start >= n || goal >= n {
            return Err(Error::param("episode", "start/goal out of range"));
        }
        if start == goal {
            return Err(Error::param("episode", "start and goal coincide"));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be finite and positive"));
        }
        Ok(EpisodeSpec {
            id,
            graph_id: graph.id(),
            start,
            goal,
            goal_estimate,
            l_star: graph.dist(start, goal),
            epsilon,
            t_max: graph.hop_count(start, goal) + STEP_SLACK,
        })
    }

    pub fn with_t_max(mut self, t_max: usize) -> Self {
        self.t_max = t_max;
        self
    }
}

/// Draws `count` start/goal pairs uniformly (with replacement) among those
/// whose geodesic distance lies in `l_range`.
pub fn sample_episodes(
    graph: &NavGraph,
    count: usize,
    l_range: (f64, f64),
    noise_sigma: f64,
    epsilon: f64,
    seed: u64,
) -> Result<Vec<EpisodeSpec>> {
    let (lo, hi) = l_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::param("l_range", "bounds must be finite with lo <= hi"));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::param("noise_sigma", "must be finite and non-negative"));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::param("epsilon", "must be finite and positive"));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let n = graph.num_nodes();
    let feasible: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..n).map(move |g| (s, g)))
        .filter(|&(s, g)| {
            let d = graph.dist(s, g);
            s != g && d > 0.0 && d >= lo && d <= hi
        })
        .collect();
    if feasible.is_empty() {
        return Err(Error::InfeasibleLengthRange { lo, hi });
    }

    let mut rng = rng::stream(seed, "episodes", &[graph.id() as u64]);
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    (0..count)
        .map(|id| {
            let (start, goal) = feasible[rng.random_range(0..feasible.len())];
            let mut goal_estimate = graph.position(goal);
            if noise_sigma > 0.0 {
                goal_estimate[0] += noise.sample(&mut rng);
                goal_estimate[1] += noise.sample(&mut rng);
            }
            EpisodeSpec::new(graph, id, start, goal, goal_estimate, epsilon)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Move,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionCandidate {
    pub kind: ActionKind,
    /// Destination node; the current node for a stop.
    pub target: usize,
    pub features: Features,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub node: usize,
    pub visited: BTreeSet<usize>,
    pub step: usize,
    pub path_len: f64,
    /// Geodesic distance to the true goal. Used for rewards only.
    pub d_t: f64,
}

impl AgentState {
    pub fn start(graph: &NavGraph, episode: &EpisodeSpec) -> Self {
        AgentState {
            node: episode.start,
            visited: BTreeSet::from([episode.start]),
            step: 0,
            path_len: 0.0,
            d_t: graph.dist(episode.start, episode.goal),
        }
    }
}

fn proximity(pos: [f64; 2], goal_estimate: [f64; 2], epsilon: f64) -> f64 {
    let dx = pos[0] - goal_estimate[0];
    let dy = pos[1] - goal_estimate[1];
    (-(dx * dx + dy * dy) / (2.0 * epsilon * epsilon)).exp()
}

fn bearing_cos(from: [f64; 2], to: [f64; 2], goal_estimate: [f64; 2]) -> f64 {
    let a = [to[0] - from[0], to[1] - from[1]];
    let b = [goal_estimate[0] - from[0], goal_estimate[1] - from[1]];
    let na = a[0].hypot(a[1]);
    let nb = b[0].hypot(b[1]);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    ((a[0] * b[0] + a[1] * b[1]) / (na * nb)).clamp(-1.0, 1.0)
}

impl NavGraph {
    /// Available actions at the agent's node: the stop action first, then one
    /// move per neighbor in ascending node id.
    pub fn candidates(&self, state: &AgentState, episode: &EpisodeSpec) -> Vec<ActionCandidate> {
        let here = self.position(state.node);
        let revisit = |n: usize| if state.visited.contains(&n) { 1.0 } else { 0.0 };

        let mut out = Vec::with_capacity(self.adjacency[state.node].len() + 1);
        out.push(ActionCandidate {
            kind: ActionKind::Stop,
            target: state.node,
            features: [
                1.0,
                0.0,
                0.0,
                revisit(state.node),
                proximity(here, episode.goal_estimate, episode.epsilon),
                1.0,
            ],
        });
        for &(nbr, len) in &self.adjacency[state.node] {
            let there = self.position(nbr);
            out.push(ActionCandidate {
                kind: ActionKind::Move,
                target: nbr,
                features: [
                    0.0,
                    bearing_cos(here, there, episode.goal_estimate),
                    (len / self.connect_radius).clamp(0.0, 1.0),
                    revisit(nbr),
                    proximity(there, episode.goal_estimate, episode.epsilon),
                    1.0,
                ],
            });
        }
        out
    }

    /// Applies an action. Returns the next state and whether the episode has
    /// terminated, either by stopping or by exhausting the step budget.
    pub fn step(
        &self,
        mut state: AgentState,
        action: &ActionCandidate,
        episode: &EpisodeSpec,
    ) -> Result<(AgentState, bool)> {
        let stopped = match action.kind {
            ActionKind::Stop => {
                if action.target != state.node {
                    return Err(Error::InvalidAction { node: state.node, target: action.target });
                }
                true
            }
            ActionKind::Move => {
                let len = self
                    .edge_length(state.node, action.target)
                    .ok_or(Error::InvalidAction { node: state.node, target: action.target })?;
                state.node = action.target;
                state.visited.insert(action.target);
                state.path_len += len;
                state.d_t = self.dist(action.target, episode.goal);
                false
            }
        };
        state.step += 1;
        let terminated = stopped || state.step >= episode.t_max;
        Ok((state, terminated))
    }

    /// Index into [`NavGraph::candidates`] of the shortest-path expert action.
    pub fn expert_action(&self, state: &AgentState, episode: &EpisodeSpec) -> usize {
        match self.next_hop(state.node, episode.goal) {
            None => 0,
            Some(next) => {
                1 + self.adjacency[state.node]
                    .binary_search_by_key(&next, |&(n, _)| n)
                    .expect("next hop is a neighbor")
            }
        }
    }
}

/// Graphs and episodes of one data split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSplit {
    pub graphs: Vec<NavGraph>,
    pub episodes: Vec<EpisodeSpec>,
}

impl EnvSplit {
    pub fn graph(&self, id: usize) -> Result<&NavGraph> {
        self.graphs
            .iter()
            .find(|g| g.id() == id)
            .ok_or(Error::UnknownGraph(id))
    }

    pub fn graph_for(&self, episode: &EpisodeSpec) -> Result<&NavGraph> {
        self.graph(episode.graph_id)
    }

    pub fn episode(&self, id: usize) -> Result<&EpisodeSpec> {
        self.episodes
            .iter()
            .find(|e| e.id == id)
            .ok_or(Error::UnknownEpisode(id))
    }

    /// Checks that every episode refers to a graph in this split and is
    /// consistent with its geodesics.
    pub fn validate(&self) -> Result<()> {
        for ep in &self.episodes {
            let g = self.graph_for(ep)?;
            if ep.start >= g.num_nodes() || ep.goal >= g.num_nodes() {
                return Err(Error::param("episodes", format!("episode {} out of range", ep.id)));
            }
            if (g.dist(ep.start, ep.goal) - ep.l_star).abs() > 1e-9 || ep.l_star <= 0.0 {
                return Err(Error::param("episodes", format!("episode {} has stale l_star", ep.id)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn path_graph() -> NavGraph {
        NavGraph::from_edges(vec![[0.0, 0.0], [2.0, 0.0], [5.0, 0.0]], &[(0, 1), (1, 2)], 4.0, 0).unwrap()
    }

    #[test]
    fn two_node_graph_has_single_unit_edge() {
        let g = NavGraph::from_positions(vec![[0.0, 0.0], [1.0, 0.0]], 2.0, 99).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.dist(0, 1), 1.0);
        assert_eq!(g.dist(1, 0), 1.0);
    }

    #[test]
    fn disconnected_points_are_repaired_with_one_bridge() {
        let pos = vec![[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]];
        let g = NavGraph::from_positions(pos, 2.0, 0).unwrap();
        assert_eq!(g.edges().len(), 3);
        assert!(g.edge_length(1, 2).is_some());
        assert_abs_diff_eq!(g.dist(0, 3), 11.0, epsilon = 1e-12);
    }

    #[test]
    fn explicit_disconnected_edges_are_rejected() {
        let pos = vec![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]];
        assert!(matches!(
            NavGraph::from_edges(pos, &[(0, 1)], 2.0, 0),
            Err(Error::Disconnected)
        ));
    }

    #[test]
    fn invalid_generation_parameters_are_rejected() {
        assert!(generate_graph(1, 10.0, 2.0, 0).is_err());
        assert!(generate_graph(10, 0.0, 2.0, 0).is_err());
        assert!(generate_graph(10, 10.0, -1.0, 0).is_err());
    }

    #[test]
    fn candidate_cardinality_and_layout() {
        let g = NavGraph::from_edges(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]],
            &[(0, 1), (0, 2), (0, 3)],
            2.0,
            0,
        )
        .unwrap();
        let ep = EpisodeSpec::new(&g, 0, 0, 1, [3.0, 0.0], 3.0).unwrap();
        let st = AgentState::start(&g, &ep);
        let c = g.candidates(&st, &ep);
        assert_eq!(c.len(), 4);
        assert_eq!(c.iter().filter(|a| a.kind == ActionKind::Stop).count(), 1);
        assert_eq!(c[0].kind, ActionKind::Stop);
        // neighbor 1 lies straight toward the goal estimate
        assert_abs_diff_eq!(c[1].features[feature::BEARING_COS], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[3].features[feature::BEARING_COS], -1.0, epsilon = 1e-12);
        for a in &c {
            assert!(a.features.iter().all(|x| (-1.0..=1.0).contains(x)));
            assert_eq!(a.features[feature::BIAS], 1.0);
        }
    }

    #[test]
    fn stop_proximity_is_one_at_goal_estimate() {
        let g = path_graph();
        let ep = EpisodeSpec::new(&g, 0, 0, 2, [0.0, 0.0], 3.0).unwrap();
        let st = AgentState::start(&g, &ep);
        let c = g.candidates(&st, &ep);
        assert_eq!(c[0].features[feature::PROXIMITY], 1.0);
    }

    #[test]
    fn step_semantics() {
        let g = path_graph();
        let ep = EpisodeSpec::new(&g, 0, 0, 2, [5.0, 0.0], 1.0).unwrap();
        let st = AgentState::start(&g, &ep);
        let c = g.candidates(&st, &ep);

        let (stopped, term) = g.step(st.clone(), &c[0], &ep).unwrap();
        assert!(term);
        assert_eq!(stopped.node, st.node);
        assert_eq!(stopped.step, 1);
        assert_eq!(stopped.path_len, 0.0);

        let (moved, term) = g.step(st.clone(), &c[1], &ep).unwrap();
        assert!(!term);
        assert_eq!(moved.node, 1);
        assert_eq!(moved.path_len, 2.0);
        assert_eq!(moved.d_t, g.dist(1, 2));
        assert!(moved.visited.contains(&1));

        let bogus = ActionCandidate { kind: ActionKind::Move, target: 2, features: [0.0; FEATURE_DIM] };
        assert!(matches!(g.step(st, &bogus, &ep), Err(Error::InvalidAction { .. })));
    }

    #[test]
    fn budget_exhaustion_terminates() {
        let g = path_graph();
        let ep = EpisodeSpec::new(&g, 0, 0, 2, [5.0, 0.0], 1.0).unwrap().with_t_max(1);
        let st = AgentState::start(&g, &ep);
        let c = g.candidates(&st, &ep);
        let (_, term) = g.step(st, &c[1], &ep).unwrap();
        assert!(term);
    }

    #[test]
    fn expert_on_path_graph() {
        let g = path_graph();
        let ep = EpisodeSpec::new(&g, 0, 0, 2, [5.0, 0.0], 1.0).unwrap();
        let st = AgentState::start(&g, &ep);
        let c = g.candidates(&st, &ep);
        let idx = g.expert_action(&st, &ep);
        assert_eq!(c[idx].target, 1);

        let at_goal = AgentState { node: 2, ..st };
        assert_eq!(g.expert_action(&at_goal, &ep), 0);
        assert_eq!(ep.t_max, 2 + STEP_SLACK);
    }

    #[test]
    fn expert_tie_break_prefers_lowest_id() {
        // square: 0 -> {1, 2} -> 3 with equal lengths
        let g = NavGraph::from_edges(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            &[(0, 1), (0, 2), (1, 3), (2, 3)],
            2.0,
            0,
        )
        .unwrap();
        assert_eq!(g.next_hop(0, 3), Some(1));
    }

    #[test]
    fn zero_noise_and_empty_requests() {
        let g = generate_graph(30, 25.0, 7.0, 3).unwrap();
        assert!(sample_episodes(&g, 0, (1000.0, 2000.0), 1.0, 3.0, 1).unwrap().is_empty());
        let eps = sample_episodes(&g, 20, (5.0, 15.0), 0.0, 3.0, 1).unwrap();
        for ep in &eps {
            assert_eq!(ep.goal_estimate, g.position(ep.goal));
            assert!(ep.l_star >= 5.0 && ep.l_star <= 15.0);
        }
        assert!(matches!(
            sample_episodes(&g, 3, (1000.0, 2000.0), 1.0, 3.0, 1),
            Err(Error::InfeasibleLengthRange { .. })
        ));
    }

    #[test]
    fn graph_json_round_trip() {
        let g = generate_graph(25, 20.0, 6.0, 11).unwrap().with_id(4);
        let json = serde_json::to_string(&g).unwrap();
        let back: NavGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(g, back);
    }
}
