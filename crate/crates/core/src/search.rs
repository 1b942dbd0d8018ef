//! Planners over puzzle graphs driven by a state scorer: greedy rollout,
//! best-first search and weighted A*.

use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::contrastive::{pairwise_scores, SimilarityMetric};
use crate::dataset::encode_states;
use crate::env::{Action, Env, Instance, Puzzle, State};
use crate::nn::{encode, EncoderParams, Matrix};
use crate::rng::mix64;
use crate::supervised::predicted_distances;
use crate::{Error, Result};

/// State heuristic; higher means closer to `goal`.
pub trait Scorer: Send + Sync {
    fn score_batch(&self, states: &[&State], goal: &State) -> Result<Vec<f32>>;

    fn score(&self, state: &State, goal: &State) -> Result<f32> {
        Ok(self.score_batch(&[state], goal)?[0])
    }
}

/// Raw critic similarity between state and goal embeddings.
#[derive(Clone, Debug)]
pub struct CriticScorer {
    pub env: Env,
    pub params: EncoderParams,
    pub metric: SimilarityMetric,
}

impl Scorer for CriticScorer {
    fn score_batch(&self, states: &[&State], goal: &State) -> Result<Vec<f32>> {
        let input = encode_states(&self.env, states.iter().copied().chain(std::iter::once(goal)));
        let emb = encode(&self.params, &input)?;
        let n = states.len();
        let scores = pairwise_scores(&emb.columns(0, n), &emb.columns(n, 1), self.metric, 1.0)?;
        Ok(scores.into_vec())
    }
}

/// Negated expected distance bin of the supervised classifier.
#[derive(Clone, Debug)]
pub struct SupervisedScorer {
    pub env: Env,
    pub params: EncoderParams,
}

impl Scorer for SupervisedScorer {
    fn score_batch(&self, states: &[&State], goal: &State) -> Result<Vec<f32>> {
        let input = encode_states(&self.env, states.iter().copied());
        let d = predicted_distances(&self.params, &input, &self.env.encode(goal))?;
        Ok(d.into_iter().map(|x| -x).collect())
    }
}

/// Negated exact distance to the goal; states beyond `radius` score
/// `-(radius + 1)`. Distance tables are built on first use per goal.
pub struct OracleScorer {
    env: Env,
    radius: usize,
    capacity: usize,
    tables: Mutex<HashMap<State, Arc<HashMap<State, u32>>>>,
}

impl OracleScorer {
    pub fn new(env: Env, radius: usize, capacity: usize) -> Self {
        Self { env, radius, capacity, tables: Mutex::new(HashMap::new()) }
    }

    pub fn table(&self, goal: &State) -> Result<Arc<HashMap<State, u32>>> {
        // held across the build so concurrent callers do not duplicate it
        let mut tables = self.tables.lock().expect("oracle cache poisoned");
        if let Some(t) = tables.get(goal) {
            return Ok(Arc::clone(t));
        }
        let t = Arc::new(oracle_distances(&self.env, goal, self.radius, self.capacity)?);
        tables.insert(goal.clone(), Arc::clone(&t));
        Ok(t)
    }
}

impl Scorer for OracleScorer {
    fn score_batch(&self, states: &[&State], goal: &State) -> Result<Vec<f32>> {
        let t = self.table(goal)?;
        let far = (self.radius + 1) as f32;
        Ok(states.iter().map(|s| t.get(*s).map_or(-far, |&d| -(d as f32))).collect())
    }
}

/// Deterministic noise in `[0, 1)` from a hash of (seed, state, goal).
#[derive(Clone, Copy, Debug)]
pub struct RandomScorer {
    pub seed: u64,
}

fn fnv1a(h: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(h, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl Scorer for RandomScorer {
    fn score_batch(&self, states: &[&State], goal: &State) -> Result<Vec<f32>> {
        let g = fnv1a(0xcbf2_9ce4_8422_2325 ^ mix64(self.seed), goal.tokens());
        Ok(states.iter().map(|s| (mix64(fnv1a(g, s.tokens())) >> 40) as f32 / (1u64 << 24) as f32).collect())
    }
}

/// Negated count of differing tokens.
#[derive(Clone, Copy, Debug, Default)]
pub struct HammingScorer;

impl Scorer for HammingScorer {
    fn score_batch(&self, states: &[&State], goal: &State) -> Result<Vec<f32>> {
        Ok(states
            .iter()
            .map(|s| {
                let diff = s.tokens().iter().zip(goal.tokens()).filter(|(a, b)| a != b).count();
                -(diff as f32)
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    Greedy,
    Bestfs,
    Astar,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Cap on states materialized in one attempt, start included.
    pub max_nodes: usize,
    /// Keep only the best `k` children of each expansion.
    pub top_k: Option<usize>,
    /// Greedy only: step back onto visited states instead of failing.
    pub allow_revisits: bool,
    /// Record expanded states in [`SearchResult::trace`].
    pub record_trace: bool,
}

impl SearchConfig {
    pub fn with_budget(max_nodes: usize) -> Self {
        Self { max_nodes, top_k: None, allow_revisits: false, record_trace: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_nodes == 0 {
            return Err(Error::Config("search budget must be >= 1".into()));
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchResult {
    pub solved: bool,
    pub solution: Vec<Action>,
    pub length: usize,
    pub nodes_created: usize,
    pub expansions: usize,
    pub wall_ms: f64,
    pub trace: Vec<State>,
}

impl SearchResult {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &SearchResult) -> bool {
        (self.solved, &self.solution, self.nodes_created, self.expansions, &self.trace)
            == (other.solved, &other.solution, other.nodes_created, other.expansions, &other.trace)
    }
}

/// `k` best children by score, ties by action index; the result is sorted
/// best first.
pub fn top_k_filter(mut children: Vec<(Action, State, f32)>, k: usize) -> Vec<(Action, State, f32)> {
    children.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    children.truncate(k);
    children
}

/// Moves to the best-scoring unvisited neighbour until the goal is reached,
/// the budget runs out, or every neighbour has been visited.
pub fn greedy_solve(env: &Env, scorer: &dyn Scorer, start: &State, goal: &State, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut res = SearchResult { nodes_created: 1, ..SearchResult::default() };
    let mut visited: HashSet<State> = HashSet::from([start.clone()]);
    let mut cur = start.clone();
    loop {
        if cfg.record_trace {
            res.trace.push(cur.clone());
        }
        if env.is_goal(&cur, goal) {
            res.solved = true;
            break;
        }
        let children: Vec<(Action, State)> = env.neighbors(&cur).into_iter().filter(|(_, s)| cfg.allow_revisits || !visited.contains(s)).collect();
        if children.is_empty() || res.nodes_created >= cfg.max_nodes {
            break;
        }
        let refs: Vec<&State> = children.iter().map(|(_, s)| s).collect();
        let scores = scorer.score_batch(&refs, goal)?;
        res.expansions += 1;
        let best = (0..children.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        let (a, next) = children.into_iter().nth(best).expect("best child index in range");
        res.solution.push(a);
        visited.insert(next.clone());
        res.nodes_created += 1;
        cur = next;
    }
    res.length = res.solution.len();
    res.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
    Ok(res)
}

struct Node {
    state: State,
    parent: usize,
    action: Action,
    cost: usize,
}

#[derive(PartialEq)]
struct Frontier {
    key: f32,
    seq: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.total_cmp(&other.key).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Expands the frontier node with the highest score; no state is enqueued
/// twice. Equal scores expand in insertion order.
pub fn best_first_search(env: &Env, scorer: &dyn Scorer, start: &State, goal: &State, cfg: &SearchConfig) -> Result<SearchResult> {
    a_star(env, scorer, 0.0, start, goal, cfg)
}

/// Weighted A*: expands the node minimizing `-score + alpha * path_cost`.
pub fn a_star(env: &Env, scorer: &dyn Scorer, alpha: f32, start: &State, goal: &State, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let clock = Instant::now();
    let mut res = SearchResult { nodes_created: 1, ..SearchResult::default() };
    let mut nodes = vec![Node { state: start.clone(), parent: usize::MAX, action: 0, cost: 0 }];
    let mut seen: HashSet<State> = HashSet::from([start.clone()]);
    let mut heap = BinaryHeap::new();
    let mut found = env.is_goal(start, goal).then_some(0);
    if found.is_none() {
        let s = scorer.score(start, goal)?;
        heap.push(Frontier { key: s, seq: 0 });
    }
    'search: while let Some(Frontier { seq: id, .. }) = heap.pop() {
        if found.is_some() {
            break;
        }
        res.expansions += 1;
        if cfg.record_trace {
            res.trace.push(nodes[id].state.clone());
        }
        let children: Vec<(Action, State)> = env.neighbors(&nodes[id].state).into_iter().filter(|(_, s)| !seen.contains(s)).collect();
        if children.is_empty() {
            continue;
        }
        let refs: Vec<&State> = children.iter().map(|(_, s)| s).collect();
        let scores = scorer.score_batch(&refs, goal)?;
        let mut scored: Vec<(Action, State, f32)> = children.into_iter().zip(scores).map(|((a, s), v)| (a, s, v)).collect();
        if let Some(k) = cfg.top_k {
            scored = top_k_filter(scored, k);
        }
        let cost = nodes[id].cost + 1;
        for (action, state, score) in scored {
            if res.nodes_created >= cfg.max_nodes {
                break 'search;
            }
            res.nodes_created += 1;
            seen.insert(state.clone());
            let child = nodes.len();
            let is_goal = env.is_goal(&state, goal);
            nodes.push(Node { state, parent: id, action, cost });
            if is_goal {
                found = Some(child);
                break 'search;
            }
            heap.push(Frontier { key: score - alpha * cost as f32, seq: child });
        }
    }
    if let Some(mut id) = found {
        res.solved = true;
        while nodes[id].parent != usize::MAX {
            res.solution.push(nodes[id].action);
            id = nodes[id].parent;
        }
        res.solution.reverse();
    }
    res.length = res.solution.len();
    res.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
    Ok(res)
}

pub fn solve(env: &Env, scorer: &dyn Scorer, planner: Planner, alpha: f32, inst: &Instance, cfg: &SearchConfig) -> Result<SearchResult> {
    match planner {
        Planner::Greedy => greedy_solve(env, scorer, &inst.start, &inst.goal, cfg),
        Planner::Bestfs => best_first_search(env, scorer, &inst.start, &inst.goal, cfg),
        Planner::Astar => a_star(env, scorer, alpha, &inst.start, &inst.goal, cfg),
    }
}

/// Exact distances to `goal` for every state within `radius` moves,
/// by breadth-first search over predecessors.
pub fn oracle_distances(env: &Env, goal: &State, radius: usize, capacity: usize) -> Result<HashMap<State, u32>> {
    let mut dist = HashMap::from([(goal.clone(), 0u32)]);
    let mut queue = VecDeque::from([goal.clone()]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        if d as usize >= radius {
            continue;
        }
        for p in env.predecessors(&s) {
            if let Entry::Vacant(e) = dist.entry(p) {
                let key = e.key().clone();
                e.insert(d + 1);
                queue.push_back(key);
                if dist.len() > capacity {
                    return Err(Error::Capacity(format!("oracle search from goal exceeded {capacity} states within radius {radius}")));
                }
            }
        }
    }
    Ok(dist)
}

/// Per-instance results as `instance_id,solved,length,nodes_created,wall_ms`,
/// preceded by a `# config_hash=` comment line.
pub fn write_results_csv(path: &Path, config_hash: &str, results: &[SearchResult]) -> Result<()> {
    let mut out = format!("# config_hash={config_hash}\ninstance_id,solved,length,nodes_created,wall_ms\n");
    for (i, r) in results.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{:.3}\n", r.solved, r.length, r.nodes_created, r.wall_ms));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Encodes `states` for a critic and returns their embeddings.
pub fn embed_states(env: &Env, params: &EncoderParams, states: &[&State]) -> Result<Matrix> {
    encode(params, &encode_states(env, states.iter().copied()))
}
