//! Trajectory data and the contrastive batch sampler.

mod file;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use file::{dataset_bytes, parse_dataset, read_dataset, write_dataset, DatasetHeader, DATASET_MAGIC};

use crate::env::{Action, Env, EnvConfig, EnvId, Puzzle, State};
use crate::nn::Matrix;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub env: EnvId,
    pub states: Vec<State>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory has at least one state")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub env: EnvConfig,
    pub trajectories: Vec<Trajectory>,
    /// Longest trajectory, in states.
    pub max_len: usize,
}

impl TrajectoryDataset {
    pub fn new(env: EnvConfig, trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Config("dataset needs at least one trajectory".into()));
        }
        if let Some(t) = trajectories.iter().find(|t| t.env != env.id()) {
            return Err(Error::Config(format!("{:?} trajectory in a {:?} dataset", t.env, env.id())));
        }
        let max_len = trajectories.iter().map(Trajectory::len).max().unwrap_or(0);
        Ok(Self { env, trajectories, max_len })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn mean_len(&self) -> f64 {
        self.trajectories.iter().map(|t| t.len() as f64).sum::<f64>() / self.len() as f64
    }
}

/// How training trajectories are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    /// Random moves per trajectory before cycle removal.
    pub length: usize,
    pub remove_cycles: bool,
}

impl Recipe {
    /// Scramble lengths 21 / 150 / 49 for cube, 15-puzzle and Lights Out,
    /// with cycle removal on the 15-puzzle only.
    pub fn default_for(env: EnvId) -> Self {
        let (length, remove_cycles) = match env {
            EnvId::RubiksCube => (21, false),
            EnvId::FifteenPuzzle => (150, true),
            EnvId::LightsOut => (49, false),
            EnvId::DigitJumper => (0, false),
            EnvId::Sokoban => (60, false),
        };
        Self { length, remove_cycles }
    }
}

/// One goal-terminated trajectory with at least two states.
pub fn generate_trajectory(env: &Env, recipe: &Recipe, rng: &mut dyn rand::RngCore) -> Trajectory {
    loop {
        let walk = env.random_walk(rng, recipe.length);
        let mut traj = Trajectory { env: env.id(), states: walk.states, actions: walk.actions };
        if recipe.remove_cycles {
            traj = remove_single_step_cycles(traj);
        }
        if traj.len() >= 2 {
            return traj;
        }
    }
}

pub fn generate_trajectories(env: &Env, config: &EnvConfig, count: usize, recipe: &Recipe, rng: &mut dyn rand::RngCore) -> Result<TrajectoryDataset> {
    if count == 0 {
        return Err(Error::Config("trajectory count must be >= 1".into()));
    }
    if recipe.length == 0 && env.id() != EnvId::DigitJumper {
        return Err(Error::Config("trajectory length must be >= 1".into()));
    }
    let trajectories = (0..count).map(|_| generate_trajectory(env, recipe, rng)).collect();
    TrajectoryDataset::new(config.clone(), trajectories)
}

/// Deletes every back-and-forth step `s_t -> s_{t+1} -> s_t` until none remain.
pub fn remove_single_step_cycles(traj: Trajectory) -> Trajectory {
    let Trajectory { env, states, actions } = traj;
    let mut kept_states: Vec<State> = Vec::with_capacity(states.len());
    let mut kept_actions: Vec<Action> = Vec::with_capacity(actions.len());
    let mut incoming = std::iter::once(None).chain(actions.into_iter().map(Some));
    for s in states {
        let a = incoming.next().flatten();
        let n = kept_states.len();
        if n >= 2 && kept_states[n - 2] == s {
            kept_states.pop();
            kept_actions.pop();
            continue;
        }
        kept_states.push(s);
        if let Some(a) = a {
            kept_actions.push(a);
        }
    }
    Trajectory { env, states: kept_states, actions: kept_actions }
}

/// Draws `k >= 1` with `P(k) = (1 - discount) * discount^(k - 1)`.
pub fn geometric_offset(discount: f64, rng: &mut dyn rand::RngCore) -> usize {
    if discount <= 0.0 {
        return 1;
    }
    // inversion: P(K > k) = discount^k
    let u: f64 = rng.gen();
    let k = ((1.0 - u).ln() / discount.ln()).floor();
    1 + k.min(u32::MAX as f64) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub discount: f64,
    pub repetition_factor: usize,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(format!("discount {} not in [0, 1)", self.discount)));
        }
        if self.repetition_factor == 0 || !self.batch_size.is_multiple_of(self.repetition_factor) {
            return Err(Error::Config(format!("repetition_factor {} must be >= 1 and divide batch_size {}", self.repetition_factor, self.batch_size)));
        }
        Ok(())
    }

    /// Distinct trajectory draws per batch.
    pub fn draws(&self) -> usize {
        self.batch_size / self.repetition_factor
    }
}

/// Anchor/positive pairs, one column each.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub anchors: Matrix,
    pub positives: Matrix,
    pub traj_ids: Vec<usize>,
    pub t0: Vec<usize>,
    pub t1: Vec<usize>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.traj_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traj_ids.is_empty()
    }
}

/// Repetition-factor sampler: `batch_size / R` trajectory draws, each
/// repeated `R` times in a row, with independent time indices per element.
/// `R = 1` is the plain temporal contrastive sampler.
pub fn sample_batch(env: &Env, ds: &TrajectoryDataset, cfg: &SamplerConfig, rng: &mut dyn rand::RngCore) -> Result<TrainBatch> {
    cfg.validate()?;
    let draws: Vec<usize> = (0..cfg.draws()).map(|_| rng.gen_range(0..ds.len())).collect();
    sample_pairs(env, &ds.trajectories, &draws, cfg, rng)
}

/// Pairs for explicit trajectory draws; each draw is repeated
/// `cfg.repetition_factor` times.
pub fn sample_pairs(env: &Env, trajectories: &[Trajectory], draws: &[usize], cfg: &SamplerConfig, rng: &mut dyn rand::RngCore) -> Result<TrainBatch> {
    let traj_ids: Vec<usize> = draws.iter().flat_map(|&id| std::iter::repeat_n(id, cfg.repetition_factor)).collect();
    let b = traj_ids.len();
    let dim = env.input_dim();
    let mut anchors = Matrix::zeros(dim, b);
    let mut positives = Matrix::zeros(dim, b);
    let mut t0 = Vec::with_capacity(b);
    let mut t1 = Vec::with_capacity(b);
    let mut buf = vec![0.0f32; dim];
    for (col, &id) in traj_ids.iter().enumerate() {
        let traj = &trajectories[id];
        let len = traj.len();
        if len < 2 {
            return Err(Error::Config(format!("trajectory {id} has fewer than two states")));
        }
        let i = rng.gen_range(0..len - 1);
        let j = (i + geometric_offset(cfg.discount, rng)).min(len - 1);
        for (m, t) in [(&mut anchors, i), (&mut positives, j)] {
            buf.fill(0.0);
            env.encode_into(&traj.states[t], &mut buf);
            for (r, &v) in buf.iter().enumerate() {
                if v != 0.0 {
                    m.set(r, col, v);
                }
            }
        }
        t0.push(i);
        t1.push(j);
    }
    Ok(TrainBatch { anchors, positives, traj_ids, t0, t1 })
}

/// Where training pairs come from: a stored dataset, or fresh trajectories
/// generated for every batch.
#[derive(Clone, Debug)]
pub enum DataSource {
    Fixed(TrajectoryDataset),
    Unlimited(Recipe),
}

impl DataSource {
    pub fn sample(&self, env: &Env, cfg: &SamplerConfig, rng: &mut dyn rand::RngCore) -> Result<TrainBatch> {
        match self {
            DataSource::Fixed(ds) => sample_batch(env, ds, cfg, rng),
            DataSource::Unlimited(recipe) => {
                cfg.validate()?;
                let fresh: Vec<Trajectory> = (0..cfg.draws()).map(|_| generate_trajectory(env, recipe, rng)).collect();
                let draws: Vec<usize> = (0..fresh.len()).collect();
                sample_pairs(env, &fresh, &draws, cfg, rng)
            }
        }
    }
}

/// Encodes `states` as the columns of one matrix.
pub fn encode_states<'a>(env: &Env, states: impl IntoIterator<Item = &'a State>) -> Matrix {
    let states: Vec<&State> = states.into_iter().collect();
    let dim = env.input_dim();
    let mut m = Matrix::zeros(dim, states.len());
    let mut buf = vec![0.0f32; dim];
    for (col, s) in states.iter().enumerate() {
        buf.fill(0.0);
        env.encode_into(s, &mut buf);
        for (r, &v) in buf.iter().enumerate() {
            if v != 0.0 {
                m.set(r, col, v);
            }
        }
    }
    m
}
