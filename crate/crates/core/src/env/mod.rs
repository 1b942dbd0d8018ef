//! Deterministic goal-conditioned puzzles.
//!
//! Every environment stores its state as a compact token string (one byte per
//! token) and exposes the same surface through [`Puzzle`]; [`Env`] dispatches
//! over the five concrete puzzles.

mod cube;
mod digit_jumper;
mod fifteen;
mod lights_out;
mod sokoban;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cube::RubiksCube;
pub use digit_jumper::DigitJumper;
pub use fifteen::FifteenPuzzle;
pub use lights_out::LightsOut;
pub use sokoban::Sokoban;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    RubiksCube,
    FifteenPuzzle,
    LightsOut,
    DigitJumper,
    Sokoban,
}

impl EnvId {
    pub fn name(self) -> &'static str {
        match self {
            EnvId::RubiksCube => "rubiks_cube",
            EnvId::FifteenPuzzle => "fifteen_puzzle",
            EnvId::LightsOut => "lights_out",
            EnvId::DigitJumper => "digit_jumper",
            EnvId::Sokoban => "sokoban",
        }
    }
}

/// Environment choice plus board parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum EnvConfig {
    RubiksCube,
    FifteenPuzzle,
    LightsOut {
        height: usize,
        width: usize,
    },
    DigitJumper {
        height: usize,
        width: usize,
    },
    Sokoban {
        height: usize,
        width: usize,
        boxes: usize,
        #[serde(default = "default_wall_density")]
        wall_density: f64,
    },
}

fn default_wall_density() -> f64 {
    0.2
}

impl EnvConfig {
    pub fn rubiks_cube() -> Self {
        EnvConfig::RubiksCube
    }

    pub fn fifteen_puzzle() -> Self {
        EnvConfig::FifteenPuzzle
    }

    pub fn lights_out() -> Self {
        EnvConfig::LightsOut { height: 7, width: 7 }
    }

    pub fn digit_jumper(size: usize) -> Self {
        EnvConfig::DigitJumper { height: size, width: size }
    }

    pub fn sokoban() -> Self {
        EnvConfig::Sokoban { height: 12, width: 12, boxes: 4, wall_density: default_wall_density() }
    }

    pub fn id(&self) -> EnvId {
        match self {
            EnvConfig::RubiksCube => EnvId::RubiksCube,
            EnvConfig::FifteenPuzzle => EnvId::FifteenPuzzle,
            EnvConfig::LightsOut { .. } => EnvId::LightsOut,
            EnvConfig::DigitJumper { .. } => EnvId::DigitJumper,
            EnvConfig::Sokoban { .. } => EnvId::Sokoban,
        }
    }

    pub fn build(&self) -> Result<Env> {
        Ok(match *self {
            EnvConfig::RubiksCube => Env::RubiksCube(RubiksCube::new()),
            EnvConfig::FifteenPuzzle => Env::FifteenPuzzle(FifteenPuzzle::new()),
            EnvConfig::LightsOut { height, width } => Env::LightsOut(LightsOut::new(height, width)?),
            EnvConfig::DigitJumper { height, width } => Env::DigitJumper(DigitJumper::new(height, width)?),
            EnvConfig::Sokoban { height, width, boxes, wall_density } => Env::Sokoban(Sokoban::new(height, width, boxes, wall_density)?),
        })
    }
}

/// Token string of one puzzle configuration.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State(Box<[u8]>);

impl State {
    pub fn new(tokens: impl Into<Box<[u8]>>) -> Self {
        State(tokens.into())
    }

    #[inline]
    pub fn tokens(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Debug for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "State({:?})", self.0)
    }
}

/// Index into the environment's action set.
pub type Action = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub start: State,
    pub goal: State,
}

/// A forward sequence of states that ends in a goal configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Walk {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
}

pub trait Puzzle {
    fn id(&self) -> EnvId;

    fn num_actions(&self) -> usize;

    /// Tokens per state.
    fn token_len(&self) -> usize;

    fn apply(&self, s: &State, a: Action) -> Result<State>;

    /// Legal successors in ascending action order.
    fn neighbors(&self, s: &State) -> Vec<(Action, State)> {
        (0..self.num_actions()).filter_map(|a| self.apply(s, a).ok().map(|n| (a, n))).collect()
    }

    /// States with a legal move into `s`.
    fn predecessors(&self, s: &State) -> Vec<State>;

    fn is_goal(&self, s: &State, g: &State) -> bool;

    /// Width of the network input produced by [`Puzzle::encode_into`].
    fn input_dim(&self) -> usize;

    /// Writes the feature vector of `s` into `out`, which must be zeroed.
    fn encode_into(&self, s: &State, out: &mut [f32]);

    fn encode(&self, s: &State) -> Vec<f32> {
        let mut v = vec![0.0; self.input_dim()];
        self.encode_into(s, &mut v);
        v
    }

    /// An action undoing `a` applied in `s`, when one exists.
    fn inverse(&self, s: &State, a: Action) -> Option<Action>;

    /// Checks the environment's state invariants.
    fn validate(&self, s: &State) -> Result<()>;

    /// A successful trajectory built from `length` random moves.
    fn random_walk(&self, rng: &mut dyn rand::RngCore, length: usize) -> Walk;

    fn generate_instance(&self, rng: &mut dyn rand::RngCore, difficulty: usize) -> Instance;

    /// Canonical text rendering.
    fn render(&self, s: &State) -> String;
}

/// Random walk of `length` legal moves outward from `goal`, returned reversed
/// so the trajectory ends at `goal`.
pub(crate) fn reversed_scramble<P: Puzzle + ?Sized>(p: &P, goal: State, rng: &mut dyn rand::RngCore, length: usize) -> Walk {
    let mut states = Vec::with_capacity(length + 1);
    let mut outward = Vec::with_capacity(length);
    states.push(goal);
    for _ in 0..length {
        let cur = states.last().unwrap();
        let mut nbrs = p.neighbors(cur);
        let pick = rng.gen_range(0..nbrs.len());
        let (a, next) = nbrs.swap_remove(pick);
        outward.push(a);
        states.push(next);
    }
    let actions = (0..length).rev().map(|i| p.inverse(&states[i], outward[i]).expect("scrambled environments are reversible")).collect();
    states.reverse();
    Walk { states, actions }
}

/// Applies `actions` from `start`, failing on the first illegal move.
pub fn replay<P: Puzzle + ?Sized>(p: &P, start: &State, actions: &[Action]) -> Result<State> {
    actions.iter().try_fold(start.clone(), |s, &a| p.apply(&s, a))
}

/// The closed set of puzzles behind one dispatching type.
#[derive(Clone, Debug)]
pub enum Env {
    RubiksCube(RubiksCube),
    FifteenPuzzle(FifteenPuzzle),
    LightsOut(LightsOut),
    DigitJumper(DigitJumper),
    Sokoban(Sokoban),
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Env::RubiksCube($p) => $e,
            Env::FifteenPuzzle($p) => $e,
            Env::LightsOut($p) => $e,
            Env::DigitJumper($p) => $e,
            Env::Sokoban($p) => $e,
        }
    };
}

impl Env {
    /// Whether every move can be undone by another move in the action set.
    pub fn is_reversible(&self) -> bool {
        matches!(self, Env::RubiksCube(_) | Env::FifteenPuzzle(_) | Env::LightsOut(_))
    }
}

impl Puzzle for Env {
    fn id(&self) -> EnvId {
        dispatch!(self, p => p.id())
    }
    fn num_actions(&self) -> usize {
        dispatch!(self, p => p.num_actions())
    }
    fn token_len(&self) -> usize {
        dispatch!(self, p => p.token_len())
    }
    fn apply(&self, s: &State, a: Action) -> Result<State> {
        dispatch!(self, p => p.apply(s, a))
    }
    fn neighbors(&self, s: &State) -> Vec<(Action, State)> {
        dispatch!(self, p => p.neighbors(s))
    }
    fn predecessors(&self, s: &State) -> Vec<State> {
        dispatch!(self, p => p.predecessors(s))
    }
    fn is_goal(&self, s: &State, g: &State) -> bool {
        dispatch!(self, p => p.is_goal(s, g))
    }
    fn input_dim(&self) -> usize {
        dispatch!(self, p => p.input_dim())
    }
    fn encode_into(&self, s: &State, out: &mut [f32]) {
        dispatch!(self, p => p.encode_into(s, out))
    }
    fn inverse(&self, s: &State, a: Action) -> Option<Action> {
        dispatch!(self, p => p.inverse(s, a))
    }
    fn validate(&self, s: &State) -> Result<()> {
        dispatch!(self, p => p.validate(s))
    }
    fn random_walk(&self, rng: &mut dyn rand::RngCore, length: usize) -> Walk {
        dispatch!(self, p => p.random_walk(rng, length))
    }
    fn generate_instance(&self, rng: &mut dyn rand::RngCore, difficulty: usize) -> Instance {
        dispatch!(self, p => p.generate_instance(rng, difficulty))
    }
    fn render(&self, s: &State) -> String {
        dispatch!(self, p => p.render(s))
    }
}

/// Grid helpers shared by the board puzzles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Grid {
    pub height: usize,
    pub width: usize,
}

/// Up, down, left, right.
pub(crate) const DIRS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

pub(crate) fn opposite_dir(d: usize) -> usize {
    d ^ 1
}

impl Grid {
    pub fn new(height: usize, width: usize, what: &str) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config(format!("{what}: board must be at least 1x1")));
        }
        Ok(Self { height, width })
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Cell reached from `cell` by `steps` in direction `dir`, if on the board.
    #[inline]
    pub fn step(&self, cell: usize, dir: usize, steps: usize) -> Option<usize> {
        let (dr, dc) = DIRS[dir];
        let r = (cell / self.width) as isize + dr * steps as isize;
        let c = (cell % self.width) as isize + dc * steps as isize;
        (r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width).then(|| r as usize * self.width + c as usize)
    }
}

pub(crate) fn shuffle_cells(rng: &mut dyn rand::RngCore, cells: &mut [usize]) {
    cells.shuffle(rng);
}
