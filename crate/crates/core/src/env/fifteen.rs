use super::{opposite_dir, reversed_scramble, Action, EnvId, Grid, Instance, Puzzle, State, Walk};
use crate::{Error, Result};

const SIDE: usize = 4;
const CELLS: usize = SIDE * SIDE;

/// 4x4 sliding-tile puzzle. Token `0` is the blank; actions move the blank
/// up, down, left, right.
#[derive(Clone, Debug)]
pub struct FifteenPuzzle {
    grid: Grid,
}

impl Default for FifteenPuzzle {
    fn default() -> Self {
        Self::new()
    }
}

impl FifteenPuzzle {
    pub fn new() -> Self {
        Self { grid: Grid { height: SIDE, width: SIDE } }
    }

    /// Tiles 1..15 in reading order, blank bottom-right.
    pub fn solved() -> State {
        let mut t: Vec<u8> = (1..=CELLS as u8).collect();
        t[CELLS - 1] = 0;
        State::new(t)
    }

    fn blank(s: &State) -> usize {
        s.tokens().iter().position(|&t| t == 0).expect("state has a blank")
    }
}

impl Puzzle for FifteenPuzzle {
    fn id(&self) -> EnvId {
        EnvId::FifteenPuzzle
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn token_len(&self) -> usize {
        CELLS
    }

    fn apply(&self, s: &State, a: Action) -> Result<State> {
        let illegal = Error::IllegalAction { env: "fifteen_puzzle", action: a };
        if a >= 4 {
            return Err(illegal);
        }
        let b = Self::blank(s);
        let target = self.grid.step(b, a, 1).ok_or(illegal)?;
        let mut t = s.tokens().to_vec();
        t.swap(b, target);
        Ok(State::new(t))
    }

    fn predecessors(&self, s: &State) -> Vec<State> {
        self.neighbors(s).into_iter().map(|(_, n)| n).collect()
    }

    fn is_goal(&self, s: &State, g: &State) -> bool {
        s == g
    }

    fn input_dim(&self) -> usize {
        CELLS * CELLS
    }

    fn encode_into(&self, s: &State, out: &mut [f32]) {
        for (cell, &tile) in s.tokens().iter().enumerate() {
            out[cell * CELLS + tile as usize] = 1.0;
        }
    }

    fn inverse(&self, _s: &State, a: Action) -> Option<Action> {
        Some(opposite_dir(a))
    }

    fn validate(&self, s: &State) -> Result<()> {
        let mut seen = [false; CELLS];
        if s.len() != CELLS {
            return Err(Error::Shape(format!("15-puzzle state has {} tokens", s.len())));
        }
        for &t in s.tokens() {
            let slot = seen.get_mut(t as usize).ok_or_else(|| Error::Shape(format!("tile {t} out of range")))?;
            if *slot {
                return Err(Error::Shape(format!("tile {t} repeated")));
            }
            *slot = true;
        }
        Ok(())
    }

    fn random_walk(&self, rng: &mut dyn rand::RngCore, length: usize) -> Walk {
        reversed_scramble(self, Self::solved(), rng, length)
    }

    fn generate_instance(&self, rng: &mut dyn rand::RngCore, difficulty: usize) -> Instance {
        let walk = self.random_walk(rng, difficulty);
        Instance { start: walk.states[0].clone(), goal: Self::solved() }
    }

    fn render(&self, s: &State) -> String {
        let mut out = String::new();
        for row in s.tokens().chunks(SIDE) {
            let line: Vec<String> = row.iter().map(|t| format!("{t:2}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}
