use rand::Rng;

use super::{opposite_dir, Action, EnvId, Grid, Instance, Puzzle, State, Walk, DIRS};
use crate::{Error, Result};

const PLAYER: u8 = 0x10;
const DIGIT_MASK: u8 = 0x0f;
pub const MAX_DIGIT: u8 = 6;

/// Jump puzzle: from the current cell the player jumps exactly as many cells
/// as its digit, up, down, left or right. Start top-left, goal bottom-right.
///
/// Tokens are the cell digit (1..=6), with bit `0x10` marking the player.
#[derive(Clone, Debug)]
pub struct DigitJumper {
    grid: Grid,
}

impl DigitJumper {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        let grid = Grid::new(height, width, "digit_jumper")?;
        Ok(Self { grid })
    }

    pub fn player(s: &State) -> usize {
        s.tokens().iter().position(|&t| t & PLAYER != 0).expect("state has a player")
    }

    fn goal_cell(&self) -> usize {
        self.grid.cells() - 1
    }

    fn with_player(board: &[u8], cell: usize) -> State {
        let mut t = board.to_vec();
        t[cell] |= PLAYER;
        State::new(t)
    }

    /// Samples a board plus a self-avoiding jump path from the top-left to
    /// the bottom-right corner. Path cells carry the jump length used from
    /// them; every other cell gets a uniform digit.
    pub fn sample_board(&self, rng: &mut dyn rand::RngCore) -> (Vec<u8>, Vec<usize>, Vec<Action>) {
        let cells = self.grid.cells();
        let goal = self.goal_cell();
        'attempt: loop {
            let mut visited = vec![false; cells];
            let mut digits = vec![0u8; cells];
            let mut path = vec![0usize];
            let mut actions = Vec::new();
            visited[0] = true;
            let mut cur = 0;
            while cur != goal {
                let moves: Vec<(usize, u8, usize)> = (0..4)
                    .flat_map(|d| (1..=MAX_DIGIT).map(move |n| (d, n)))
                    .filter_map(|(d, n)| self.grid.step(cur, d, n as usize).map(|c| (d, n, c)))
                    .filter(|&(_, _, c)| !visited[c])
                    .collect();
                if moves.is_empty() {
                    continue 'attempt;
                }
                let (d, n, next) = moves[rng.gen_range(0..moves.len())];
                digits[cur] = n;
                visited[next] = true;
                actions.push(d);
                path.push(next);
                cur = next;
            }
            for d in digits.iter_mut().filter(|d| **d == 0) {
                *d = rng.gen_range(1..=MAX_DIGIT);
            }
            return (digits, path, actions);
        }
    }
}

impl Puzzle for DigitJumper {
    fn id(&self) -> EnvId {
        EnvId::DigitJumper
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn token_len(&self) -> usize {
        self.grid.cells()
    }

    fn apply(&self, s: &State, a: Action) -> Result<State> {
        let illegal = Error::IllegalAction { env: "digit_jumper", action: a };
        if a >= 4 {
            return Err(illegal);
        }
        let p = Self::player(s);
        let n = (s.tokens()[p] & DIGIT_MASK) as usize;
        let q = self.grid.step(p, a, n).ok_or(illegal)?;
        let mut t = s.tokens().to_vec();
        t[p] &= !PLAYER;
        t[q] |= PLAYER;
        Ok(State::new(t))
    }

    fn predecessors(&self, s: &State) -> Vec<State> {
        let p = Self::player(s);
        let board: Vec<u8> = s.tokens().iter().map(|t| t & DIGIT_MASK).collect();
        let mut out = Vec::new();
        for (cell, &digit) in board.iter().enumerate() {
            let lands = (0..DIRS.len()).any(|d| self.grid.step(cell, d, digit as usize) == Some(p));
            if cell != p && lands {
                out.push(Self::with_player(&board, cell));
            }
        }
        out
    }

    fn is_goal(&self, s: &State, g: &State) -> bool {
        Self::player(s) == Self::player(g)
    }

    fn input_dim(&self) -> usize {
        self.grid.cells() * (MAX_DIGIT as usize + 1)
    }

    fn encode_into(&self, s: &State, out: &mut [f32]) {
        let cells = self.grid.cells();
        for (cell, &t) in s.tokens().iter().enumerate() {
            let digit = (t & DIGIT_MASK) as usize;
            out[cell * MAX_DIGIT as usize + digit - 1] = 1.0;
            if t & PLAYER != 0 {
                out[cells * MAX_DIGIT as usize + cell] = 1.0;
            }
        }
    }

    /// Jumping back only works when the landing cell carries the same digit.
    fn inverse(&self, s: &State, a: Action) -> Option<Action> {
        let next = self.apply(s, a).ok()?;
        let back = opposite_dir(a);
        (self.apply(&next, back).ok()? == *s).then_some(back)
    }

    fn validate(&self, s: &State) -> Result<()> {
        let t = s.tokens();
        if t.len() != self.grid.cells() {
            return Err(Error::Shape(format!("digit_jumper state has {} tokens", t.len())));
        }
        if t.iter().filter(|&&x| x & PLAYER != 0).count() != 1 {
            return Err(Error::Shape("digit_jumper needs exactly one player".into()));
        }
        if t.iter().any(|&x| !(1..=MAX_DIGIT).contains(&(x & DIGIT_MASK)) || x & !(PLAYER | DIGIT_MASK) != 0) {
            return Err(Error::Shape("digit_jumper digits must be 1..=6".into()));
        }
        Ok(())
    }

    /// The sampled corner-to-corner path on a fresh board; `length` is unused
    /// because the path runs until it reaches the goal.
    fn random_walk(&self, rng: &mut dyn rand::RngCore, _length: usize) -> Walk {
        let (board, path, actions) = self.sample_board(rng);
        Walk { states: path.iter().map(|&c| Self::with_player(&board, c)).collect(), actions }
    }

    fn generate_instance(&self, rng: &mut dyn rand::RngCore, difficulty: usize) -> Instance {
        let (board, _, _) = self.sample_board(rng);
        let goal = Self::with_player(&board, self.goal_cell());
        let start = if difficulty == 0 { goal.clone() } else { Self::with_player(&board, 0) };
        Instance { start, goal }
    }

    fn render(&self, s: &State) -> String {
        let mut out = String::new();
        for row in s.tokens().chunks(self.grid.width) {
            for &t in row {
                if t & PLAYER != 0 {
                    out.push('[');
                    out.push(char::from(b'0' + (t & DIGIT_MASK)));
                    out.push(']');
                } else {
                    out.push(' ');
                    out.push(char::from(b'0' + t));
                    out.push(' ');
                }
            }
            out.push('\n');
        }
        out
    }
}
