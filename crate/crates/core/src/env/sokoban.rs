use rand::Rng;

use super::{opposite_dir, shuffle_cells, Action, EnvId, Grid, Instance, Puzzle, State, Walk};
use crate::{Error, Result};

const WALL: u8 = 1;
const BOX: u8 = 2;
const TARGET: u8 = 4;
const PLAYER: u8 = 8;
const CHANNELS: usize = 4;

/// Box-pushing puzzle. Tokens are bitmasks over {wall, box, target, player};
/// actions move the player up, down, left, right, pushing at most one box.
///
/// Boards come from reverse play: boxes start on their targets and the
/// player makes random moves and pulls, so the recorded sequence read
/// backwards is a solution.
#[derive(Clone, Debug)]
pub struct Sokoban {
    grid: Grid,
    boxes: usize,
    wall_density: f64,
}

/// Attempts at drawing an instance whose start is not already solved.
const INSTANCE_ATTEMPTS: usize = 64;

impl Sokoban {
    pub fn new(height: usize, width: usize, boxes: usize, wall_density: f64) -> Result<Self> {
        let grid = Grid::new(height, width, "sokoban")?;
        if height < 3 || width < 3 {
            return Err(Error::Config("sokoban boards need at least 3x3 cells".into()));
        }
        if boxes == 0 {
            return Err(Error::Config("sokoban needs at least one box".into()));
        }
        if !(0.0..1.0).contains(&wall_density) {
            return Err(Error::Config(format!("wall density {wall_density} not in [0, 1)")));
        }
        if boxes + 2 > (height - 2) * (width - 2) {
            return Err(Error::Config("too many boxes for the board interior".into()));
        }
        Ok(Self { grid, boxes, wall_density })
    }

    fn player(s: &State) -> usize {
        s.tokens().iter().position(|&t| t & PLAYER != 0).expect("state has a player")
    }

    #[inline]
    fn free(t: u8) -> bool {
        t & (WALL | BOX) == 0
    }

    /// Border walls plus random interior walls, keeping only the largest
    /// connected floor region.
    fn sample_walls(&self, rng: &mut dyn rand::RngCore) -> Vec<bool> {
        let g = self.grid;
        loop {
            let mut wall: Vec<bool> = (0..g.cells())
                .map(|c| {
                    let (r, col) = (c / g.width, c % g.width);
                    r == 0 || col == 0 || r + 1 == g.height || col + 1 == g.width || rng.gen_bool(self.wall_density)
                })
                .collect();
            let mut comp = vec![usize::MAX; g.cells()];
            let mut best: Option<(usize, usize)> = None;
            for seed in 0..g.cells() {
                if wall[seed] || comp[seed] != usize::MAX {
                    continue;
                }
                let mut stack = vec![seed];
                comp[seed] = seed;
                let mut size = 0;
                while let Some(c) = stack.pop() {
                    size += 1;
                    for d in 0..4 {
                        if let Some(n) = g.step(c, d, 1) {
                            if !wall[n] && comp[n] == usize::MAX {
                                comp[n] = seed;
                                stack.push(n);
                            }
                        }
                    }
                }
                if best.is_none_or(|(_, s)| size > s) {
                    best = Some((seed, size));
                }
            }
            if let Some((root, size)) = best {
                if size >= self.boxes + 2 {
                    for c in 0..g.cells() {
                        if comp[c] != root {
                            wall[c] = true;
                        }
                    }
                    return wall;
                }
            }
        }
    }

    /// A fresh board with every box on its target.
    pub fn sample_solved(&self, rng: &mut dyn rand::RngCore) -> State {
        let wall = self.sample_walls(rng);
        let mut floor: Vec<usize> = (0..self.grid.cells()).filter(|&c| !wall[c]).collect();
        shuffle_cells(rng, &mut floor);
        let mut t: Vec<u8> = wall.iter().map(|&w| if w { WALL } else { 0 }).collect();
        for &c in &floor[..self.boxes] {
            t[c] |= BOX | TARGET;
        }
        t[floor[self.boxes]] |= PLAYER;
        State::new(t)
    }

    /// Reverse moves available in `s`: (direction the player steps, pulls a box).
    fn reverse_options(&self, s: &State) -> Vec<(usize, bool)> {
        let t = s.tokens();
        let p = Self::player(s);
        let mut out = Vec::new();
        for e in 0..4 {
            let Some(q) = self.grid.step(p, e, 1) else { continue };
            if !Self::free(t[q]) {
                continue;
            }
            out.push((e, false));
            if let Some(b) = self.grid.step(p, opposite_dir(e), 1) {
                if t[b] & BOX != 0 {
                    out.push((e, true));
                }
            }
        }
        out
    }

    fn apply_reverse(&self, s: &State, e: usize, pull: bool) -> State {
        let p = Self::player(s);
        let q = self.grid.step(p, e, 1).expect("reverse option stays on board");
        let mut t = s.tokens().to_vec();
        t[p] &= !PLAYER;
        t[q] |= PLAYER;
        if pull {
            let b = self.grid.step(p, opposite_dir(e), 1).expect("pulled box is on board");
            t[b] &= !BOX;
            t[p] |= BOX;
        }
        State::new(t)
    }

    /// Reverse play for `steps` random moves/pulls from `solved`, returned as a
    /// forward trajectory ending at `solved`.
    fn reverse_play(&self, solved: State, rng: &mut dyn rand::RngCore, steps: usize) -> Walk {
        let mut states = vec![solved];
        let mut actions = Vec::with_capacity(steps);
        for _ in 0..steps {
            let cur = states.last().unwrap();
            let opts = self.reverse_options(cur);
            if opts.is_empty() {
                break;
            }
            let (e, pull) = opts[rng.gen_range(0..opts.len())];
            let next = self.apply_reverse(cur, e, pull);
            actions.push(opposite_dir(e));
            states.push(next);
        }
        states.reverse();
        actions.reverse();
        Walk { states, actions }
    }
}

impl Puzzle for Sokoban {
    fn id(&self) -> EnvId {
        EnvId::Sokoban
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn token_len(&self) -> usize {
        self.grid.cells()
    }

    fn apply(&self, s: &State, a: Action) -> Result<State> {
        let illegal = || Error::IllegalAction { env: "sokoban", action: a };
        if a >= 4 {
            return Err(illegal());
        }
        let t = s.tokens();
        let p = Self::player(s);
        let q = self.grid.step(p, a, 1).ok_or_else(illegal)?;
        if t[q] & WALL != 0 {
            return Err(illegal());
        }
        let mut out = t.to_vec();
        if t[q] & BOX != 0 {
            let r = self.grid.step(q, a, 1).ok_or_else(illegal)?;
            if !Self::free(t[r]) {
                return Err(illegal());
            }
            out[q] &= !BOX;
            out[r] |= BOX;
        }
        out[p] &= !PLAYER;
        out[q] |= PLAYER;
        Ok(State::new(out))
    }

    fn predecessors(&self, s: &State) -> Vec<State> {
        self.reverse_options(s).into_iter().map(|(e, pull)| self.apply_reverse(s, e, pull)).collect()
    }

    /// Solved when every box sits on a target; the player may be anywhere.
    fn is_goal(&self, s: &State, _g: &State) -> bool {
        s.tokens().iter().all(|&t| t & BOX == 0 || t & TARGET != 0)
    }

    fn input_dim(&self) -> usize {
        self.grid.cells() * CHANNELS
    }

    fn encode_into(&self, s: &State, out: &mut [f32]) {
        for (cell, &t) in s.tokens().iter().enumerate() {
            for ch in 0..CHANNELS {
                if t & (1 << ch) != 0 {
                    out[cell * CHANNELS + ch] = 1.0;
                }
            }
        }
    }

    fn inverse(&self, _s: &State, _a: Action) -> Option<Action> {
        None
    }

    fn validate(&self, s: &State) -> Result<()> {
        let t = s.tokens();
        let bad = |why: &str| Err(Error::Shape(format!("sokoban: {why}")));
        if t.len() != self.grid.cells() {
            return bad("wrong token count");
        }
        if t.iter().filter(|&&x| x & PLAYER != 0).count() != 1 {
            return bad("need exactly one player");
        }
        let boxes = t.iter().filter(|&&x| x & BOX != 0).count();
        let targets = t.iter().filter(|&&x| x & TARGET != 0).count();
        if boxes != targets || boxes != self.boxes {
            return bad("box count must equal target count");
        }
        if t.iter().any(|&x| x & WALL != 0 && x & (BOX | PLAYER) != 0) {
            return bad("player or box inside a wall");
        }
        if t.iter().any(|&x| x & BOX != 0 && x & PLAYER != 0) {
            return bad("player on a box");
        }
        Ok(())
    }

    /// `length` reverse-play steps on a fresh board.
    fn random_walk(&self, rng: &mut dyn rand::RngCore, length: usize) -> Walk {
        let solved = self.sample_solved(rng);
        self.reverse_play(solved, rng, length)
    }

    fn generate_instance(&self, rng: &mut dyn rand::RngCore, difficulty: usize) -> Instance {
        let mut last = None;
        for _ in 0..INSTANCE_ATTEMPTS {
            let walk = self.random_walk(rng, difficulty);
            let goal = walk.states.last().unwrap().clone();
            let start = walk.states[0].clone();
            let solved_already = self.is_goal(&start, &goal);
            last = Some(Instance { start, goal });
            if difficulty == 0 || !solved_already {
                break;
            }
        }
        last.expect("at least one attempt")
    }

    fn render(&self, s: &State) -> String {
        let mut out = String::new();
        for row in s.tokens().chunks(self.grid.width) {
            out.extend(row.iter().map(|&t| {
                if t & WALL != 0 {
                    '#'
                } else if t & BOX != 0 {
                    if t & TARGET != 0 {
                        '*'
                    } else {
                        '$'
                    }
                } else if t & PLAYER != 0 {
                    if t & TARGET != 0 {
                        '+'
                    } else {
                        '@'
                    }
                } else if t & TARGET != 0 {
                    '.'
                } else {
                    ' '
                }
            }));
            out.push('\n');
        }
        out
    }
}
