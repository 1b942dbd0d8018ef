use super::{reversed_scramble, Action, EnvId, Grid, Instance, Puzzle, State, Walk};
use crate::{Error, Result};

/// Pressing a cell toggles it and its orthogonal neighbours. Goal: all off.
#[derive(Clone, Debug)]
pub struct LightsOut {
    grid: Grid,
}

impl LightsOut {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        let grid = Grid::new(height, width, "lights_out")?;
        // actions are stored as single bytes in trajectory files
        if grid.cells() > 256 {
            return Err(Error::Config("lights_out boards are limited to 256 cells".into()));
        }
        Ok(Self { grid })
    }

    pub fn solved(&self) -> State {
        State::new(vec![0u8; self.grid.cells()])
    }
}

impl Puzzle for LightsOut {
    fn id(&self) -> EnvId {
        EnvId::LightsOut
    }

    fn num_actions(&self) -> usize {
        self.grid.cells()
    }

    fn token_len(&self) -> usize {
        self.grid.cells()
    }

    fn apply(&self, s: &State, a: Action) -> Result<State> {
        if a >= self.grid.cells() {
            return Err(Error::IllegalAction { env: "lights_out", action: a });
        }
        let mut t = s.tokens().to_vec();
        t[a] ^= 1;
        for d in 0..4 {
            if let Some(n) = self.grid.step(a, d, 1) {
                t[n] ^= 1;
            }
        }
        Ok(State::new(t))
    }

    fn predecessors(&self, s: &State) -> Vec<State> {
        self.neighbors(s).into_iter().map(|(_, n)| n).collect()
    }

    fn is_goal(&self, s: &State, g: &State) -> bool {
        s == g
    }

    fn input_dim(&self) -> usize {
        self.grid.cells()
    }

    fn encode_into(&self, s: &State, out: &mut [f32]) {
        for (o, &t) in out.iter_mut().zip(s.tokens()) {
            *o = t as f32;
        }
    }

    fn inverse(&self, _s: &State, a: Action) -> Option<Action> {
        Some(a)
    }

    fn validate(&self, s: &State) -> Result<()> {
        if s.len() != self.grid.cells() || s.tokens().iter().any(|&t| t > 1) {
            return Err(Error::Shape("lights_out state must be a binary grid".into()));
        }
        Ok(())
    }

    fn random_walk(&self, rng: &mut dyn rand::RngCore, length: usize) -> Walk {
        reversed_scramble(self, self.solved(), rng, length)
    }

    fn generate_instance(&self, rng: &mut dyn rand::RngCore, difficulty: usize) -> Instance {
        let walk = self.random_walk(rng, difficulty);
        Instance { start: walk.states[0].clone(), goal: self.solved() }
    }

    fn render(&self, s: &State) -> String {
        let mut out = String::new();
        for row in s.tokens().chunks(self.grid.width) {
            out.extend(row.iter().map(|&t| char::from(b'0' + t)));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_press_lights_a_plus() {
        let lo = LightsOut::new(3, 3).unwrap();
        let s = lo.apply(&lo.solved(), 4).unwrap();
        assert_eq!(s.tokens(), &[0, 1, 0, 1, 1, 1, 0, 1, 0]);
        assert_eq!(lo.render(&s), "010\n111\n010\n");
    }

    #[test]
    fn corner_press_touches_three_cells() {
        let lo = LightsOut::new(3, 3).unwrap();
        let s = lo.apply(&lo.solved(), 0).unwrap();
        assert_eq!(s.tokens().iter().filter(|&&t| t == 1).count(), 3);
    }

    #[test]
    fn presses_are_self_inverse() {
        let lo = LightsOut::new(7, 7).unwrap();
        let s = lo.apply(&lo.solved(), 10).unwrap();
        assert_eq!(lo.apply(&s, 10).unwrap(), lo.solved());
        assert_eq!(lo.neighbors(&s).len(), 49);
    }
}
