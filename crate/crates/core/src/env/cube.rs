//! 3x3x3 cube in the quarter-turn metric.
//!
//! Stickers are indexed `face * 9 + row * 3 + col` with faces ordered
//! U, D, F, B, L, R. Action `2 * face` turns that face clockwise (seen from
//! outside the cube), `2 * face + 1` counter-clockwise.

use std::sync::OnceLock;

use super::{reversed_scramble, Action, EnvId, Instance, Puzzle, State, Walk};
use crate::{Error, Result};

pub const FACES: usize = 6;
pub const STICKERS: usize = 54;
const FACE_NAMES: [char; FACES] = ['U', 'D', 'F', 'B', 'L', 'R'];

type V3 = [i32; 3];

/// (outward normal, column direction, row direction) per face.
const FACE_FRAMES: [(V3, V3, V3); FACES] = [
    ([0, 1, 0], [1, 0, 0], [0, 0, 1]),
    ([0, -1, 0], [1, 0, 0], [0, 0, -1]),
    ([0, 0, 1], [1, 0, 0], [0, -1, 0]),
    ([0, 0, -1], [-1, 0, 0], [0, -1, 0]),
    ([-1, 0, 0], [0, 0, 1], [0, -1, 0]),
    ([1, 0, 0], [0, 0, -1], [0, -1, 0]),
];

fn dot(a: V3, b: V3) -> i32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Quarter turn of `v` about unit axis `axis`; `sign = 1` is counter-clockwise
/// seen from the tip of the axis.
fn rotate(v: V3, axis: V3, sign: i32) -> V3 {
    let c = cross(axis, v);
    let k = dot(axis, v);
    [sign * c[0] + axis[0] * k, sign * c[1] + axis[1] * k, sign * c[2] + axis[2] * k]
}

fn sticker_geometry() -> Vec<(V3, V3)> {
    let mut out = Vec::with_capacity(STICKERS);
    for &(n, right, down) in &FACE_FRAMES {
        for row in 0..3 {
            for col in 0..3 {
                let (dc, dr) = (col - 1, row - 1);
                let pos = [n[0] + dc * right[0] + dr * down[0], n[1] + dc * right[1] + dr * down[1], n[2] + dc * right[2] + dr * down[2]];
                out.push((pos, n));
            }
        }
    }
    out
}

/// `dest[i]`: where the sticker at index `i` lands after the move.
fn move_tables() -> &'static [[u8; STICKERS]; 12] {
    static TABLES: OnceLock<[[u8; STICKERS]; 12]> = OnceLock::new();
    TABLES.get_or_init(|| {
        let geo = sticker_geometry();
        let find = |pos: V3, n: V3| geo.iter().position(|&g| g == (pos, n)).expect("rotation maps stickers to stickers");
        let mut tables = [[0u8; STICKERS]; 12];
        for face in 0..FACES {
            let axis = FACE_FRAMES[face].0;
            for (turn, sign) in [(0, -1), (1, 1)] {
                let t = &mut tables[2 * face + turn];
                for (i, &(pos, n)) in geo.iter().enumerate() {
                    t[i] = if dot(pos, axis) == 1 { find(rotate(pos, axis, sign), rotate(n, axis, sign)) as u8 } else { i as u8 };
                }
            }
        }
        tables
    })
}

#[derive(Clone, Debug, Default)]
pub struct RubiksCube;

impl RubiksCube {
    pub fn new() -> Self {
        RubiksCube
    }

    pub fn solved() -> State {
        State::new((0..STICKERS).map(|i| (i / 9) as u8).collect::<Vec<_>>())
    }
}

impl Puzzle for RubiksCube {
    fn id(&self) -> EnvId {
        EnvId::RubiksCube
    }

    fn num_actions(&self) -> usize {
        12
    }

    fn token_len(&self) -> usize {
        STICKERS
    }

    fn apply(&self, s: &State, a: Action) -> Result<State> {
        let table = move_tables().get(a).ok_or(Error::IllegalAction { env: "rubiks_cube", action: a })?;
        let src = s.tokens();
        let mut out = vec![0u8; STICKERS];
        for (i, &d) in table.iter().enumerate() {
            out[d as usize] = src[i];
        }
        Ok(State::new(out))
    }

    fn predecessors(&self, s: &State) -> Vec<State> {
        self.neighbors(s).into_iter().map(|(_, n)| n).collect()
    }

    fn is_goal(&self, s: &State, g: &State) -> bool {
        s == g
    }

    fn input_dim(&self) -> usize {
        STICKERS * FACES
    }

    fn encode_into(&self, s: &State, out: &mut [f32]) {
        for (i, &c) in s.tokens().iter().enumerate() {
            out[i * FACES + c as usize] = 1.0;
        }
    }

    fn inverse(&self, _s: &State, a: Action) -> Option<Action> {
        Some(a ^ 1)
    }

    fn validate(&self, s: &State) -> Result<()> {
        let t = s.tokens();
        if t.len() != STICKERS {
            return Err(Error::Shape(format!("cube state has {} stickers", t.len())));
        }
        let mut counts = [0usize; FACES];
        for &c in t {
            *counts.get_mut(c as usize).ok_or_else(|| Error::Shape(format!("color {c} out of range")))? += 1;
        }
        if counts.iter().any(|&n| n != 9) {
            return Err(Error::Shape(format!("color counts {counts:?}")));
        }
        if (0..FACES).any(|f| t[f * 9 + 4] as usize != f) {
            return Err(Error::Shape("center sticker moved".into()));
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
        let t = s.tokens();
        let mut out = String::new();
        for (f, name) in FACE_NAMES.iter().enumerate() {
            out.push(*name);
            out.push('\n');
            for row in 0..3 {
                for col in 0..3 {
                    out.push(char::from(b'0' + t[f * 9 + row * 3 + col]));
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_are_permutations_fixing_centers() {
        for t in move_tables() {
            let mut seen = [false; STICKERS];
            for &d in t {
                assert!(!seen[d as usize]);
                seen[d as usize] = true;
            }
            for f in 0..FACES {
                assert_eq!(t[f * 9 + 4] as usize, f * 9 + 4);
            }
            // a quarter turn moves 8 stickers on the face and 12 around it
            assert_eq!(t.iter().enumerate().filter(|(i, &d)| *i != d as usize).count(), 20);
        }
    }

    #[test]
    fn move_then_inverse_and_order_four() {
        let cube = RubiksCube::new();
        let s0 = RubiksCube::solved();
        for a in 0..12 {
            let s1 = cube.apply(&s0, a).unwrap();
            assert_ne!(s1, s0);
            assert_eq!(cube.apply(&s1, a ^ 1).unwrap(), s0);
            let s4 = (0..4).fold(s0.clone(), |s, _| cube.apply(&s, a).unwrap());
            assert_eq!(s4, s0);
        }
    }

    #[test]
    fn clockwise_u_sends_front_top_row_to_left() {
        // Standard convention: U moves the F top row onto L.
        let cube = RubiksCube::new();
        let s = cube.apply(&RubiksCube::solved(), 0).unwrap();
        let t = s.tokens();
        assert_eq!(&t[4 * 9..4 * 9 + 3], &[2, 2, 2]);
        assert_eq!(&t[2 * 9..2 * 9 + 3], &[5, 5, 5]);
    }

    #[test]
    fn opposite_faces_commute() {
        let cube = RubiksCube::new();
        let s0 = RubiksCube::solved();
        let ud = cube.apply(&cube.apply(&s0, 0).unwrap(), 2).unwrap();
        let du = cube.apply(&cube.apply(&s0, 2).unwrap(), 0).unwrap();
        assert_eq!(ud, du);
        let uf = cube.apply(&cube.apply(&s0, 0).unwrap(), 4).unwrap();
        let fu = cube.apply(&cube.apply(&s0, 4).unwrap(), 0).unwrap();
        assert_ne!(uf, fu);
    }

    #[test]
    fn render_has_six_labelled_faces() {
        let r = RubiksCube::new().render(&RubiksCube::solved());
        assert!(r.starts_with("U\n000\n000\n000\nD\n111\n"));
        assert_eq!(r.lines().count(), 24);
    }

    #[test]
    fn rejects_out_of_range_action() {
        assert!(RubiksCube::new().apply(&RubiksCube::solved(), 12).is_err());
    }
}
