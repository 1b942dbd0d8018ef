//! Seed derivation.
//!
//! One master seed fans out into independent ChaCha streams, one per pipeline
//! component, so changing how many draws one stage makes never shifts the
//! randomness another stage sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Sampler = 3,
    EvalInstances = 4,
    HeldOut = 5,
    Scorer = 6,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for `(master, stream, index)`. Distinct triples give independent streams.
pub fn derive(master: u64, stream: Stream, index: u64) -> Rng {
    let seed = mix64(master ^ mix64(index.wrapping_add(mix64(stream as u64))));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
