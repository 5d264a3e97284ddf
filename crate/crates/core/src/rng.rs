//! Seed derivation. Every random stream is a pure function of the base seed,
//! a purpose tag, and a list of indices (client, task, round, epoch, ...).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep independent streams from colliding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Features = 1,
    Split = 2,
    Dirichlet = 3,
    Assignment = 4,
    Init = 5,
    LocalShuffle = 6,
    InfoBatches = 7,
    DomainShift = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: Stream, parts: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ splitmix64(stream as u64));
    for &p in parts {
        h = splitmix64(h ^ p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    h
}

pub fn stream_rng(base: u64, stream: Stream, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, parts))
}
