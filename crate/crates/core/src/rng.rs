//! Seed derivation and counter-based random streams.
//!
//! Every random draw is addressed by `(seed, phase, counter)`: the seed picks a
//! ChaCha8 key, the phase picks the ChaCha stream id, and the counter picks a
//! disjoint block range inside that stream. Results therefore never depend on
//! which thread ran a member or in which order members were scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Version tag folded into [`derive_member_seed`]. Bump it if the mixing changes.
pub const SEED_DERIVATION_VERSION: u64 = 1;

/// Words (32-bit) reserved for each counter value inside a stream.
const WORDS_PER_COUNTER: u32 = 32;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    ParamInit = 1,
    ValidationSplit = 2,
    BatchShuffle = 3,
    MomentumInit = 4,
    Warmup = 5,
    Sampling = 6,
    Synthetic = 7,
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-member seed, v1: two SplitMix64 rounds over `master_seed` offset by
/// `(member_index + 1)` golden-ratio increments, keyed by the version tag.
///
/// The inner map `i -> master + (i+1)*gamma` is injective for a fixed master seed
/// and `mix64` is a bijection, so distinct members never share a seed.
pub fn derive_member_seed(master_seed: u64, member_index: u64) -> u64 {
    const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
    let z = master_seed.wrapping_add(member_index.wrapping_add(1).wrapping_mul(GAMMA));
    mix64(mix64(z) ^ SEED_DERIVATION_VERSION.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Generator for the `counter`-th block of `(seed, phase)`.
pub fn stream(seed: u64, phase: Phase, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase as u64);
    rng.set_word_pos(u128::from(counter) << WORDS_PER_COUNTER);
    rng
}

pub fn fill_standard_normal<R: rand::Rng>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}
