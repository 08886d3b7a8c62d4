//! Seeding.
//!
//! Every random decision in the pipeline (weight init, splits, folds,
//! shuffling, synthetic data) draws from a [`Prng`], which is SplitMix64: a
//! 64-bit state generator whose output function is also a good mixer. One
//! user seed is split into independent per-component streams by hashing a
//! component label (FNV-1a) and an optional index into the seed, then passing
//! the result through one SplitMix64 step.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

pub type Prng = SplitMix64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named component.
pub fn derive_seed(seed: u64, component: &str) -> u64 {
    mix(seed ^ fnv1a(component))
}

/// Seed for the `index`-th member of a named component (epochs, subjects, ...).
pub fn derive_indexed(seed: u64, component: &str, index: u64) -> u64 {
    mix(derive_seed(seed, component) ^ mix(index))
}

pub fn component_rng(seed: u64, component: &str) -> Prng {
    Prng::seed_from_u64(derive_seed(seed, component))
}

pub fn indexed_rng(seed: u64, component: &str, index: u64) -> Prng {
    Prng::seed_from_u64(derive_indexed(seed, component, index))
}
