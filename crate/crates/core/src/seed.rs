//! Seed derivation for independent, reproducible rng streams.
//!
//! Every random decision in a run (parameter init, data shuffling, gradient
//! mechanisms, landscape directions) draws from its own stream derived from
//! the run seed so that instrumentation never perturbs the trajectory.

/// Stream salts. Each subsystem owns one so streams never collide.
pub const SALT_INIT: u64 = 0x01;
pub const SALT_DATA: u64 = 0x02;
pub const SALT_MECHANISM: u64 = 0x03;
pub const SALT_LANDSCAPE: u64 = 0x04;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a salt.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ salt.wrapping_mul(GOLDEN))
}

/// Per-step seed for a salted stream; used where a fresh rng must be
/// reconstructible from `(base, salt, step)` alone, e.g. to replay the
/// gradient-mechanism shuffle of a logged training step.
pub fn step_seed(base: u64, salt: u64, step: u64) -> u64 {
    splitmix64(derive_seed(base, salt) ^ splitmix64(step))
}
