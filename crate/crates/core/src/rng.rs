//! Counter-based random streams.
//!
//! Every draw in a run comes from a ChaCha stream keyed by the run seed and a
//! short tuple of tags (purpose, step, index...). Streams are therefore
//! independent of evaluation order and of how work is split across threads.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::Vector2;

pub type Stream = ChaCha8Rng;

/// Stream purposes.
pub mod tag {
    pub const SPAWN: u64 = 1;
    pub const MICRO_NOISE: u64 = 2;
    pub const LEADER_CONTROL: u64 = 3;
    pub const KINETIC: u64 = 4;
    pub const COMPASS: u64 = 5;
    pub const REPLICATE: u64 = 6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    pub seed: u64,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Independent stream for the given tag tuple.
    pub fn stream(&self, tags: &[u64]) -> Stream {
        let mut state = self.seed;
        let mut acc = splitmix64(&mut state);
        for &t in tags {
            state ^= t.wrapping_mul(0xD6E8_FEB8_6659_FD93).rotate_left(17);
            acc ^= splitmix64(&mut state);
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            let word = splitmix64(&mut state) ^ acc;
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// Derived source, e.g. one per replicate.
    pub fn child(&self, index: u64) -> RandomSource {
        let mut s = self.stream(&[tag::REPLICATE, index]);
        RandomSource { seed: s.random() }
    }
}

/// Standard normal draw scaled by `std_dev`.
#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R, std_dev: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * std_dev
}

/// Isotropic Gaussian vector with per-axis standard deviation `std_dev`.
#[inline]
pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, std_dev: f64) -> Vector2 {
    Vector2::new(normal(rng, std_dev), normal(rng, std_dev))
}

/// Gaussian vector with each component truncated to `[-cut*std, cut*std]`
/// by resampling that component.
#[inline]
pub fn truncated_normal_vector<R: Rng + ?Sized>(rng: &mut R, std_dev: f64, cut: f64) -> Vector2 {
    let mut draw = || loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= cut {
            return z * std_dev;
        }
    };
    let x = draw();
    let y = draw();
    Vector2::new(x, y)
}
