//! Seed derivation and the sampling primitives shared by every stage.
//!
//! All randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) keyed
//! directly from a 64-bit seed and a 64-bit stream id, so output is identical
//! on every platform. Uniform variates use the top 53 bits of `next_u64`.
//! Changing any function in this module changes every generated dataset.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type SimRng = ChaCha20Rng;

/// Stream ids; one independent generator per purpose and seed.
pub mod streams {
    pub const PERSONA: u64 = 0;
    pub const VISITS: u64 = 1;
    pub const MENTIONS: u64 = 2;
    pub const SUBSAMPLE: u64 = 3;
    pub const ASSEMBLE: u64 = 4;
    pub const JITTER: u64 = 5;
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output finalizer. A bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-item seed: `mix64(mix64(master) ^ mix64(index + GOLDEN_GAMMA))`.
///
/// For a fixed master seed the map from index to seed is injective (a
/// composition of bijections), and likewise for a fixed index.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    mix64(mix64(master_seed) ^ mix64(index.wrapping_add(GOLDEN_GAMMA)))
}

/// ChaCha20 keyed with `seed` (little-endian) in the first 8 key bytes and
/// `stream` in the next 8.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

/// Uniform on `[0, 1)` with 53 bits of precision.
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `[0, n)`. `n` must be positive.
pub fn uniform_index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    debug_assert!(n > 0);
    // Lemire's widening multiply with rejection; exact for every n.
    let n64 = n as u64;
    let threshold = n64.wrapping_neg() % n64;
    loop {
        let x = rng.next_u64();
        let m = u128::from(x) * u128::from(n64);
        if (m as u64) >= threshold {
            return (m >> 64) as usize;
        }
    }
}

/// Inverse-CDF draw over `probs` in listed order. Zero-probability entries
/// are never returned. `probs` must hold at least one positive entry.
pub fn categorical_index<R: RngCore + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u = unit_f64(rng);
    inverse_cdf(probs, u)
}

pub(crate) fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = i;
        if target < acc {
            return i;
        }
    }
    last_positive
}

/// Cumulative table for repeated categorical draws.
#[derive(Debug, Clone)]
pub struct CategoricalTable {
    cumulative: Vec<f64>,
}

impl CategoricalTable {
    pub fn new(probs: &[f64]) -> Self {
        let total: f64 = probs.iter().sum();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p.max(0.0) / total;
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> usize {
        let u = unit_f64(rng);
        let idx = self.cumulative.partition_point(|c| *c <= u);
        if idx < self.cumulative.len() {
            return idx;
        }
        // Rounding left the final cumulative just below 1; fall back to the
        // last entry with positive mass.
        let mut i = self.cumulative.len() - 1;
        while i > 0 && self.cumulative[i] == self.cumulative[i - 1] {
            i -= 1;
        }
        i
    }
}

/// Above this mean the draw is split into independent halves so that
/// `exp(-lambda)` never underflows.
const POISSON_SPLIT: f64 = 400.0;

/// Poisson draw by sequential inversion.
pub fn poisson<R: RngCore + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if lambda.is_nan() || lambda <= 0.0 {
        return 0;
    }
    if lambda > POISSON_SPLIT {
        let half = lambda / 2.0;
        return poisson(rng, half) + poisson(rng, half);
    }
    poisson_inverse(unit_f64(rng), lambda)
}

/// Poisson conditioned on a value of at least one.
pub fn zero_truncated_poisson<R: RngCore + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if lambda.is_nan() || lambda <= 0.0 {
        return 1;
    }
    if lambda > POISSON_SPLIT {
        loop {
            let k = poisson(rng, lambda);
            if k > 0 {
                return k;
            }
        }
    }
    // Map u onto [P(0), 1) so inversion never stops at zero.
    let p0 = (-lambda).exp();
    let u = p0 + unit_f64(rng) * -(-lambda).exp_m1();
    poisson_inverse(u, lambda).max(1)
}

fn poisson_inverse(u: f64, lambda: f64) -> u64 {
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let cap = (lambda + 40.0 * lambda.sqrt() + 40.0) as u64;
    while u >= cdf && k < cap {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

/// Partial Fisher-Yates: `k` distinct indices from `0..n`, in draw order.
pub fn sample_without_replacement<R: RngCore + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} of {n} without replacement");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_index(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

pub fn shuffle<T, R: RngCore + ?Sized>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_index(rng, i + 1);
        items.swap(i, j);
    }
}
