//! Portable seeded randomness for plan generation.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood): state advances by the
//! constant `0x9E3779B97F4A7C15` and each output is the state passed through
//! the finalizer in [`mix64`]. Bounded draws use rejection so every index is
//! exactly uniform. The full algorithm is written out in `docs/formats.md`
//! so plans can be reproduced from a seed in any language.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tuple of integers into one stream id.
pub fn stream_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0, |acc, &p| mix64(acc.wrapping_add(GOLDEN_GAMMA) ^ p))
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Generator for `stream_id` under `seed`; distinct streams are
    /// decorrelated.
    pub fn for_stream(seed: u64, stream_id: u64) -> Self {
        Self::new(seed ^ mix64(stream_id.wrapping_add(GOLDEN_GAMMA)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform integer in `0..bound`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        // 2^64 mod bound; draws under it are rejected
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % bound;
            }
        }
    }
}

/// Fisher–Yates shuffle driven by `SplitMix64::for_stream(seed, stream_id)`:
/// for `i` from `len-1` down to 1, swap `i` with `below(i + 1)`.
pub fn seeded_shuffle<T>(mut items: Vec<T>, seed: u64, stream_id: u64) -> Vec<T> {
    let mut rng = SplitMix64::for_stream(seed, stream_id);
    for i in (1..items.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
    items
}
