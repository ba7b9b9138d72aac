//! Counter-based pseudo-random number generation.
//!
//! All stochastic behaviour in this crate flows through [`SplitMix64`], a
//! 64-bit counter-based generator (Steele, Lea & Flood's SplitMix finalizer
//! over a Weyl sequence). Because the generator's entire state is one `u64`,
//! a run can be reproduced or resumed from `(seed, stream, episode)` alone:
//! each episode draws from an independently derived stream, so replaying
//! episode `k` never depends on how many draws earlier episodes consumed.

use core::convert::Infallible;
use rand::TryRng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Finalizer from SplitMix64; bijective on `u64` with strong avalanche.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: mix64(seed) }
    }

    /// Rebuilds a generator from a previously captured [`Self::state`].
    pub fn from_state(state: u64) -> Self {
        SplitMix64 { state }
    }

    /// Derives an independent stream from an ordered list of labels, e.g.
    /// `(run seed, episode index)`. Labels are folded through the finalizer
    /// so that nearby values yield unrelated streams.
    pub fn derive(labels: &[u64]) -> Self {
        let mut s = 0x243F_6A88_85A3_08D3; // arbitrary non-zero base
        for &l in labels {
            s = mix64(s ^ mix64(l));
        }
        SplitMix64 { state: s }
    }

    /// Generator for episode `episode` (1-based) of the run keyed by `seed`.
    pub fn for_episode(seed: u64, episode: u64) -> Self {
        Self::derive(&[seed, episode])
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Samples an index from an unnormalized nonnegative weight vector.
    /// Falls back to the last positive weight if rounding pushes the draw
    /// past the accumulated total. Returns `None` when all weights are zero.
    pub fn sample_weighted(&mut self, weights: &[f64]) -> Option<usize> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let target = self.next_f64() * total;
        let mut acc = 0.0;
        let mut last_positive = None;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_positive = Some(i);
                if target < acc {
                    return Some(i);
                }
            }
        }
        last_positive
    }
}

impl TryRng for SplitMix64 {
    type Error = Infallible;

    fn try_next_u32(&mut self) -> std::result::Result<u32, Infallible> {
        Ok((self.next_u64() >> 32) as u32)
    }

    fn try_next_u64(&mut self) -> std::result::Result<u64, Infallible> {
        Ok(self.next_u64())
    }

    fn try_fill_bytes(&mut self, dst: &mut [u8]) -> std::result::Result<(), Infallible> {
        let mut chunks = dst.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let bytes = self.next_u64().to_le_bytes();
            rem.copy_from_slice(&bytes[..rem.len()]);
        }
        Ok(())
    }
}
