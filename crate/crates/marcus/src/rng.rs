//! Counter-based random number generation.
//!
//! Monte Carlo runs here must be reproducible regardless of how paths are
//! scheduled across threads, and a path must be able to re-derive exactly
//! the randomness it used at any step without replaying the whole stream.
//! Both needs are met by deriving an independent generator from the key
//! `(seed, path_index, step, substream)`: the key is hashed into the
//! starting state of a splitmix64 sequence, so any consumer can jump
//! straight to "the noise for substream s of step k of path i" in O(1).
//!
//! splitmix64 is a counter mode generator (state advances by a fixed odd
//! constant, output is a bijective finalizer), which makes the derived
//! streams statistically independent for all practical purposes while
//! keeping the implementation a handful of integer operations.

use rand::{Error, RngCore};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named lanes of per-step randomness.
///
/// Every consumer of step-level noise owns one lane, so adding draws to one
/// lane can never shift the values seen by another (the scheme and the
/// reference integrator share Brownian increments and jumps but only the
/// reference consumes bridge refinements, for example).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    /// Brownian increment over the step.
    Brownian,
    /// Jump counts, arrival times and sizes.
    Jumps,
    /// Dyadic midpoint refinement of the Brownian increment.
    BrownianBridge,
    /// Brownian values at jump arrival times.
    JumpBridge,
    /// Auxiliary draws for samplers that need a second source.
    Auxiliary,
}

impl Substream {
    fn lane(self) -> u64 {
        match self {
            Substream::Brownian => 0,
            Substream::Jumps => 1,
            Substream::BrownianBridge => 2,
            Substream::JumpBridge => 3,
            Substream::Auxiliary => 4,
        }
    }
}

/// A splitmix64 stream positioned by a `(seed, path, step, substream)` key.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    /// Derives the stream for one substream of one step of one path.
    #[must_use]
    pub fn at(seed: u64, path_index: u64, step: u64, substream: Substream) -> Self {
        let mut k = mix64(seed ^ GOLDEN_GAMMA);
        k = mix64(k ^ path_index.wrapping_mul(0xA24B_AED4_963E_E407));
        k = mix64(k ^ step.wrapping_mul(0x9FB2_1C65_1E98_DF25));
        k = mix64(k ^ substream.lane());
        CounterRng { state: k }
    }

    /// Derives a path-level stream not tied to any step (used for draws
    /// that exist once per path, such as importance-sampling proposals in
    /// test oracles).
    #[must_use]
    pub fn for_path(seed: u64, path_index: u64) -> Self {
        Self::at(seed, path_index, u64::MAX, Substream::Auxiliary)
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
