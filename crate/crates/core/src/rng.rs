//! Counter-based random streams.
//!
//! Every output is a pure function of `(key, substream, counter)`: the key and
//! substream are hashed into a base value, and the counter walks a SplitMix64
//! sequence from that base. Random access by draw index is what lets the
//! coupled solvers share identical noise across algorithm variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Substream tag for computational-oracle noise.
pub const COMP_NOISE: u32 = 0;
/// Substream tag for learning-oracle noise.
pub const LEARN_NOISE: u32 = 1;
/// Substream tag for Monte-Carlo evaluation draws.
pub const MC_EVAL: u32 = 2;
/// Substream tag for random instance generation.
pub const INSTANCE_GEN: u32 = 3;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stream {
    key: u64,
    substream: u32,
    counter: u64,
    #[serde(skip)]
    base: u64,
}

impl Stream {
    pub fn new(key: u64, substream: u32) -> Self {
        Self::with_counter(key, substream, 0)
    }

    pub fn with_counter(key: u64, substream: u32, counter: u64) -> Self {
        let base = mix64(key ^ mix64((substream as u64).wrapping_add(GOLDEN)));
        Stream {
            key,
            substream,
            counter,
            base,
        }
    }

    /// Stream positioned at the start of logical draw `draw`. Each draw owns
    /// 2^32 consecutive counter values.
    pub fn at_draw(key: u64, substream: u32, draw: u64) -> Self {
        Self::with_counter(key, substream, draw << 32)
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn substream(&self) -> u32 {
        self.substream
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = mix64(self.base.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo <= hi) {
            return Err(Error::invalid(format!("uniform bounds lo={lo} > hi={hi}")));
        }
        if lo == hi {
            return Ok(lo);
        }
        Ok(lo + (hi - lo) * self.next_f64())
    }

    /// Box–Muller on two uniforms; consumes exactly two counter values.
    pub fn normal(&mut self, mean: f64, sd: f64) -> Result<f64> {
        if !(sd >= 0.0) {
            return Err(Error::invalid(format!("negative standard deviation {sd}")));
        }
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        if sd == 0.0 {
            return Ok(mean);
        }
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        Ok(mean + sd * z)
    }
}

/// Logical draw index shared by the computational and learning substreams of
/// one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrawCursor {
    pub key: u64,
    pub draw: u64,
}

impl DrawCursor {
    pub fn new(key: u64) -> Self {
        DrawCursor { key, draw: 0 }
    }

    /// Streams for the current draw, then advance.
    pub fn next_pair(&mut self) -> (Stream, Stream) {
        let pair = (
            Stream::at_draw(self.key, COMP_NOISE, self.draw),
            Stream::at_draw(self.key, LEARN_NOISE, self.draw),
        );
        self.draw += 1;
        pair
    }
}
