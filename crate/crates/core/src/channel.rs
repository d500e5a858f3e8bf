//! i.i.d. Bernoulli packet erasures with instantaneous acknowledgements.
//!
//! Draws are counter-based: `gamma_k` for a given `(seed, trial, k)` is a pure
//! function of those three values, so trials replay exactly regardless of
//! draw order or thread scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    p: f64,
    seed: u64,
}

impl ChannelConfig {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::arg(
                "p",
                format!("loss probability {p} must lie in [0, 1)"),
            ));
        }
        Ok(ChannelConfig { p, seed })
    }

    pub fn lossless() -> Self {
        ChannelConfig { p: 0.0, seed: 0 }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ChannelConfig { seed, ..*self }
    }

    /// Reception flag for step `k` of trial 0.
    pub fn draw(&self, k: u64) -> u8 {
        self.stream(0).draw(k)
    }

    pub fn stream(&self, trial: u64) -> ChannelStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        ChannelStream { p: self.p, rng }
    }
}

/// The loss process of one trial.
#[derive(Clone, Debug)]
pub struct ChannelStream {
    p: f64,
    rng: ChaCha8Rng,
}

impl ChannelStream {
    /// `1` if the packet at step `k` arrives, `0` if it is lost.
    pub fn draw(&mut self, k: u64) -> u8 {
        if self.p == 0.0 {
            return 1;
        }
        // one u64 occupies two 32-bit words of the keystream
        self.rng.set_word_pos(2 * k as u128);
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u8::from(u >= self.p)
    }
}

/// Reception history `gamma_0 .. gamma_k`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossRecord {
    pub gamma: Vec<u8>,
}

impl LossRecord {
    pub fn push(&mut self, g: u8) {
        debug_assert!(g <= 1);
        self.gamma.push(g);
    }

    pub fn losses(&self) -> usize {
        self.gamma.iter().filter(|&&g| g == 0).count()
    }
}
