//! Reproducible random streams.
//!
//! Every stream is a ChaCha20 generator (`rand_chacha::ChaCha20Rng`). The
//! 256-bit key is the little-endian master seed followed by a fixed 24-byte
//! domain tag, and the ChaCha stream word is the stream id. Distinct ids
//! therefore select disjoint keystreams of the same cipher, and a
//! `(master_seed, stream_id)` pair reproduces the same sequence on every
//! platform.
//!
//! Stream ids used by the optimizers are packed as
//! `[purpose: 8 bits][iteration: 24 bits][round: 8 bits][index: 24 bits]`,
//! see [`StreamId`].

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::types::LatentVector;

const DOMAIN_TAG: &[u8; 24] = b"cowboys/rng-stream/v1\0\0\0";

#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits, in [0, 1).
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal_vec(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.standard_normal()).collect()
    }

    /// A draw from the latent prior `N(0, I_dim)`.
    pub fn prior_latent(&mut self, dim: usize) -> LatentVector {
        LatentVector::from_finite(self.normal_vec(dim))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn derive_stream(master_seed: u64, stream_id: u64) -> RngStream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..].copy_from_slice(DOMAIN_TAG);
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(stream_id);
    RngStream { master_seed, stream_id, rng }
}

/// What a stream is used for; the top byte of a packed stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    InitialDesign = 1,
    Chain = 2,
    BatchSelection = 3,
    Fallback = 4,
    Perturbation = 5,
    Acquisition = 6,
    ObjectiveInstance = 7,
    DecoderInstance = 8,
    Validation = 9,
    Diagnostics = 10,
}

/// Collision-free packing of `(purpose, iteration, round, index)` into a
/// stream id. Fields are masked to their widths (24, 8 and 24 bits); callers
/// validate ranges up front (see `RunConfig::validate`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamId {
    pub purpose: Purpose,
    pub iteration: u32,
    pub round: u8,
    pub index: u32,
}

impl StreamId {
    pub fn new(purpose: Purpose) -> Self {
        StreamId { purpose, iteration: 0, round: 0, index: 0 }
    }

    pub fn iteration(mut self, iteration: usize) -> Self {
        self.iteration = iteration as u32;
        self
    }

    pub fn round(mut self, round: usize) -> Self {
        self.round = round as u8;
        self
    }

    pub fn index(mut self, index: usize) -> Self {
        self.index = index as u32;
        self
    }

    pub fn pack(self) -> u64 {
        (u64::from(self.purpose as u8) << 56)
            | (u64::from(self.iteration & 0xFF_FFFF) << 32)
            | (u64::from(self.round) << 24)
            | u64::from(self.index & 0xFF_FFFF)
    }

    pub fn stream(self, master_seed: u64) -> RngStream {
        derive_stream(master_seed, self.pack())
    }
}

pub const MAX_PACKED_ITERATION: usize = 0xFF_FFFF;
pub const MAX_PACKED_INDEX: usize = 0xFF_FFFF;
pub const MAX_PACKED_ROUND: usize = 0xFF;

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(mut s: RngStream, n: usize) -> Vec<u64> {
        (0..n).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn distinct_streams_differ() {
        assert_ne!(draws(derive_stream(42, 0), 4), draws(derive_stream(42, 1), 4));
    }

    #[test]
    fn same_stream_reproduces() {
        assert_eq!(draws(derive_stream(42, 0), 1000), draws(derive_stream(42, 0), 1000));
    }

    #[test]
    fn seed_sensitivity() {
        assert_ne!(draws(derive_stream(42, 7), 4), draws(derive_stream(43, 7), 4));
    }

    #[test]
    fn known_first_draw_is_pinned() {
        // Guards the documented generator choice against silent changes.
        let first = derive_stream(42, 0).next_u64();
        assert_eq!(first, derive_stream(42, 0).next_u64());
        let again = ChaCha20Rng::from_seed({
            let mut k = [0u8; 32];
            k[..8].copy_from_slice(&42u64.to_le_bytes());
            k[8..].copy_from_slice(DOMAIN_TAG);
            k
        })
        .next_u64();
        assert_eq!(first, again);
    }

    #[test]
    fn packing_is_injective_on_fields() {
        let a = StreamId::new(Purpose::Chain).iteration(3).round(1).index(2);
        let b = StreamId::new(Purpose::Chain).iteration(3).round(2).index(1);
        let c = StreamId::new(Purpose::Fallback).iteration(3).round(1).index(2);
        assert_ne!(a.pack(), b.pack());
        assert_ne!(a.pack(), c.pack());
        assert_eq!(a.pack() >> 56, Purpose::Chain as u64);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut s = derive_stream(1, 1);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
