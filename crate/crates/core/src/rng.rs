//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the master seed and selected
//! by the 64-bit stream id, so path `k` always sees the same numbers no matter
//! which worker runs it or in which order paths are scheduled.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

/// Stream for `(master_seed, stream_id)`.
pub fn derive_stream(master_seed: u64, stream_id: u64) -> RngStream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    // Fixed tag in the remaining key bytes keeps seed 0 away from the all-zero key.
    key[8..16].copy_from_slice(&0x5357_5045_6d61_7274u64.to_le_bytes());
    let mut inner = ChaCha8Rng::from_seed(key);
    inner.set_stream(stream_id);
    RngStream { master_seed, stream_id, inner }
}

/// Mixes a task tag into a seed so that different sub-experiments driven by the
/// same user seed do not share streams.
pub fn sub_seed(master_seed: u64, tag: u64) -> u64 {
    let mut z = master_seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn normal<S: Scalar>(&mut self) -> S {
        let z: f64 = self.inner.sample(StandardNormal);
        S::lit(z)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform<S: Scalar>(&mut self) -> S {
        let u: f64 = self.inner.random();
        S::lit(u)
    }

    pub fn bernoulli<S: Scalar>(&mut self, prob: S) -> bool {
        self.uniform::<S>() < prob
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
