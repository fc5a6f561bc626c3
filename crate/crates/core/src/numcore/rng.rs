//! Counter-based random streams.
//!
//! Every stream is addressed by `(seed, stream_id)` and advances a 128-bit word
//! counter, so a stream can be recreated at any position and distinct stream
//! ids never share state. Simulation code derives stream ids from structured
//! tags (purpose, client, round) which keeps results independent of the order
//! in which clients are scheduled.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    /// Stream whose id is derived from a list of tags.
    pub fn derive(seed: u64, tags: &[u64]) -> Self {
        Self::new(seed, stream_id(tags))
    }

    /// Recreates a stream positioned at `counter`.
    pub fn at(seed: u64, stream_id: u64, counter: u128) -> Self {
        let mut s = Self::new(seed, stream_id);
        s.inner.set_word_pos(counter);
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Child stream keyed by this stream's identity plus `tag`; does not advance `self`.
    pub fn fork(&self, tag: u64) -> RngStream {
        RngStream::derive(self.seed, &[self.stream_id, tag])
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Order-sensitive hash of a tag list into a stream id.
pub fn stream_id(tags: &[u64]) -> u64 {
    tags.iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Stream-purpose tags used across the simulator.
pub mod purpose {
    pub const DATA: u64 = 1;
    pub const PERMUTATION: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const SCHEDULE: u64 = 4;
    pub const ENCODER_INIT: u64 = 5;
    pub const PRETRAIN: u64 = 6;
    pub const CLASSIFIER_INIT: u64 = 7;
    pub const CLIENT_SAMPLING: u64 = 8;
    pub const LOCAL_TRAIN: u64 = 9;
    pub const SERVER_ADMIT: u64 = 10;
    pub const SST: u64 = 11;
    pub const OFFLINE: u64 = 12;
    pub const VAL_SPLIT: u64 = 13;
}
