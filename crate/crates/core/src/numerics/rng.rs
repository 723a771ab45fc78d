use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids reserve the low 16 bits for per-replicate substreams (chains,
/// simulation stages), so replicate `r`, substream `c` is `r << 16 | c`.
pub const SUBSTREAM_BITS: u32 = 16;

/// Seeded ChaCha8 generator addressed by `(seed, stream_id)`.
///
/// Two streams with the same seed and different ids share no state; the same
/// pair always reproduces the same sequence.
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
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    /// Stream for substream `c` of replicate `r`.
    pub fn for_replicate(seed: u64, replicate: u64, substream: u64) -> Self {
        Self::new(seed, replicate_stream_id(replicate, substream))
    }

    /// Fresh generator on `stream_id + offset`, starting from the beginning of
    /// that stream. Does not advance `self`.
    pub fn split(&self, offset: u64) -> Self {
        Self::new(self.seed, self.stream_id.wrapping_add(offset))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

pub fn replicate_stream_id(replicate: u64, substream: u64) -> u64 {
    (replicate << SUBSTREAM_BITS) | (substream & ((1 << SUBSTREAM_BITS) - 1))
}

/// SplitMix64 finaliser, used to derive well-spread seeds from small integers.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
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
