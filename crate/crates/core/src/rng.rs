//! Counter-based random streams.
//!
//! Every consumer derives a ChaCha key from the master seed and a domain
//! tag, then addresses an independent stream by index (path number,
//! bootstrap resample, ...). A stream's output depends only on
//! `(seed, domain, index)`, never on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const DOMAIN_PATHS: u64 = 0x7061_7468_7300_0001;
pub(crate) const DOMAIN_BOOTSTRAP: u64 = 0x626f_6f74_7300_0002;
pub(crate) const DOMAIN_PROBES: u64 = 0x7072_6f62_6500_0003;

#[derive(Debug, Clone, Copy)]
pub struct StreamKey([u8; 32]);

impl StreamKey {
    pub fn new(seed: u64, domain: u64) -> Self {
        // splitmix64 over (seed, domain) fills the 256-bit key
        let mut state = seed ^ domain.rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        StreamKey(key)
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.0);
        rng.set_stream(index);
        rng
    }
}
