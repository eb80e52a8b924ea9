//! Counter-based, splittable random number generation.
//!
//! Output `i` of a stream is a keyed hash of `(key, i)`, so any element can be
//! drawn independently of the others. Streams are split by hashing a stream
//! id into a fresh key; training derives one stream per
//! `(seed, epoch, step, layer)` so masks never depend on evaluation order.

use rand_core::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ 0x5EED_5EED_5EED_5EED),
            counter: 0,
        }
    }

    /// Independent child stream; the parent is left untouched.
    pub fn split(&self, stream: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(stream.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    pub fn derive(&self, path: &[u64]) -> Self {
        path.iter().fold(self.clone(), |rng, &id| rng.split(id))
    }

    /// Random access into this stream: SplitMix64 output `index` from state
    /// `key`.
    #[inline]
    pub fn at(&self, index: u64) -> u64 {
        mix64(self.key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision at `index`.
    #[inline]
    pub fn unit_at(&self, index: u64) -> f64 {
        (self.at(index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_f64(&mut self) -> f64 {
        let v = self.unit_at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform integer in `[0, bound)`.
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        // Lemire's multiply-shift; bias is below 2^-64 * bound.
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dst)
    }
}
