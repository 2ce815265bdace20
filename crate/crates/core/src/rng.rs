//! Random stream derivation.
//!
//! Every Monte Carlo path draws from a ChaCha8 generator keyed by the run
//! seed and positioned on a stream chosen by the unit of work (a walk trial,
//! a sampling chunk). ChaCha supports 2^64 independent streams per key, so
//! work units never share randomness and the results are independent of how
//! units are scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a (family, index) pair into one stream id. Families separate
/// independent estimators that share a seed (e.g. the four CHSH terms).
pub fn stream_id(family: u32, index: u32) -> u64 {
    ((family as u64) << 32) | index as u64
}

/// Bit-level view of a generator: hands out individual random bits and small
/// uniform integers without spending a full word on each.
#[derive(Debug, Clone)]
pub struct BitSource<R> {
    rng: R,
    bits: u64,
    remaining: u32,
}

impl<R: RngCore> BitSource<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, bits: 0, remaining: 0 }
    }

    fn refill(&mut self) {
        self.bits = self.rng.next_u64();
        self.remaining = 64;
    }

    /// `width` uniform bits (1 ≤ width ≤ 32). Leftover bits too few for the
    /// request are discarded.
    #[inline]
    pub fn bits(&mut self, width: u32) -> u64 {
        debug_assert!((1..=32).contains(&width));
        if self.remaining < width {
            self.refill();
        }
        let v = self.bits & ((1u64 << width) - 1);
        self.bits >>= width;
        self.remaining -= width;
        v
    }

    /// Uniform integer in `0..n` for `2 <= n <= 2^32`, by rejection on the
    /// smallest sufficient number of bits. Leftover bits too few for a draw
    /// are discarded.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!((2..=1 << 32).contains(&n));
        let width = 64 - (n - 1).leading_zeros();
        loop {
            let v = self.bits(width);
            if v < n {
                return v;
            }
        }
    }

    /// Takes every buffered bit at once (refilling first if empty) and
    /// returns `(count, ones)`. Equivalent to `count` successive `below(2)`
    /// calls, `ones` of which returned 1.
    #[inline]
    pub fn take_block(&mut self) -> (u32, u32) {
        if self.remaining == 0 {
            self.refill();
        }
        let count = self.remaining;
        let ones = self.bits.count_ones();
        self.bits = 0;
        self.remaining = 0;
        (count, ones)
    }

    /// Bits still buffered; a refill happens on the next draw when zero.
    #[inline]
    pub fn buffered(&self) -> u32 {
        self.remaining
    }

    /// Buffered bits for the next block, refilling when empty.
    #[inline]
    pub fn ensure_buffered(&mut self) -> u32 {
        if self.remaining == 0 {
            self.refill();
        }
        self.remaining
    }
}
