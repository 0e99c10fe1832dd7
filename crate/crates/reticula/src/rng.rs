//! Self-contained pseudo-random number generator for reproducible fixtures.
//!
//! The phantom generator (and the test suites built on it) must produce
//! byte-identical output for a given seed, on any platform and in any
//! language that reimplements this stream. To make that possible the
//! generator is fully specified here rather than delegated to an external
//! crate whose seeding scheme may change between versions:
//!
//! * Core stream: SplitMix64 (Steele, Lea & Flood's `splitmix64`).
//!   State update `s += 0x9E3779B97F4A7C15`, output mixing
//!   `z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
//!    z *= 0x94D049BB133111EB; z ^= z >> 31`, all in wrapping u64
//!   arithmetic. The seed is the initial state verbatim.
//! * `next_f64` maps the top 53 bits to the unit interval: `(x >> 11) * 2^-53`.
//! * `next_gaussian` is the polar Box-Muller transform, consuming pairs of
//!   `next_f64` draws until one lands inside the unit circle and returning
//!   one variate per call (the second is discarded, keeping the stream a
//!   pure function of the call sequence).

/// SplitMix64 stream. Copy-free, `Copy`-cheap, deterministic.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[lo, hi]` (inclusive). Uses the modulo of a fresh
    /// draw; the bias is irrelevant at the range sizes used here (< 2^16).
    pub fn next_range(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi, "empty range [{lo}, {hi}]");
        let span = (hi - lo) as u64 + 1;
        lo + (self.next_u64() % span) as i64
    }

    /// Standard normal variate via polar Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }
}
