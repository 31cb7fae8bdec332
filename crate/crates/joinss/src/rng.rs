//! Deterministic splittable random number generator.
//!
//! Every random decision in this crate flows through [`SplitRng`], a
//! splitmix64 generator with labeled child derivation. Identical seeds
//! produce identical streams, and `child(label)` yields a stream that is
//! independent of the parent's and of siblings derived under other labels,
//! so a sample is reproducible from `(seed, query ordinal)` alone.

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Splitmix64 stream with labeled splitting.
#[derive(Debug, Clone)]
pub struct SplitRng {
    seed: u64,
    state: u64,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        SplitRng { seed, state: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent deterministic child stream for `label`.
    ///
    /// Children are a function of the parent's seed only, not of how many
    /// values the parent has produced, so derivation order is irrelevant.
    pub fn child(&self, label: u64) -> SplitRng {
        let seed = mix64(self.seed ^ mix64(label.wrapping_mul(GAMMA).wrapping_add(GAMMA)));
        SplitRng::new(seed)
    }

    /// Child stream labeled by a string (hashed with FNV-1a).
    pub fn child_named(&self, label: &str) -> SplitRng {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.child(h)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in the half-open interval `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in the half-open interval `(0, 1]`, safe to pass to `ln`.
    pub fn uniform_pos(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli trial with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}
