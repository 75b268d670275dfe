//! Deterministic random number generation.
//!
//! All randomness in the crate flows from a single seed through `derive_seed`,
//! so every pipeline stage can be replayed bit-exactly. Ray jitter uses the
//! stateless `hash01` so that pose finite differencing can re-render a ray
//! with identical sample positions (common random numbers).

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// splitmix64-based sequential generator.
#[derive(Clone, Debug)]
pub struct Rng64 {
    state: u64,
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        Rng64 { state: seed.wrapping_add(GOLDEN) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in the inclusive range [lo, hi].
    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + (self.next_u64() % span) as i64
    }

    /// First `k` elements of a shuffled 0..n, without replacement.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = self.uniform_int(i as i64, n as i64 - 1) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// Derives an independent sub-seed for a named stream.
pub fn derive_seed(base: u64, tag: &str, salt: u64) -> u64 {
    let mut h = base ^ GOLDEN;
    for &b in tag.as_bytes() {
        h = mix(h ^ b as u64);
    }
    mix(h ^ salt)
}

/// Stateless hash of (seed, a, b) to a uniform value in [0, 1).
pub fn hash01(seed: u64, a: u64, b: u64) -> f64 {
    let h = mix(mix(seed ^ GOLDEN).wrapping_add(a).wrapping_mul(GOLDEN) ^ b);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Stateless hash of (seed, a) to a u64, for deriving per-item seeds.
pub fn hash_u64(seed: u64, a: u64) -> u64 {
    mix(mix(seed ^ GOLDEN).wrapping_add(a))
}
