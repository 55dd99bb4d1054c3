//! Deterministic random numbers.
//!
//! Every randomized routine in the crate takes a seed or an [`Rng`] and is a
//! pure function of it. The generator is splitmix64; independent streams for
//! sub-tasks come from [`Rng::split`], so adding a consumer never perturbs
//! the draws of an existing one.

/// Splitmix64 generator with stream splitting.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Derives an independent child stream; `tag` distinguishes siblings.
    pub fn split(&mut self, tag: u64) -> Rng {
        let base = self.next_u64();
        Rng::new(mix(base ^ tag.wrapping_mul(GAMMA)))
    }

    /// Stream for item `tag` under `seed`, independent of iteration order.
    pub fn derive(seed: u64, tag: u64) -> Rng {
        Rng::new(mix(mix(seed) ^ tag.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller; one fresh pair of uniforms per call.
    pub fn normal(&mut self) -> f64 {
        // uniform() can return exactly 0, which ln() rejects.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }
}
