//! Seeded pseudo-random numbers.
//!
//! Everything stochastic in this crate (parameter init, dropout masks,
//! speckle noise, shuffling, augmentation) draws from [`SeededRng`], a
//! xoshiro256++ generator seeded through SplitMix64. Both algorithms use
//! only integer arithmetic with fixed published constants, so a given seed
//! produces the same draw sequence on every platform.
//!
//! Parallel code must never share one generator; derive per-task children
//! with [`SeededRng::child`], which keys a fresh generator off the parent
//! seed and a stream index.

/// SplitMix64 increment (golden-ratio constant).
const SPLITMIX_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic xoshiro256++ generator.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    state: [u64; 4],
}

impl SeededRng {
    /// Creates a generator from a 64-bit seed. The four state words are the
    /// first four SplitMix64 outputs for that seed.
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self { seed, state }
    }

    /// The seed this generator was constructed with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independently seeded child generator.
    ///
    /// Split rule: `child_seed = mix(seed ^ (stream + 1) * GAMMA)` where
    /// `mix` is one SplitMix64 step. The rule depends only on the parent
    /// seed and the stream index, never on how many draws the parent has
    /// made, so children may be created in any order (or in parallel).
    pub fn child(&self, stream: u64) -> SeededRng {
        let mut sm = self.seed ^ stream.wrapping_add(1).wrapping_mul(SPLITMIX_GAMMA);
        SeededRng::new(splitmix64(&mut sm))
    }

    /// Next raw 64-bit output (xoshiro256++ step).
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. Uses rejection to avoid modulo bias.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires n > 0");
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }

    /// Standard normal draw via Box-Muller. Each call consumes exactly two
    /// uniforms; the sine branch is discarded to keep the draw count fixed.
    pub fn next_normal(&mut self) -> f64 {
        // 1 - u maps [0,1) onto (0,1] so the log argument is never zero.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal draw with the given mean and standard deviation.
    pub fn normal(&mut self, mean: f64, stddev: f64) -> f64 {
        mean + stddev * self.next_normal()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, data: &mut [T]) {
        for i in (1..data.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            data.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_agree_bitwise_for_1000_draws() {
        let mut a = SeededRng::new(0xDEADBEEF);
        let mut b = SeededRng::new(0xDEADBEEF);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let mut a = SeededRng::new(1);
        let mut b = SeededRng::new(2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 4);
    }

    #[test]
    fn children_are_independent_of_draw_position() {
        let parent = SeededRng::new(99);
        let mut drained = SeededRng::new(99);
        for _ in 0..17 {
            drained.next_u64();
        }
        let mut c1 = parent.child(3);
        let mut c2 = drained.child(3);
        for _ in 0..100 {
            assert_eq!(c1.next_u64(), c2.next_u64());
        }
        let mut other = parent.child(4);
        assert_ne!(parent.child(3).next_u64(), other.next_u64());
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = SeededRng::new(7);
        for _ in 0..10_000 {
            let v = rng.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn next_below_covers_all_residues() {
        let mut rng = SeededRng::new(11);
        let mut seen = [false; 5];
        for _ in 0..500 {
            seen[rng.next_below(5) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn normal_sample_mean_and_spread() {
        let mut rng = SeededRng::new(42);
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "sample mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "sample variance {var}");
    }
}
