//! The pseudorandom generator behind every seeded choice in the pipeline.
//!
//! Sampling, splitting, shuffling and head initialization all draw from
//! [`SplitMix64`], defined entirely here so results do not depend on the
//! version of any external crate:
//!
//! ```text
//! state  <- state + 0x9E3779B97F4A7C15            (wrapping)
//! z      <- state
//! z      <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (wrapping)
//! z      <- (z ^ (z >> 27)) * 0x94D049BB133111EB  (wrapping)
//! output <- z ^ (z >> 31)
//! ```
//!
//! Bounded integers in `[0, n)` use rejection: draw `r`, reject while
//! `r < (2^64 - n) mod n`, return `r mod n`. Unit floats use the top 53 bits:
//! `(r >> 11) * 2^-53`. Shuffles are Fisher-Yates from the last index down,
//! swapping `i` with `below(i + 1)`.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent stream for a named purpose, so that e.g. the split of one
    /// class does not shift when another class changes size.
    pub fn derive(seed: u64, stream: &str) -> Self {
        let mut mix = SplitMix64::new(seed);
        let mut acc = mix.next_u64();
        for b in stream.bytes() {
            acc = SplitMix64::new(acc ^ u64::from(b)).next_u64();
        }
        SplitMix64::new(acc)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % n;
            }
        }
    }

    /// Uniform float in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (one draw per call, the sine half is discarded).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct elements drawn uniformly without replacement, in draw order.
    pub fn sample<T: Clone>(&mut self, items: &[T], k: usize) -> Vec<T> {
        let k = k.min(items.len());
        let mut idx: Vec<usize> = (0..items.len()).collect();
        // partial Fisher-Yates from the front
        for i in 0..k {
            let j = i + self.below((idx.len() - i) as u64) as usize;
            idx.swap(i, j);
        }
        idx[..k].iter().map(|&i| items[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_outputs_for_seed_zero() {
        // Published SplitMix64 test vector (seed 0).
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = SplitMix64::new(42);
        for n in [1u64, 2, 3, 7, 1000, u64::MAX] {
            for _ in 0..200 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<u32> = (0..100).collect();
        SplitMix64::new(9).shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn sample_without_replacement() {
        let items: Vec<u32> = (0..50).collect();
        let mut picked = SplitMix64::new(3).sample(&items, 20);
        picked.sort();
        picked.dedup();
        assert_eq!(picked.len(), 20);
    }

    #[test]
    fn derived_streams_differ() {
        let a = SplitMix64::derive(7, "light-duty").next_u64();
        let b = SplitMix64::derive(7, "heavy-duty").next_u64();
        assert_ne!(a, b);
        assert_eq!(a, SplitMix64::derive(7, "light-duty").next_u64());
    }

    #[test]
    fn normal_moments_are_plausible() {
        let mut rng = SplitMix64::new(11);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
