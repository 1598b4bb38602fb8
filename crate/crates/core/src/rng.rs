//! Counter-based SplitMix64 generator and the shuffles built on it.
//!
//! Every seeded decision in the harness (fold assignment, perturbation
//! selection, few-shot demonstration sampling) draws from this generator so
//! that another implementation can reproduce a run bit-for-bit:
//!
//! * state advances by the constant `0x9E37_79B9_7F4A_7C15` per draw, and the
//!   output is the standard SplitMix64 finalizer applied to the new state;
//! * `below(n)` rejects raw draws smaller than `2^64 mod n` and returns
//!   `draw % n`, so it is unbiased;
//! * `shuffle` is the descending Fisher–Yates walk: for `i` from `len-1` down
//!   to `1`, swap `i` with `below(i + 1)`;
//! * `select` is the ascending partial Fisher–Yates walk: for `i` in `0..m`,
//!   swap `i` with `i + below(len - i)`, and the first `m` slots are the sample.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Seed derived from a base seed and a stream index, e.g. one stream per
    /// evaluation target.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut base = Self::new(seed ^ stream.wrapping_mul(GOLDEN_GAMMA).rotate_left(17));
        Self::new(base.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is empty");
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % n;
            }
        }
    }

    /// Uniform real in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Moves a uniform sample of `m` elements (in draw order) to the front
    /// of `items` and returns it. `m` is capped at `items.len()`.
    pub fn select<'a, T>(&mut self, items: &'a mut [T], m: usize) -> &'a mut [T] {
        let len = items.len();
        let m = m.min(len);
        for i in 0..m {
            let j = i + self.below((len - i) as u64) as usize;
            items.swap(i, j);
        }
        &mut items[..m]
    }
}

/// `floor(n * fraction)` with a small tolerance so that products such as
/// `100 * 0.29` land on the integer they denote.
pub fn floor_fraction(n: usize, fraction: f64) -> usize {
    let raw = (n as f64 * fraction + 1e-9).floor();
    (raw.max(0.0) as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_vector() {
        // Published SplitMix64 outputs for seed 1234567.
        let mut rng = SplitMix64::new(1234567);
        let expected = [
            6457827717110365317u64,
            3203168211198807973,
            9817491932198370423,
            4593380528125082431,
            16408922859458223821,
        ];
        for e in expected {
            assert_eq!(rng.next_u64(), e);
        }
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = SplitMix64::new(9);
        for n in 1..50u64 {
            for _ in 0..20 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = SplitMix64::new(3);
        let mut v: Vec<u32> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn select_caps_at_len() {
        let mut rng = SplitMix64::new(3);
        let mut v = vec![1, 2, 3];
        assert_eq!(rng.select(&mut v, 10).len(), 3);
    }

    #[test]
    fn floor_fraction_tolerates_representation_error() {
        assert_eq!(floor_fraction(100, 0.29), 29);
        assert_eq!(floor_fraction(10, 0.1), 1);
        assert_eq!(floor_fraction(7, 1.0), 7);
        assert_eq!(floor_fraction(10, 0.0), 0);
        assert_eq!(floor_fraction(3, 0.5), 1);
    }

    #[test]
    fn unit_interval() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..1000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
