//! Deterministic counter-based random streams.
//!
//! One generator algorithm is fixed for the whole repository: the SplitMix64
//! output function applied to an incrementing state. A stream is keyed by
//! hashing a `(seed, label)` pair into the initial state, so independent
//! consumers (weight init, batch order, per-study data generation, sampler
//! noise) each own a stream and never contend for draws. Identical seed,
//! label, and draw sequence always reproduce bit-identical output on every
//! platform; parallel code must split its labeled streams up front.

/// Weyl-sequence increment used by SplitMix64.
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: bijective avalanche mix of a 64-bit word.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A labeled deterministic random stream.
#[derive(Debug, Clone)]
pub struct Prng {
    state: u64,
}

impl Prng {
    /// Creates the stream keyed by `(seed, label)`. The label bytes are
    /// absorbed sequentially through the mix function, so distinct labels
    /// (including permutations of the same bytes) give unrelated streams.
    pub fn new(seed: u64, label: &str) -> Self {
        let mut state = mix(seed ^ GOLDEN_GAMMA);
        for &b in label.as_bytes() {
            state = mix(state.wrapping_add(GOLDEN_GAMMA) ^ u64::from(b));
        }
        state = mix(state ^ (label.len() as u64));
        Prng { state }
    }

    /// Derives a child stream without disturbing this stream's counter.
    pub fn derive(&self, label: &str) -> Prng {
        Prng::new(self.state, label)
    }

    /// Next raw 64-bit draw.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform draw in `[0, 1)` using the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, rejection-sampled to avoid modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let v = self.next_u64();
            if v >= threshold {
                return v % n;
            }
        }
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "empty range");
        lo + self.below(hi - lo + 1)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// One standard normal draw via the Box-Muller transform. Each call
    /// consumes a full uniform pair; the sine branch is discarded so the
    /// draw count per call is fixed.
    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    /// A pair of independent standard normal draws.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        // 1 - u keeps the log argument in (0, 1], avoiding ln(0).
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Fills a slice with standard normal draws (both Box-Muller branches
    /// are used; a trailing odd element discards its partner).
    pub fn fill_normal(&mut self, out: &mut [f32]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.normal_pair();
            pair[0] = a as f32;
            pair[1] = b as f32;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.normal_pair().0 as f32;
        }
    }

    /// Standard normal tensor of the given extents.
    pub fn normal_tensor(&mut self, shape: Vec<usize>) -> crate::Tensor {
        let mut t = crate::Tensor::zeros(shape);
        self.fill_normal(t.data_mut());
        t
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_reproduces_bit_identically() {
        let mut a = Prng::new(42, "noise");
        let mut b = Prng::new(42, "noise");
        for _ in 0..256 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.normal(), b.normal());
    }

    #[test]
    fn labels_separate_streams() {
        let mut a = Prng::new(42, "noise");
        let mut b = Prng::new(42, "order");
        let first: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let second: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(first, second);

        // Same bytes, different order.
        let mut c = Prng::new(7, "ab");
        let mut d = Prng::new(7, "ba");
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn uniform_lands_in_unit_interval() {
        let mut p = Prng::new(3, "u");
        for _ in 0..10_000 {
            let v = p.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn bounded_draws_cover_range_without_bias_artifacts() {
        let mut p = Prng::new(9, "below");
        let mut counts = [0u32; 7];
        for _ in 0..70_000 {
            counts[p.below(7) as usize] += 1;
        }
        for &c in &counts {
            // Expected 10_000 per bucket; 5 sigma is about 480.
            assert!((9_500..10_500).contains(&c), "bucket count {c}");
        }
    }

    #[test]
    fn gaussian_moments_match_standard_normal() {
        let n = 1_000_000usize;
        let mut p = Prng::new(1234, "gauss-moments");
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for _ in 0..n / 2 {
            let (a, b) = p.normal_pair();
            sum += a + b;
            sumsq += a * a + b * b;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // 4 sigma bound on the mean of n standard normals.
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "var {var}");
    }

    #[test]
    fn distinct_labels_are_statistically_independent() {
        let n = 100_000usize;
        let mut a = Prng::new(5, "left");
        let mut b = Prng::new(5, "right");
        let mut sa = 0.0;
        let mut sb = 0.0;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for _ in 0..n {
            let x = a.normal();
            let y = b.normal();
            sa += x;
            sb += y;
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let corr = cov / ((saa / nf - (sa / nf).powi(2)) * (sbb / nf - (sb / nf).powi(2))).sqrt();
        assert!(corr.abs() <= 4.0 / nf.sqrt(), "corr {corr}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut p = Prng::new(11, "shuffle");
        let mut v: Vec<u32> = (0..100).collect();
        p.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, (0..100).collect::<Vec<_>>());
    }
}
