//! Counter-based deterministic random streams.
//!
//! Scene generation and track noise must be reproducible bit-for-bit across
//! runs, thread counts and language ports, so instead of a stateful generator
//! we use a pure function of `(seed, stream, counter)` built from the
//! SplitMix64 finalizer (Steele, Lea & Flood, "Fast splittable pseudorandom
//! number generators", OOPSLA 2014) and the golden-ratio increment.
//!
//! Constants:
//! - `GAMMA  = 0x9E3779B97F4A7C15` (2^64 / phi, rounded to odd)
//! - mix multipliers `0xBF58476D1CE4E5B9`, `0x94D049BB133111EB`
//!
//! Definition, all arithmetic mod 2^64:
//!
//! ```text
//! base(seed, stream)      = mix64(seed ^ mix64(stream * GAMMA))
//! value(seed, stream, k)  = mix64(base + (k + 1) * GAMMA)
//! ```
//!
//! Any language with 64-bit unsigned arithmetic reproduces the streams.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `k`-th 64-bit value of stream `stream` under `seed`.
#[inline]
pub fn value(seed: u64, stream: u64, k: u64) -> u64 {
    let base = mix64(seed ^ mix64(stream.wrapping_mul(GAMMA)));
    mix64(base.wrapping_add(k.wrapping_add(1).wrapping_mul(GAMMA)))
}

/// Uniform double in `[0, 1)` with 53 bits of mantissa.
#[inline]
pub fn uniform(seed: u64, stream: u64, k: u64) -> f64 {
    (value(seed, stream, k) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform double in the open-closed interval `(0, 1]`, safe for `ln`.
#[inline]
fn uniform_oc(seed: u64, stream: u64, k: u64) -> f64 {
    ((value(seed, stream, k) >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A standard-normal pair via Box-Muller from counters `2k` and `2k + 1`.
pub fn gaussian_pair(seed: u64, stream: u64, k: u64) -> (f64, f64) {
    let u1 = uniform_oc(seed, stream, 2 * k);
    let u2 = uniform(seed, stream, 2 * k + 1);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Sequential convenience view over one `(seed, stream)` pair.
pub struct Stream {
    seed: u64,
    stream: u64,
    next: u64,
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream, next: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = value(self.seed, self.stream, self.next);
        self.next += 1;
        v
    }

    pub fn next_uniform(&mut self) -> f64 {
        let v = uniform(self.seed, self.stream, self.next);
        self.next += 1;
        v
    }

    /// Uniform in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_pure_functions() {
        assert_eq!(value(42, 3, 100), value(42, 3, 100));
        let a: Vec<u64> = (0..8).map(|k| value(7, 1, k)).collect();
        let mut s = Stream::new(7, 1);
        let b: Vec<u64> = (0..8).map(|_| s.next_u64()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_do_not_collide() {
        // Different seeds and streams give unrelated prefixes.
        let a: Vec<u64> = (0..16).map(|k| value(1, 0, k)).collect();
        let b: Vec<u64> = (0..16).map(|k| value(2, 0, k)).collect();
        let c: Vec<u64> = (0..16).map(|k| value(1, 1, k)).collect();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_in_unit_interval() {
        for k in 0..1000 {
            let u = uniform(9, 5, k);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn gaussian_moments() {
        let n = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for k in 0..n {
            let (a, b) = gaussian_pair(1234, 7, k);
            sum += a + b;
            sumsq += a * a + b * b;
        }
        let count = (2 * n) as f64;
        let mean = sum / count;
        let var = sumsq / count - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }
}
