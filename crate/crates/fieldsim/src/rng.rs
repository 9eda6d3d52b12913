//! Counter-based splittable random streams.
//!
//! Every draw is `mix64(key + counter * PHI)` where `mix64` is the SplitMix64
//! finalizer — pure integer arithmetic, so sequences are identical on every
//! platform. Substreams derive a new key from `(key, id)` and never overlap
//! the parent in practice. Uniform floats take the top 53 bits scaled by
//! 2^-53; normals are Box-Muller over two uniforms.

const PHI: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn seed(seed: u64) -> Self {
        RngStream {
            key: mix64(seed ^ PHI),
            counter: 0,
        }
    }

    /// Deterministically derives an independent stream. Equal `(parent, id)`
    /// always yields the same stream.
    pub fn substream(&self, id: u64) -> Self {
        RngStream {
            key: mix64(self.key ^ mix64(id.wrapping_add(PHI))),
            counter: 0,
        }
    }

    #[inline(always)]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(PHI)))
    }

    /// Uniform in [0, 1).
    #[inline(always)]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline(always)]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller; uniforms are shifted away from zero so
    /// the log is always finite.
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        r * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // 53-bit uniform scaled; bias is negligible for the n used here.
        (self.uniform() * n as f64) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngStream::seed(7);
        let mut b = RngStream::seed(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substreams_reproducible_and_distinct() {
        let root = RngStream::seed(42);
        let mut s1 = root.substream(3);
        let mut s1b = root.substream(3);
        let mut s2 = root.substream(4);
        let mut any_diff = false;
        for _ in 0..10_000 {
            let x = s1.next_u64();
            assert_eq!(x, s1b.next_u64());
            if x != s2.next_u64() {
                any_diff = true;
            }
        }
        assert!(any_diff);
    }

    #[test]
    fn uniform_range() {
        let mut rng = RngStream::seed(1);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    /// Kolmogorov-Smirnov statistic of 1e5 uniform draws against U(0,1),
    /// compared to the 1% critical value 1.63/sqrt(n).
    #[test]
    fn uniform_ks_test() {
        let n = 100_000usize;
        let mut rng = RngStream::seed(20240901);
        let mut draws: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d: f64 = 0.0;
        for (i, x) in draws.iter().enumerate() {
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((x - lo).abs()).max((hi - x).abs());
        }
        let crit = 1.63 / (n as f64).sqrt();
        assert!(d < crit, "KS statistic {d} above 1% critical value {crit}");
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngStream::seed(5);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
