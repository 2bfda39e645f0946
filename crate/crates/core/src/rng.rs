//! Seeded random streams.
//!
//! Everything stochastic in this crate draws from [`Stream`]s derived from a
//! single run seed. Streams are independent by construction (each is keyed by
//! a label hashed into the seed), only ever move forward, and count their
//! draws, which is what makes bit-identical replays and the fresh-batch
//! bookkeeping in the trainer checkable.

/// SplitMix64 step; used to derive stream seeds and to initialize xoshiro state.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// xoshiro256++ with Box–Muller caching for normal draws.
///
/// The generator is fixed (not pluggable) so that a seed pins the entire
/// sample path across builds and platforms.
#[derive(Debug, Clone)]
pub struct Stream {
    state: [u64; 4],
    /// Second Box–Muller output, held for the next normal draw.
    cached_normal: Option<f64>,
    draws: u64,
}

impl Stream {
    /// Derive a stream from a run seed and a label.
    ///
    /// Distinct labels give statistically independent streams for the same
    /// seed; the same (seed, label) pair always gives the same stream.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut s = seed ^ 0x6a09e667f3bcc908;
        for &b in label.as_bytes() {
            s = splitmix64(&mut s) ^ u64::from(b).wrapping_mul(0x100000001b3);
        }
        let mut state = [0u64; 4];
        for slot in &mut state {
            *slot = splitmix64(&mut s);
        }
        // xoshiro state must not be all zero.
        if state == [0, 0, 0, 0] {
            state[0] = 1;
        }
        Stream { state, cached_normal: None, draws: 0 }
    }

    fn next_u64(&mut self) -> u64 {
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

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box–Muller on the uniform stream.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Student's t with `df` degrees of freedom: Z / sqrt(V/df), with the
    /// chi-square V built from `df` squared normals.
    pub fn student_t(&mut self, df: u32) -> f64 {
        let z = self.normal();
        let mut v = 0.0;
        for _ in 0..df {
            let n = self.normal();
            v += n * n;
        }
        z / (v / f64::from(df)).sqrt()
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Bounded rejection-free mapping is fine here: n is tiny (mixture
        // member counts), so the modulo bias is far below anything observable.
        self.draws += 1;
        (self.next_u64() % n as u64) as usize
    }

    /// Number of draws consumed so far (uniforms and indices; a normal counts
    /// the uniforms it consumed).
    pub fn draws(&self) -> u64 {
        self.draws
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Stream::derive(7, "latent");
        let mut b = Stream::derive(7, "latent");
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn labels_give_distinct_streams() {
        let mut a = Stream::derive(7, "latent");
        let mut b = Stream::derive(7, "mu.0");
        let xs: Vec<f64> = (0..8).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..8).map(|_| b.uniform()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn normal_moments() {
        let mut s = Stream::derive(42, "n");
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = s.normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt() * 1.5, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn student_t_variance_matches_df_over_df_minus_two() {
        let mut s = Stream::derive(11, "t");
        let df = 8;
        let n = 200_000;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let t = s.student_t(df);
            sumsq += t * t;
        }
        let var = sumsq / n as f64;
        let expect = 8.0 / 6.0;
        assert!((var - expect).abs() < 0.05, "var {var} vs {expect}");
    }

    #[test]
    fn draw_counter_advances() {
        let mut s = Stream::derive(1, "x");
        assert_eq!(s.draws(), 0);
        s.uniform();
        s.normal();
        assert!(s.draws() >= 3);
    }
}
