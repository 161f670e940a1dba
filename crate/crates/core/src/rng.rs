/// Deterministic random stream used everywhere randomness is needed.
///
/// The generator is SplitMix64: starting from the seed, each draw advances the
/// state by 0x9E3779B97F4A7C15 and mixes it with the two xor-shift-multiply
/// rounds below. The same seed yields the same scalar stream on every platform.
///
/// Uniform doubles come from the top 53 bits: `(x >> 11) * 2^-53` in [0, 1).
/// Normal draws use the basic Box-Muller transform on `u1 in (0, 1]`,
/// `u2 in [0, 1)`:
///
///   z0 = sqrt(-2 ln u1) * cos(2 pi u2)
///   z1 = sqrt(-2 ln u1) * sin(2 pi u2)
///
/// with z1 cached and returned by the next call.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    cached_normal: Option<f64>,
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 output for the given state value (stateless mixing function).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a master seed and a stream label.
/// Used to give epochs, samples, and dataset splits their own streams.
pub fn derive_seed(master: u64, label: u64) -> u64 {
    mix64(master.wrapping_add(GAMMA).wrapping_add(label.wrapping_mul(GAMMA)))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            cached_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; used as the log argument of Box-Muller.
    #[inline]
    fn uniform_open_zero(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller, one pair per two draws.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        let u1 = self.uniform_open_zero();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in [0, n) by Lemire multiply-shift reduction; exactly
    /// one `next_u64` per call, so the draw count never depends on the value.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates shuffle driven by `below`.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below((i + 1) as u64) as usize;
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_stays_in_unit_interval() {
        let mut rng = Rng::new(3);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut rng = Rng::new(11);
        let n = 100_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn below_is_uniform_enough_and_in_range() {
        let mut rng = Rng::new(5);
        let mut counts = [0usize; 7];
        for _ in 0..70_000 {
            counts[rng.below(7) as usize] += 1;
        }
        for &c in &counts {
            assert!((8_000..12_000).contains(&c), "counts {counts:?}");
        }
    }

    #[test]
    fn derive_seed_changes_with_label() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    // Golden sample freezing the full seed->normal pipeline. Committed so any
    // platform or toolchain drift in the stream is caught immediately.
    #[test]
    fn normal_stream_golden_seed_42() {
        let expected = [
            0.4147197504315305,
            0.6526812221519427,
            -0.8918862136277562,
            1.3268335628141064,
            1.7295930879374015,
            -1.883416788902816,
            0.5456204361828646,
            -1.6568357941995997,
            -1.080412954982541,
            -0.9953556470042673,
            -1.7788480910585858,
            0.07840941628547889,
            -1.1456184297395176,
            -0.1448225253064826,
            0.26045053911027205,
            0.8646517332472787,
        ];
        let mut rng = Rng::new(42);
        for (i, &want) in expected.iter().enumerate() {
            let got = rng.normal();
            assert_eq!(got.to_bits(), f64::to_bits(want), "draw {i}: {got} != {want}");
        }
    }
}
