//! Seeded pseudo-random generation.
//!
//! The stream is ChaCha8 (`rand_chacha::ChaCha8Rng`) keyed with
//! `seed_from_u64(seed)`. ChaCha output is defined bit-for-bit by its
//! reference algorithm and does not depend on platform word size or
//! endianness, so a seed replays identically everywhere. Normal deviates use
//! `rand_distr::StandardNormal` (ziggurat), uniform integers use `rand`'s
//! unbiased range sampling; both are value-stable within the pinned crate
//! versions.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;

/// Deterministic generator; one owner per stream.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// `rows x cols` matrix of independent N(mean, std²) draws, filled row-major.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize, mean: f64, std: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| mean + std * self.standard_normal())
    }

    pub fn normal_vec(&mut self, n: usize, mean: f64, std: f64) -> Vec<f64> {
        (0..n).map(|_| mean + std * self.standard_normal()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// Draws a `rows x cols` matrix of N(mean, std²) values from `rng`.
///
/// `std = 0` yields a constant matrix. Negative `std` is rejected.
pub fn rng_normal(
    rng: &mut Rng,
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
) -> crate::Result<Matrix> {
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(crate::Error::Parameter(format!(
            "rng_normal needs finite mean and std >= 0, got mean={mean}, std={std}"
        )));
    }
    Ok(rng.normal_matrix(rows, cols, mean, std))
}

/// Mixes a master seed with a list of integer keys into an independent child seed.
///
/// Each key is folded in with the SplitMix64 finalizer:
/// `h = mix(h ^ mix(key + 0x9E3779B97F4A7C15))`, starting from `h = mix(master)`.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    keys.iter().fold(mix(master), |h, &k| {
        mix(h ^ mix(k.wrapping_add(0x9E37_79B9_7F4A_7C15)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_is_constant() {
        let m = rng_normal(&mut Rng::new(1), 3, 4, 2.5, 0.0).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn same_seed_same_matrix() {
        let a = rng_normal(&mut Rng::new(9), 5, 5, 0.0, 1.0).unwrap();
        let b = rng_normal(&mut Rng::new(9), 5, 5, 0.0, 1.0).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = rng_normal(&mut Rng::new(10), 5, 5, 0.0, 1.0).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn negative_std_rejected() {
        assert!(rng_normal(&mut Rng::new(1), 1, 1, 0.0, -1.0).is_err());
    }

    #[test]
    fn sample_moments() {
        let m = rng_normal(&mut Rng::new(42), 1000, 100, 0.0, 1.0).unwrap();
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.01, "mean {mean}");
        // Standard error of the sample std is about 1/sqrt(2n).
        assert!((var.sqrt() - 1.0).abs() <= 3.0 / (2.0 * n).sqrt(), "std {}", var.sqrt());

        let shifted = rng_normal(&mut Rng::new(7), 1000, 100, 3.0, 0.5).unwrap();
        let smean = shifted.as_slice().iter().sum::<f64>() / n;
        assert!((smean - 3.0).abs() <= 3.0 * 0.5 / n.sqrt(), "mean {smean}");
    }

    #[test]
    fn derived_seeds_differ_per_key() {
        let a = derive_seed(1, &[0, 1, 1000]);
        let b = derive_seed(1, &[0, 1, 5000]);
        let c = derive_seed(2, &[0, 1, 1000]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(1, &[0, 1, 1000]));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = Rng::new(4).permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
