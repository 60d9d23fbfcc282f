//! Counter-based random streams.
//!
//! Every path draws from its own ChaCha stream keyed by
//! `(run seed, realization, path)`, so results never depend on scheduling.
//! Medium realizations use stateless hashing of integer cell coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Vector;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a seed together with a list of signed integer words.
#[inline]
pub fn hash_words(seed: u64, words: &[i64]) -> u64 {
    let mut h = mix64(seed ^ 0x5851_F42D_4C95_7F2D);
    for &w in words {
        h = mix64(h ^ (w as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
    }
    h
}

/// Maps a hash to `[0, 1)` using its top 53 bits.
#[inline]
pub fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives a sub-seed, e.g. the realization seed for index `k` of a run.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    hash_words(seed, &[tag as i64, index as i64])
}

/// Random source of a single path.
///
/// With `antithetic` set, every normal draw is negated and every uniform
/// `u` is replaced by `1 - u`; the partner path uses the same stream
/// without the flag.
#[derive(Clone, Debug)]
pub struct PathRng {
    inner: ChaCha8Rng,
    antithetic: bool,
}

impl PathRng {
    pub fn new(seed: u64, realization: u64, stream: u64, antithetic: bool) -> Self {
        let mut key = [0u8; 32];
        let mut h = hash_words(seed, &[realization as i64]);
        for chunk in key.chunks_mut(8) {
            h = mix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream);
        PathRng { inner, antithetic }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        let z: f64 = self.inner.sample(StandardNormal);
        if self.antithetic {
            -z
        } else {
            z
        }
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        let mut u: f64 = self.inner.random();
        while u == 0.0 {
            u = self.inner.random();
        }
        if self.antithetic {
            1.0 - u
        } else {
            u
        }
    }

    /// Standard normal vector in the first `dim` components.
    #[inline]
    pub fn normal_vector(&mut self, dim: usize) -> Vector {
        let mut v = Vector::zeros();
        for i in 0..dim {
            v[i] = self.normal();
        }
        v
    }

    pub fn is_antithetic(&self) -> bool {
        self.antithetic
    }
}
