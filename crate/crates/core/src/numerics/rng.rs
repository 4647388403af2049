//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator whose key is a hash of
//! `(global seed, owner id, step, stage)`. Any computation that draws from a
//! stream keyed by its own coordinates gives the same numbers no matter which
//! worker runs it or in what order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::linalg::DenseVector;

/// Which part of the simulation a stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stage {
    Init = 1,
    Pretrain = 2,
    Creation = 3,
    Memorize = 4,
    JointSample = 5,
    Naming = 6,
    ModelUpdate = 7,
    Snapshot = 8,
    Analysis = 9,
    Test = 10,
}

/// Key of a derived stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub id: u64,
    pub step: u64,
    pub stage: Stage,
}

#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream::derive(StreamKey {
            seed,
            id: 0,
            step: 0,
            stage: Stage::Test,
        })
    }

    pub fn derive(key: StreamKey) -> Self {
        let mut h = splitmix64(key.seed);
        let mut bytes = [0u8; 32];
        for (chunk, word) in bytes
            .chunks_exact_mut(8)
            .zip([key.id, key.step, key.stage as u64, 0x5eed])
        {
            h = splitmix64(h ^ splitmix64(word));
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        RngStream {
            inner: ChaCha8Rng::from_seed(bytes),
        }
    }

    /// A child stream; distinct `id`s give distinct sequences.
    pub fn split(&mut self, id: u64) -> RngStream {
        let base = self.inner.next_u64();
        RngStream::derive(StreamKey {
            seed: base,
            id,
            step: 0,
            stage: Stage::Test,
        })
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    pub fn standard_normal(&mut self, dim: usize) -> DenseVector {
        let mut v = DenseVector::zeros(dim);
        self.fill_normal(v.as_mut_slice());
        v
    }

    /// Bernoulli trial with success probability `p`.
    pub fn accept(&mut self, p: f64) -> bool {
        p >= 1.0 || self.uniform() < p
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let a = RngStream::new(42).standard_normal(16);
        let b = RngStream::new(42).standard_normal(16);
        assert_eq!(a, b);
    }

    #[test]
    fn golden_normals() {
        let v = RngStream::new(7).standard_normal(3);
        // recorded from the first implementation; a change here breaks replay of old runs
        let golden = [2.1721072729935447, -0.33537985205313353, -0.21852900209766485];
        assert_eq!(v.as_slice(), &golden);
    }

    #[test]
    fn moments_of_many_draws() {
        let mut rng = RngStream::new(11);
        let n = 100_000;
        let xs = rng.standard_normal(n);
        let mean = xs.as_slice().iter().sum::<f64>() / n as f64;
        let var = xs.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn split_children_differ() {
        let mut parent = RngStream::new(5);
        let mut p2 = parent.clone();
        let a = parent.split(1).standard_normal(8);
        let b = p2.split(2).standard_normal(8);
        assert_ne!(a, b);
    }

    #[test]
    fn derived_keys_differ_by_each_coordinate() {
        let base = StreamKey {
            seed: 1,
            id: 2,
            step: 3,
            stage: Stage::Creation,
        };
        let x = RngStream::derive(base).next_u64();
        for k in [
            StreamKey { seed: 9, ..base },
            StreamKey { id: 9, ..base },
            StreamKey { step: 9, ..base },
            StreamKey {
                stage: Stage::Naming,
                ..base
            },
        ] {
            assert_ne!(RngStream::derive(k).next_u64(), x);
        }
        assert_eq!(RngStream::derive(base).next_u64(), x);
    }
}
