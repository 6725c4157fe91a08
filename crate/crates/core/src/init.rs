//! Seeded parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the truncated-normal weight init.
pub const INIT_STD: f64 = 0.02;

/// Deterministic source of initial weights.
///
/// Weights are drawn from N(0, σ²) and redrawn until they fall within ±2σ.
/// Values are sampled in `f64` and then rounded, so `f32` and `f64` models
/// built from the same seed agree up to rounding.
pub struct Initializer {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    bound: f64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self::with_std(seed, INIT_STD)
    }

    pub fn with_std(seed: u64, std: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, std).expect("positive std"),
            bound: 2.0 * std,
        }
    }

    pub fn sample(&mut self) -> f64 {
        loop {
            let v = self.normal.sample(&mut self.rng);
            if v.abs() <= self.bound {
                return v;
            }
        }
    }

    pub fn trunc_normal<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        Tensor::from_fn(shape.to_vec(), |_| T::of(self.sample()))
    }
}
