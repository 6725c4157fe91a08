//! Deterministic oriented-grating dataset.

use sha2::{Digest, Sha256};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Side length of toy images.
pub const TOY_SIZE: usize = 32;
/// Grating frequency in cycles per image width.
pub const TOY_CYCLES: f64 = 4.0;
/// Peak amplitude of the grating around mid-gray.
pub const TOY_AMPLITUDE: f64 = 0.4;
/// Half-width of the uniform pixel noise.
pub const TOY_NOISE: f64 = 0.1;

/// splitmix64, the reference 64-bit mixer-based generator.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset<T> {
    /// `[n, 32, 32, 3]`, normalized as `(x − 0.5)/0.5`.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub seed: u64,
    pub classes: usize,
}

/// Raw pixels in `[0, 1]` (one channel, `n·32·32` values) and labels.
///
/// Sample `i` has label `i mod classes`; its grating is oriented at
/// `label·180°/classes` (18° steps for ten classes) with a random phase,
/// plus uniform noise of half-width 0.1.
pub fn toy_pixels(seed: u64, n: usize, classes: usize) -> (Vec<f64>, Vec<usize>) {
    let mut rng = SplitMix64::new(seed);
    let omega = 2.0 * std::f64::consts::PI * TOY_CYCLES / TOY_SIZE as f64;
    let mut pixels = Vec::with_capacity(n * TOY_SIZE * TOY_SIZE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let theta = (label as f64 * 180.0 / classes as f64).to_radians();
        let (sin_t, cos_t) = theta.sin_cos();
        let phase = 2.0 * std::f64::consts::PI * rng.next_f64();
        for y in 0..TOY_SIZE {
            for x in 0..TOY_SIZE {
                let t = omega * (x as f64 * cos_t + y as f64 * sin_t) + phase;
                let noise = TOY_NOISE * (2.0 * rng.next_f64() - 1.0);
                pixels.push((0.5 + TOY_AMPLITUDE * t.sin() + noise).clamp(0.0, 1.0));
            }
        }
        labels.push(label);
    }
    (pixels, labels)
}

/// Builds the normalized dataset.
pub fn gen_toy_dataset<T: Scalar>(seed: u64, n: usize, classes: usize) -> crate::Result<ToyDataset<T>> {
    if classes == 0 {
        return Err(crate::Error::Config("toy dataset needs at least one class".into()));
    }
    let (pixels, labels) = toy_pixels(seed, n, classes);
    let mut data = Vec::with_capacity(pixels.len() * 3);
    for p in pixels {
        let v = T::of((p - 0.5) / 0.5);
        data.extend_from_slice(&[v, v, v]);
    }
    Ok(ToyDataset {
        images: Tensor::new([n, TOY_SIZE, TOY_SIZE, 3], data)?,
        labels,
        seed,
        classes,
    })
}

/// Seeded `[h, w, 3]` image with entries uniform in `[−1, 1)`, i.e. uniform
/// pixels after normalization.
pub fn random_image<T: Scalar>(seed: u64, h: usize, w: usize) -> Tensor<T> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn([h, w, 3], |_| T::of(2.0 * rng.next_f64() - 1.0))
}

impl<T: Scalar> ToyDataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> Tensor<T> {
        let sz = TOY_SIZE * TOY_SIZE * 3;
        Tensor::new(
            [TOY_SIZE, TOY_SIZE, 3],
            self.images.data()[i * sz..(i + 1) * sz].to_vec(),
        )
        .expect("slice sized to one image")
    }

    /// SHA-256 over image bytes and labels.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.images.checksum().as_bytes());
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
