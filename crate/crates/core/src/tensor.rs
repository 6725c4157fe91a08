//! Dense row-major tensors and the parameter registry.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

/// Dense, contiguous, row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ElementCount {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Last extent, or 1 for a rank-0 shape.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape("zip_map", other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape("add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    /// Population standard deviation of all elements.
    pub fn std(&self) -> T {
        let m = self.mean();
        let v = self.data.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::of(self.data.len() as f64);
        v.sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// True when both tensors have the same shape and identical bit patterns.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    /// Converts element type through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    /// Appends the little-endian element bytes.
    pub fn write_le(&self, out: &mut Vec<u8>) {
        out.reserve(self.data.len() * T::DTYPE.size_of());
        for &x in &self.data {
            x.write_le(out);
        }
    }

    /// SHA-256 over shape and little-endian element bytes, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        update_digest(&mut h, self);
        hex::encode(h.finalize())
    }

    pub(crate) fn expect_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::Geometry(format!(
                "{op}: expected rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

fn update_digest<T: Scalar>(h: &mut Sha256, t: &Tensor<T>) {
    for &d in &t.shape {
        h.update((d as u64).to_le_bytes());
    }
    let mut buf = Vec::new();
    t.write_le(&mut buf);
    h.update(&buf);
}

/// Learnable tensor paired with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(T::zero());
    }
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter. Panics on a duplicate name, which is a
    /// programming error in model assembly.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.params.push(Parameter::new(value));
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar elements across all parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// SHA-256 over every name, shape and value in registration order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            update_digest(&mut h, &p.value);
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_count_checked() {
        assert!(Tensor::<f64>::new([2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::new([2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.dtype(), DType::F64);
    }

    #[test]
    fn reshape_preserves_elements() {
        let t = Tensor::<f32>::from_fn([2, 3], |i| i as f32);
        let r = t.clone().reshape([3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape([4, 2]).is_err());
    }

    #[test]
    fn store_registration_order() {
        let mut s = ParamStore::<f64>::new();
        let a = s.register("a", Tensor::zeros([2]));
        let b = s.register("b", Tensor::zeros([3, 2]));
        assert_eq!(s.lookup("b"), Some(b));
        assert_eq!(s.name(a), "a");
        assert_eq!(s.num_elements(), 8);
        assert_eq!(s.get(b).grad.shape(), &[3, 2]);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.register("a", Tensor::zeros([1]));
        s.register("a", Tensor::zeros([1]));
    }

    #[test]
    fn checksum_is_bit_sensitive() {
        let a = Tensor::<f64>::from_fn([4], |i| i as f64);
        let mut b = a.clone();
        assert_eq!(a.checksum(), b.checksum());
        b.data_mut()[3] = f64::from_bits(3.0f64.to_bits() + 1);
        assert_ne!(a.checksum(), b.checksum());
    }
}
