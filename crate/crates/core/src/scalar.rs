//! Scalar abstraction shared by every kernel.
//!
//! All math in this crate is written against [`Scalar`], which is implemented
//! for `f32` (inference and training default) and `f64` (gradient audits).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Element type tag stored alongside tensors and in weight files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    /// Tag byte used by the weight-file format.
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DType::F32 => f.write_str("f32"),
            DType::F64 => f.write_str("f64"),
        }
    }
}

/// Floating-point scalar usable by the tensor kernels.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: DType;

    /// Gauss error function.
    fn erf(self) -> Self;

    /// Appends the little-endian encoding of `self`.
    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one value from exactly `DTYPE.size_of()` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Raw bit pattern widened to 64 bits, for bit-exact comparisons.
    fn to_bits_u64(self) -> u64;

    /// Lossy conversion from `f64` (rounds to nearest for `f32`).
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar widens to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    fn to_bits_u64(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn le_round_trip() {
        let mut buf = Vec::new();
        1.25f32.write_le(&mut buf);
        (-3.5f64).write_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]), 1.25);
        assert_eq!(f64::read_le(&buf[4..]), -3.5);
    }

    #[test]
    fn dtype_tags() {
        assert_eq!(DType::from_tag(f32::DTYPE.tag()), Some(DType::F32));
        assert_eq!(DType::from_tag(f64::DTYPE.tag()), Some(DType::F64));
        assert_eq!(DType::from_tag(7), None);
    }

    #[test]
    fn erf_values() {
        assert!((Scalar::erf(1.0f64) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert_eq!(Scalar::erf(0.0f32), 0.0);
    }
}
