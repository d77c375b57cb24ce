use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::str::FromStr;

use num_traits::Float;

use super::NnError;

/// Floating-point element type of tensors. Training runs in `f32`;
/// gradient checks run in `f64`.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;

    /// Bit pattern widened to 64 bits, used for weight fingerprints.
    fn bits(self) -> u64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn bits(self) -> u64 {
        self.to_bits()
    }
}

/// Dense n-dimensional array stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidShape {
                shape: shape.to_vec(),
                reason: "dimensions must be positive".into(),
            });
        }
        if expected != data.len() {
            return Err(NnError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("holds {} elements but data has {}", expected, data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(NnError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("cannot reshape {:?} ({} elements)", self.shape, self.data.len()),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(T::zero(), T::max),
        )
    }

    /// Stacks equally shaped tensors along a new leading batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self, NnError> {
        let first = items.first().ok_or_else(|| NnError::InvalidShape {
            shape: vec![],
            reason: "cannot stack zero tensors".into(),
        })?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.shape != first.shape {
                return Err(NnError::InvalidShape {
                    shape: t.shape.clone(),
                    reason: format!("stack expects {:?}", first.shape),
                });
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Row `index` of the leading axis as its own tensor.
    pub fn row(&self, index: usize) -> Tensor<T> {
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:?}", v)?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn stack_and_row_are_inverse() {
        let a = Tensor::<f64>::from_fn(&[2, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 2], |i| 10.0 + i as f64);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.row(0), a);
        assert_eq!(s.row(1), b);
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32);
        let r = t.clone().reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4]).is_err());
    }
}
