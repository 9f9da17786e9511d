//! Dense n-dimensional arrays.
//!
//! [`Tensor`] is a row-major, heap-backed array of one scalar type. The
//! model and all file formats use `f32`; gradient-check tests instantiate
//! the same code with `f64`. Only scalar broadcast is supported — shapes
//! must otherwise match exactly.

use std::fmt;
use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Real scalar usable as a tensor element. Implemented for `f32` and `f64`.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + Default
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    /// Smallest positive normal value.
    const MIN_POS: Self;
    /// Largest value strictly below one.
    const BELOW_ONE: Self;
    /// Bytes per element in the serialized little-endian form.
    const WIDTH: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn is_finite(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $width:expr, $below_one:expr) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const MIN_POS: Self = <$t>::MIN_POSITIVE;
            const BELOW_ONE: Self = $below_one;
            const WIDTH: usize = $width;

            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn mul_add(self, a: Self, b: Self) -> Self {
                self.mul_add(a, b)
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                self.is_finite()
            }
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("scalar width"))
            }
        }
    };
}

impl_scalar!(f32, 4, 1.0 - f32::EPSILON / 2.0);
impl_scalar!(f64, 8, 1.0 - f64::EPSILON / 2.0);

/// Dense row-major n-dimensional array.
///
/// Invariants: the shape is non-empty, every dimension is at least 1, and
/// `data.len()` equals the product of the dimensions. For shape `[A, B]`
/// element `(i, j)` lives at flat index `i * B + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    fn checked_len(shape: &[usize]) -> Result<usize> {
        if shape.is_empty() {
            return Err(Error::Shape("tensor shape must be non-empty".into()));
        }
        let mut len = 1usize;
        for &d in shape {
            if d == 0 {
                return Err(Error::Shape(format!(
                    "tensor shape {shape:?} has a zero dimension"
                )));
            }
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::Shape(format!("tensor shape {shape:?} overflows")))?;
        }
        Ok(len)
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = Self::checked_len(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![S::ZERO; len],
        })
    }

    /// Tensor filled with one value.
    pub fn filled(shape: &[usize], value: S) -> Result<Self> {
        let len = Self::checked_len(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    /// Wraps an existing buffer. The buffer length must match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let len = Self::checked_len(shape)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Tensor with elements drawn from a normal distribution.
    pub fn randn(shape: &[usize], rng: &mut SeededRng, mean: f64, stddev: f64) -> Result<Self> {
        if stddev < 0.0 {
            return Err(Error::Config(format!("negative stddev {stddev}")));
        }
        let len = Self::checked_len(shape)?;
        let data = (0..len)
            .map(|_| S::from_f64(rng.normal(mean, stddev)))
            .collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// 2-d identity matrix.
    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = S::ONE;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            debug_assert!(i < d);
            flat = flat * d + i;
        }
        flat
    }

    /// Element at a multi-dimensional index.
    pub fn at(&self, index: &[usize]) -> S {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: S) {
        let flat = self.flat_index(index);
        self.data[flat] = value;
    }

    /// Same buffer under a new shape with equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = Self::checked_len(shape)?;
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({len})",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Scalar broadcast multiply.
    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    /// Scalar broadcast add.
    pub fn add_scalar(&self, k: S) -> Self {
        self.map(|v| v + k)
    }

    /// In-place `self += other * k`. Used by the optimizer.
    pub fn axpy(&mut self, other: &Self, k: S) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * k;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: S) {
        self.data.fill(value);
    }

    /// Standard 2-d matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Shape(format!(
                "matmul needs 2-d operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![S::ZERO; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Serializes as a little-endian shape header (u32 rank, u32 dims)
    /// followed by the raw scalar data.
    pub fn write_to(&self, out: &mut impl Write) -> io::Result<()> {
        let mut buf = Vec::with_capacity(4 + 4 * self.shape.len() + self.data.len() * S::WIDTH);
        buf.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            v.write_le(&mut buf);
        }
        out.write_all(&buf)
    }

    /// Reads a tensor written by [`Tensor::write_to`].
    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word) as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("bad tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            input.read_exact(&mut word)?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let len = Self::checked_len(&shape)?;
        let mut raw = vec![0u8; len * S::WIDTH];
        input.read_exact(&mut raw)?;
        let data = raw.chunks_exact(S::WIDTH).map(S::read_le).collect();
        Ok(Self { shape, data })
    }

    /// Converts element type, preserving shape.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }
}
