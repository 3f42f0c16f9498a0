//! Dense row-major tensors and the numeric kernels the models are built from.
//!
//! Every kernel comes in two flavours: an allocating convenience form and an
//! `*_into` form that writes into a caller-owned tensor. The streaming engine
//! only uses the latter so its steady-state frame loop never touches the heap.

mod conv;
mod ops;

use std::fmt;

pub use conv::{conv, conv_into, conv_transpose, conv_transpose_into, ConvScratch, ConvSpec, MAX_SPATIAL};
pub use ops::{
    avg_pool_trailing_into, batch_norm_into, dot, layer_norm_rows, linear, linear_into, lstm_step,
    lstm_step_into, max_pool, max_pool_into, normalize, permute, permute_into, prelu_channels_first,
    prelu_channels_last, relu, sigmoid, silu, softmax, LstmWeights, NormKind,
};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_RANK: usize = 5;

/// Extents of a tensor, at most [`MAX_RANK`] axes, stored inline.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; MAX_RANK],
    rank: usize,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::shape(
                "shape",
                format!("rank {} outside 1..={MAX_RANK}", dims.len()),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::shape("shape", format!("zero extent in {dims:?}")));
        }
        let mut d = [1; MAX_RANK];
        d[..dims.len()].copy_from_slice(dims);
        Ok(Shape {
            dims: d,
            rank: dims.len(),
        })
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank]
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> [usize; MAX_RANK] {
        let mut s = [0; MAX_RANK];
        let mut acc = 1;
        for a in (0..self.rank).rev() {
            s[a] = acc;
            acc *= self.dims[a];
        }
        s
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.dims())
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Ok(Tensor {
            data: vec![T::zero(); shape.numel()],
            shape,
        })
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} elements for shape {:?}", data.len(), dims),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Ok(Tensor {
            data: (0..shape.numel()).map(&mut f).collect(),
            shape,
        })
    }

    /// Empty placeholder with room for `capacity` elements, for scratch buffers.
    pub fn with_capacity(capacity: usize) -> Self {
        let mut data = Vec::with_capacity(capacity.max(1));
        data.push(T::zero());
        Tensor {
            shape: Shape::new(&[1]).expect("valid"),
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Changes the logical shape, keeping the element count.
    pub fn reshape(&mut self, dims: &[usize]) -> Result<()> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, dims),
            ));
        }
        self.shape = shape;
        Ok(())
    }

    /// Re-dimensions in place. Contents are unspecified afterwards; no
    /// allocation happens while the capacity suffices.
    pub fn resize_to(&mut self, dims: &[usize]) -> Result<()> {
        let shape = Shape::new(dims)?;
        self.data.resize(shape.numel(), T::zero());
        self.shape = shape;
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Flat offset of a full multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.rank());
        let s = self.shape.strides();
        idx.iter().zip(&s).map(|(i, s)| i * s).sum()
    }

    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        self.data.iter_mut().for_each(|x| *x = f(*x));
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn copy_from(&mut self, other: &Tensor<T>) {
        self.shape = other.shape;
        self.data.clear();
        self.data.extend_from_slice(&other.data);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rejects_zero_and_overlong() {
        assert!(Shape::new(&[2, 0]).is_err());
        assert!(Shape::new(&[1; 6]).is_err());
        assert!(Shape::new(&[]).is_err());
        assert_eq!(Shape::new(&[2, 3, 4]).unwrap().strides()[..3], [12, 4, 1]);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(&[1, 0]), 3.0);
    }

    #[test]
    fn resize_within_capacity_keeps_buffer() {
        let mut t = Tensor::<f32>::with_capacity(64);
        let p = t.data().as_ptr();
        t.resize_to(&[4, 16]).unwrap();
        assert_eq!(t.data().as_ptr(), p);
        t.resize_to(&[2, 3]).unwrap();
        assert_eq!(t.len(), 6);
    }
}
