//! Minimal NCHW tensor used by the network.
//!
//! Storage is `f32` throughout training and checkpoints; every numeric op is
//! generic over [`Scalar`] so the identical code path can run in `f64` for
//! finite-difference gradient verification.

use std::ops::{AddAssign, MulAssign, SubAssign};

/// Element type for network math: `f32` in production, `f64` for gradient
/// checks.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Batched feature map, NCHW row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
            data: vec![T::ZERO; batch * channels * height * width],
        }
    }

    pub fn from_vec(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Self {
        assert_eq!(data.len(), batch * channels * height * width);
        Self {
            batch,
            channels,
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// One (batch, channel) plane.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let n = self.plane_len();
        let off = (b * self.channels + c) * n;
        &self.data[off..off + n]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let n = self.plane_len();
        let off = (b * self.channels + c) * n;
        &mut self.data[off..off + n]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            batch: self.batch,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Concatenate along the channel axis: `[a | b]`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.batch, b.batch);
    assert_eq!(a.height, b.height);
    assert_eq!(a.width, b.width);
    let mut out = Tensor::zeros(a.batch, a.channels + b.channels, a.height, a.width);
    let n = a.plane_len();
    for bi in 0..a.batch {
        for c in 0..a.channels {
            out.plane_mut(bi, c).copy_from_slice(a.plane(bi, c));
        }
        for c in 0..b.channels {
            out.plane_mut(bi, a.channels + c)
                .copy_from_slice(b.plane(bi, c));
        }
    }
    debug_assert_eq!(out.plane_len(), n);
    out
}

/// Split a channel-concatenated gradient back into the two parts.
pub fn split_channels<T: Scalar>(g: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    assert!(first <= g.channels);
    let second = g.channels - first;
    let mut a = Tensor::zeros(g.batch, first, g.height, g.width);
    let mut b = Tensor::zeros(g.batch, second, g.height, g.width);
    for bi in 0..g.batch {
        for c in 0..first {
            a.plane_mut(bi, c).copy_from_slice(g.plane(bi, c));
        }
        for c in 0..second {
            b.plane_mut(bi, c).copy_from_slice(g.plane(bi, first + c));
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_roundtrips() {
        let mut a = Tensor::<f32>::zeros(2, 3, 4, 4);
        let mut b = Tensor::<f32>::zeros(2, 2, 4, 4);
        for (i, v) in a.data.iter_mut().enumerate() {
            *v = i as f32;
        }
        for (i, v) in b.data.iter_mut().enumerate() {
            *v = -(i as f32);
        }
        let c = concat_channels(&a, &b);
        assert_eq!(c.shape(), (2, 5, 4, 4));
        let (a2, b2) = split_channels(&c, 3);
        assert_eq!(a.data, a2.data);
        assert_eq!(b.data, b2.data);
    }
}
