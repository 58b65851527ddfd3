//! Dense row-major tensors over `f32` with 64-bit reductions.
//!
//! Payloads are deliberately 32-bit (they are what gets serialized and fed
//! to the denoiser), while every reduction accumulates in `f64` so results
//! do not depend on summation luck. Public operations keep values finite;
//! the few that could overflow for extreme inputs say so in their docs and
//! assert finiteness in debug builds.

use crate::error::{Error, Result};

/// A dense tensor: extents plus a row-major `f32` payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor from extents and a payload of matching length.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "new",
                expected: vec![1],
                got: shape,
            });
        }
        if data.len() != expected {
            return Err(Error::Shape {
                op: "new",
                expected: vec![expected],
                got: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    /// All-zeros tensor of the given extents.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        assert!(!shape.is_empty() && !shape.contains(&0), "degenerate shape");
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Constant-filled tensor of the given extents.
    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterprets the payload under new extents of equal element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || n != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                expected: vec![self.data.len()],
                got: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    fn require_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Applies `f` to every element, producing a new tensor.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Combines two same-shape tensors elementwise.
    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.require_same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    /// Multiplies every element by a scalar.
    pub fn scale(&self, c: f32) -> Tensor {
        self.map(|v| v * c)
    }

    /// Adds a scalar to every element.
    pub fn offset(&self, c: f32) -> Tensor {
        self.map(|v| v + c)
    }

    /// Elementwise `e^x`. Overflows to infinity for inputs above roughly 88;
    /// callers are expected to stay well below that (debug builds assert it).
    pub fn exp(&self) -> Tensor {
        let out = self.map(f32::exp);
        debug_assert!(out.data.iter().all(|v| v.is_finite()), "exp overflow");
        out
    }

    /// Clamps every element into `[lo, hi]`.
    pub fn clamp(&self, lo: f32, hi: f32) -> Result<Tensor> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Range(format!("clamp bounds inverted: [{lo}, {hi}]")));
        }
        Ok(self.map(|v| v.clamp(lo, hi)))
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Arithmetic mean of all elements, accumulated in `f64`.
    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Stacks single-channel `[H, W]` tensors into one `[H, W, C]` tensor,
    /// interleaving channels in argument order.
    pub fn stack_channels(planes: &[&Tensor]) -> Result<Tensor> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Config("stack_channels needs at least one plane".into()))?;
        if first.shape.len() != 2 {
            return Err(Error::Shape {
                op: "stack_channels",
                expected: vec![0, 0],
                got: first.shape.clone(),
            });
        }
        for p in planes {
            first.require_same_shape(p, "stack_channels")?;
        }
        let (h, w) = (first.shape[0], first.shape[1]);
        let c = planes.len();
        let mut data = vec![0.0f32; h * w * c];
        for (ci, p) in planes.iter().enumerate() {
            for (pix, &v) in p.data.iter().enumerate() {
                data[pix * c + ci] = v;
            }
        }
        Tensor::new(vec![h, w, c], data)
    }

    /// Extracts channel `c` of an `[H, W, C]` tensor as `[H, W]`.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        if self.shape.len() != 3 {
            return Err(Error::Shape {
                op: "channel",
                expected: vec![0, 0, 0],
                got: self.shape.clone(),
            });
        }
        let (h, w, nc) = (self.shape[0], self.shape[1], self.shape[2]);
        if c >= nc {
            return Err(Error::Index(format!("channel {c} out of {nc}")));
        }
        let data = (0..h * w).map(|pix| self.data[pix * nc + c]).collect();
        Tensor::new(vec![h, w], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "new", .. }));
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let a = Tensor::zeros(vec![2, 2]);
        let b = Tensor::zeros(vec![4]);
        assert!(matches!(a.add(&b), Err(Error::Shape { op: "add", .. })));
    }

    #[test]
    fn elementwise_basics() {
        let a = Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap();
        let b = Tensor::new(vec![3], vec![0.5, 0.5, 0.5]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[1.5, -1.5, 3.5]);
        assert_eq!(a.sub(&b).unwrap().data(), &[0.5, -2.5, 2.5]);
        assert_eq!(a.mul(&b).unwrap().data(), &[0.5, -1.0, 1.5]);
        assert_eq!(a.scale(2.0).data(), &[2.0, -4.0, 6.0]);
        assert_eq!(a.clamp(-1.0, 1.0).unwrap().data(), &[1.0, -1.0, 1.0]);
        assert!(a.clamp(1.0, -1.0).is_err());
    }

    #[test]
    fn reductions_accumulate_in_f64() {
        // 2^24 + 1 is not representable in f32; a chain of f32 additions of
        // ones saturates at 2^24 while the f64 accumulator keeps counting.
        let n = (1 << 24) + 8;
        let t = Tensor::filled(vec![n], 1.0);
        assert_eq!(t.sum(), n as f64);
        assert_eq!(t.mean(), 1.0);
    }

    #[test]
    fn channel_stack_and_extract_roundtrip() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let cat = Tensor::stack_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[2, 2, 2]);
        assert_eq!(cat.data(), &[1.0, 5.0, 2.0, 6.0, 3.0, 7.0, 4.0, 8.0]);
        assert_eq!(cat.channel(0).unwrap(), a);
        assert_eq!(cat.channel(1).unwrap(), b);
        assert!(cat.channel(2).is_err());
    }

    #[test]
    fn reshape_preserves_payload() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let r = t.clone().reshape(vec![3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![4, 2]).is_err());
    }

    proptest! {
        #[test]
        fn clamp_bounds_all_values(vals in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let n = vals.len();
            let t = Tensor::new(vec![n], vals).unwrap();
            let c = t.clamp(-1.0, 1.0).unwrap();
            prop_assert!(c.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn add_then_sub_is_identity(vals in proptest::collection::vec(-1e3f32..1e3, 1..64)) {
            let n = vals.len();
            let a = Tensor::new(vec![n], vals).unwrap();
            let b = Tensor::filled(vec![n], 0.25);
            let back = a.add(&b).unwrap().sub(&b).unwrap();
            for (x, y) in back.data().iter().zip(a.data()) {
                prop_assert!((x - y).abs() <= 1e-4);
            }
        }
    }
}
