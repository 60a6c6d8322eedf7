//! Dense float tensors and cosine geometry.

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Immutable row-major `f32` tensor of rank 1 to 4.
///
/// Every constructor checks that the data length matches the shape and that
/// all values are finite, so a `Tensor` in hand is always well formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::shape(format!("non-finite value at flat index {i}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        Ok(Tensor {
            shape,
            data: vec![0.0; numel],
        })
    }

    /// Build from `f64` values, rounding to `f32`.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        if numel != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Elementwise map; the result is re-validated.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Interpret as `[C, H, W]`, returning the three extents.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!(
                "expected a [C, H, W] tensor, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape(format!(
            "rank must be 1..={MAX_RANK}, got {}",
            shape.len()
        )));
    }
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::shape(format!("shape {shape:?} overflows")))?;
    }
    Ok(n)
}

/// Cosine distance `1 - u·v / (|u| |v|)`, accumulated in `f64`.
///
/// Zero-norm inputs are rejected rather than mapped to an arbitrary distance.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "feature lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(Error::shape("empty feature vector"));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateFeature);
    }
    let sim = (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0);
    Ok(1.0 - sim)
}
