//! Dense row-major real and complex arrays.
//!
//! These are deliberately thin: shape bookkeeping plus a contiguous `Vec<f64>`.
//! All heavy lifting happens in explicit loops in the operation modules, which
//! keeps index arithmetic visible and the whole stack deterministic.

use crate::error::{Error, Result};

/// Dense real array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RealArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "array data length {} does not match shape {:?} (needs {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(RealArray { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        RealArray {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        RealArray {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        RealArray {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Index into a 2-d array.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at2_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &mut self.data[i * cols + j]
    }

    /// Index into a 3-d array.
    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "{what}: non-finite value {v} at flat index {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    /// self += alpha * other (shapes must match).
    pub fn axpy(&mut self, alpha: f64, other: &RealArray) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }
}

/// Dense complex array stored as separate real/imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexArray {
    pub shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexArray {
    pub fn new(shape: Vec<usize>, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != re.len() || re.len() != im.len() {
            return Err(Error::shape(format!(
                "complex array planes (re {}, im {}) do not match shape {:?}",
                re.len(),
                im.len(),
                shape
            )));
        }
        Ok(ComplexArray { shape, re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        ComplexArray {
            shape: shape.to_vec(),
            re: vec![0.0; numel],
            im: vec![0.0; numel],
        }
    }

    pub fn numel(&self) -> usize {
        self.re.len()
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        for (i, (r, m)) in self.re.iter().zip(&self.im).enumerate() {
            if !r.is_finite() || !m.is_finite() {
                return Err(Error::numeric(format!(
                    "{what}: non-finite complex value ({r}, {m}) at flat index {i}"
                )));
            }
        }
        Ok(())
    }
}
