use crate::error::{EmberError, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major matrix of 64-bit floats. Vectors are stored as `1 x n`
/// rows. Training and gradient checking run in f64 throughout; exports may
/// round through f32 (see [`Tensor::round_to_f32`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(EmberError::dims(
                "tensor construction",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len().to_string(),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Tensor {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Scalar value of a `1 x 1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.rows != 1 || self.cols != 1 {
            return Err(EmberError::dims(
                "item",
                "1x1",
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        Ok(self.data[0])
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    /// Round every value through 32-bit precision in place.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_payload() {
        assert!(Tensor::from_vec(2, 3, vec![0.0; 6]).is_ok());
        let err = Tensor::from_vec(2, 3, vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn item_requires_scalar_shape() {
        assert_eq!(Tensor::scalar(4.0).item().unwrap(), 4.0);
        assert!(Tensor::zeros(1, 2).item().is_err());
    }

    #[test]
    fn f32_rounding_is_idempotent() {
        let mut t = Tensor::row(vec![0.1, -3.7e-11, 1234.5678]);
        t.round_to_f32();
        let once = t.clone();
        t.round_to_f32();
        assert_eq!(t, once);
    }
}
