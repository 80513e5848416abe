use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::tensor::Tensor;

/// Grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != height * width {
            return Err(ModelError::Dims(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Sequence("image holds non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.height, self.width], self.data.clone())
    }

    /// Rank-2 tensor back to an image.
    pub fn from_tensor(t: &Tensor) -> Result<Self, ModelError> {
        match t.shape() {
            [h, w] => Self::new(*h, *w, t.data().to_vec()),
            other => Err(ModelError::Dims(format!("expected a rank-2 tensor, got {other:?}"))),
        }
    }

    /// Pixels with value strictly above `threshold`.
    pub fn support(&self, threshold: f64) -> Vec<bool> {
        self.data.iter().map(|v| *v > threshold).collect()
    }
}
