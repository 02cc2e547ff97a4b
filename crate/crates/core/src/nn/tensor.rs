use alloc::vec;
use alloc::vec::Vec;

/// Activation volume of a single sample, `[channels, height, width]`, row-major.
///
/// Vectors (fully connected activations) use height = width = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { shape: [c, h, w], data: vec![0.0; c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data does not match shape {c}x{h}x{w}");
        Self { shape: [c, h, w], data }
    }

    pub fn vector(data: Vec<f32>) -> Self {
        let n = data.len();
        Self { shape: [n, 1, 1], data }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn plane(&self) -> usize {
        self.shape[1] * self.shape[2]
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

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn reshape(self, c: usize, h: usize, w: usize) -> Self {
        Self::from_vec(c, h, w, self.data)
    }
}
