//! Dense row-major tensors used by the forward pass.
//!
//! Spatial tensors are laid out channel-major (`[channels, height, width]`);
//! flat tensors have a single dimension.

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Panics if `data.len()` does not match the product of `shape`.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)` for rank-3 tensors.
    pub fn spatial_dims(&self) -> Option<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Some((c, h, w)),
            _ => None,
        }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    /// One channel plane of a spatial tensor.
    pub fn channel(&self, index: usize) -> &[f32] {
        let (_, h, w) = self.spatial_dims().expect("channel() on non-spatial tensor");
        &self.data[index * h * w..(index + 1) * h * w]
    }

    pub fn channel_mut(&mut self, index: usize) -> &mut [f32] {
        let (_, h, w) = self.spatial_dims().expect("channel_mut() on non-spatial tensor");
        &mut self.data[index * h * w..(index + 1) * h * w]
    }
}
