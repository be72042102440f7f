use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Real;

/// Multi-channel activation volume, channel-major then x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor<T> {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Real> FeatureTensor<T> {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Self { channels, dims, data: vec![T::ZERO; channels * dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_data(channels: usize, dims: [usize; 3], data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * dims.iter().product::<usize>(), "tensor payload size");
        Self { channels, dims, data }
    }

    #[inline]
    pub fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }
}
