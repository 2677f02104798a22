use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type used by the engine (`f32` for the main path,
/// `f64` for gradient-check replays).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major tensor of up to four dimensions.
///
/// Shapes are always stored with four entries; missing trailing dimensions
/// are 1, so an `(n, c)` matrix is `(n, c, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::default(); shape.iter().product()],
        }
    }

    /// Builds a tensor from raw data, returning `None` when the lengths disagree.
    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Option<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return None;
        }
        Some(Tensor { shape, data })
    }

    /// Pads a short shape (e.g. `[c_o]` or `[c_o, c_i]`) with trailing ones.
    pub fn from_dims(dims: &[usize], data: Vec<T>) -> Option<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return None;
        }
        let mut shape = [1; 4];
        shape[..dims.len()].copy_from_slice(dims);
        Self::from_vec(shape, data)
    }
}

impl<T> Tensor<T> {
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Elements in one `(c, h, w)` sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
    }
}
