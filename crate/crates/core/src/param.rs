//! Named parameter tensors shared by the learned modules, the optimizer and
//! the checkpoint format.

use crate::real::Real;

pub struct TensorRef<'a, T> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub struct TensorMut<'a, T> {
    pub name: &'static str,
    pub data: &'a mut [T],
}

/// A fixed, ordered list of tensors. `tensors` and `tensors_mut` must list
/// the same tensors in the same order.
pub trait ParamSet<T: Real> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.data.fill(T::zero());
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}
