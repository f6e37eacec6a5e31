use ndarray::{ArrayD, IxDyn};

use crate::Scalar;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: ArrayD<T>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        Self::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("param shape"))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn values(&self) -> &[T] {
        self.value.as_slice().expect("standard layout")
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        self.value.as_slice_mut().expect("standard layout")
    }

    pub fn grads(&self) -> &[T] {
        self.grad.as_slice().expect("standard layout")
    }

    pub fn grads_mut(&mut self) -> &mut [T] {
        self.grad.as_slice_mut().expect("standard layout")
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything that owns named parameters.
pub trait Module<T: Scalar> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.len());
        n
    }
}

/// Dotted parameter path.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
