//! Layer primitives with hand-written backward passes.
//!
//! Every layer follows the same protocol: `forward` is pure and returns the
//! output together with whatever the backward pass needs, `backward` takes
//! that cache plus the upstream gradient, accumulates parameter gradients
//! into the layer's [`Param`]s and returns the gradient w.r.t. the input.

mod act;
mod conv;
mod grn;
mod norm;
mod param;

pub use act::{gelu, gelu_backward};
pub(crate) use conv::conv_param;
pub use conv::{
    conv_output_size, depthwise_backward, depthwise_forward, Conv2d, Pointwise, UpConv2x2,
};
pub use grn::{grn, Grn, GrnCache, GRN_EPS};
pub use norm::{LayerNorm2d, LayerNormCache};
pub use param::{join, Module, Param};

use ndarray::{linalg::general_mat_mul, ArrayView2, ArrayViewMut2};

use crate::Scalar;

/// `c = alpha * a(m×k) · b(k×n) + beta * c` on raw row-major slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    beta: T,
    c: &mut [T],
) {
    let a = if a_trans {
        ArrayView2::from_shape((k, m), a).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).unwrap()
    };
    let b = if b_trans {
        ArrayView2::from_shape((n, k), b).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).unwrap()
    };
    let mut c = ArrayViewMut2::from_shape((m, n), c).unwrap();
    general_mat_mul(alpha, &a, &b, beta, &mut c);
}
