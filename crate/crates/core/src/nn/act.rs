use ndarray::{Array4, Zip};

use crate::Scalar;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: &Array4<T>) -> Array4<T> {
    let half = T::lit(0.5);
    let k = T::lit(SQRT_2_OVER_PI);
    let c = T::lit(GELU_C);
    x.mapv(|v| half * v * (T::one() + (k * (v + c * v * v * v)).tanh()))
}

pub fn gelu_backward<T: Scalar>(x: &Array4<T>, dy: &Array4<T>) -> Array4<T> {
    let half = T::lit(0.5);
    let k = T::lit(SQRT_2_OVER_PI);
    let c = T::lit(GELU_C);
    let c3 = T::lit(3.0 * GELU_C);
    let mut dx = Array4::zeros(x.raw_dim());
    Zip::from(&mut dx).and(x).and(dy).for_each(|d, &v, &g| {
        let t = (k * (v + c * v * v * v)).tanh();
        let deriv = half * (T::one() + t) + half * v * (T::one() - t * t) * k * (T::one() + c3 * v * v);
        *d = g * deriv;
    });
    dx
}
