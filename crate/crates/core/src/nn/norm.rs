use ndarray::Array4;

use super::{join, Module, Param};
use crate::Scalar;

/// Layer normalization over the channel axis of an NCHW tensor, applied
/// independently at every pixel.
#[derive(Debug, Clone)]
pub struct LayerNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Array4<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::from_vec(&[channels], vec![T::one(); channels]),
            beta: Param::zeros(&[channels]),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, LayerNormCache<T>) {
        let (b, c, h, w) = x.dim();
        let hw = h * w;
        let inv_c = T::one() / T::lit(c as f64);
        let eps = T::lit(self.eps);
        let xs = x.as_slice().expect("standard layout");
        let mut xhat = Array4::zeros((b, c, h, w));
        let mut y = Array4::zeros((b, c, h, w));
        let mut inv_std = vec![T::zero(); b * hw];
        let gamma = self.gamma.values();
        let beta = self.beta.values();
        let mut mean = vec![T::zero(); hw];
        let mut var = vec![T::zero(); hw];
        {
            let xh = xhat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for bi in 0..b {
                let item = &xs[bi * c * hw..(bi + 1) * c * hw];
                mean.fill(T::zero());
                var.fill(T::zero());
                for plane in item.chunks(hw) {
                    for (m, &v) in mean.iter_mut().zip(plane) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m *= inv_c);
                for plane in item.chunks(hw) {
                    for ((s, &v), &m) in var.iter_mut().zip(plane).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let istd = &mut inv_std[bi * hw..(bi + 1) * hw];
                for (is, &s) in istd.iter_mut().zip(&var) {
                    *is = T::one() / (s * inv_c + eps).sqrt();
                }
                for ch in 0..c {
                    let off = (bi * c + ch) * hw;
                    for p in 0..hw {
                        let n = (item[ch * hw + p] - mean[p]) * istd[p];
                        xh[off + p] = n;
                        ys[off + p] = n * gamma[ch] + beta[ch];
                    }
                }
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Array4<T>) -> Array4<T> {
        let (b, c, h, w) = dy.dim();
        let hw = h * w;
        let inv_c = T::one() / T::lit(c as f64);
        let xh = cache.xhat.as_slice().unwrap();
        let gs = dy.as_slice().expect("standard layout");
        let mut dx = Array4::zeros((b, c, h, w));
        let dxs = dx.as_slice_mut().unwrap();
        let gamma = self.gamma.values().to_vec();
        let mut m1 = vec![T::zero(); hw];
        let mut m2 = vec![T::zero(); hw];
        for bi in 0..b {
            m1.fill(T::zero());
            m2.fill(T::zero());
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                let mut dg = T::zero();
                let mut db = T::zero();
                for p in 0..hw {
                    let g = gs[off + p];
                    let n = xh[off + p];
                    dg += g * n;
                    db += g;
                    let dn = g * gamma[ch];
                    m1[p] += dn;
                    m2[p] += dn * n;
                }
                self.gamma.grads_mut()[ch] += dg;
                self.beta.grads_mut()[ch] += db;
            }
            let istd = &cache.inv_std[bi * hw..(bi + 1) * hw];
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                for p in 0..hw {
                    let dn = gs[off + p] * gamma[ch];
                    dxs[off + p] = istd[p] * (dn - m1[p] * inv_c - xh[off + p] * m2[p] * inv_c);
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for LayerNorm2d<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
