//! Global response normalization.
//!
//! For every batch item the per-channel L2 norm `g_c` over the spatial grid
//! is divided by the mean norm across channels, giving `n_c`; the input is
//! then recalibrated as `gamma_c * (x * n_c) + beta_c + x`.

use ndarray::Array4;

use super::{join, Module, Param};
use crate::{Error, Result, Scalar};

/// Added to the mean channel norm so an all-zero input is well defined.
pub const GRN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Grn<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

#[derive(Debug, Clone)]
pub struct GrnCache<T> {
    /// `g_c` per (item, channel).
    norms: Vec<T>,
    /// `mean_c g_c + eps` per item.
    denom: Vec<T>,
}

impl<T: Scalar> Grn<T> {
    /// Zero-initialized, so the unit starts as the identity map.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::zeros(&[channels]),
            beta: Param::zeros(&[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, GrnCache<T>) {
        let (b, c, h, w) = x.dim();
        let hw = h * w;
        let xs = x.as_slice().expect("standard layout");
        let gamma = self.gamma.values();
        let beta = self.beta.values();
        let mut norms = vec![T::zero(); b * c];
        let mut denom = vec![T::zero(); b];
        let mut y = Array4::zeros((b, c, h, w));
        let ys = y.as_slice_mut().unwrap();
        for bi in 0..b {
            for ch in 0..c {
                let plane = &xs[(bi * c + ch) * hw..][..hw];
                norms[bi * c + ch] = plane.iter().map(|&v| v * v).sum::<T>().sqrt();
            }
            let mean = norms[bi * c..(bi + 1) * c].iter().copied().sum::<T>() / T::lit(c as f64);
            denom[bi] = mean + T::lit(GRN_EPS);
            for ch in 0..c {
                let n = norms[bi * c + ch] / denom[bi];
                let scale = gamma[ch] * n + T::one();
                let off = (bi * c + ch) * hw;
                for p in 0..hw {
                    ys[off + p] = xs[off + p] * scale + beta[ch];
                }
            }
        }
        (y, GrnCache { norms, denom })
    }

    pub fn backward(&mut self, x: &Array4<T>, cache: &GrnCache<T>, dy: &Array4<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        let hw = h * w;
        let cf = T::lit(c as f64);
        let xs = x.as_slice().expect("standard layout");
        let gs = dy.as_slice().expect("standard layout");
        let gamma = self.gamma.values().to_vec();
        let mut dx = Array4::zeros((b, c, h, w));
        let dxs = dx.as_slice_mut().unwrap();
        let mut s = vec![T::zero(); c];
        for bi in 0..b {
            let d = cache.denom[bi];
            let norms = &cache.norms[bi * c..(bi + 1) * c];
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                let mut gx = T::zero();
                let mut gsum = T::zero();
                for p in 0..hw {
                    gx += gs[off + p] * xs[off + p];
                    gsum += gs[off + p];
                }
                let n = norms[ch] / d;
                self.gamma.grads_mut()[ch] += gx * n;
                self.beta.grads_mut()[ch] += gsum;
                s[ch] = gamma[ch] * gx;
            }
            let sg: T = s.iter().zip(norms).map(|(&a, &g)| a * g).sum();
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                let n = norms[ch] / d;
                let direct = T::one() + gamma[ch] * n;
                let dg = s[ch] / d - sg / (d * d * cf);
                let via_norm = if norms[ch] > T::zero() { dg / norms[ch] } else { T::zero() };
                for p in 0..hw {
                    dxs[off + p] = gs[off + p] * direct + via_norm * xs[off + p];
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Grn<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Stand-alone GRN forward with explicit parameter vectors.
pub fn grn<T: Scalar>(x: &Array4<T>, gamma: &[T], beta: &[T]) -> Result<Array4<T>> {
    let c = x.dim().1;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Config(format!(
            "GRN expects {c} channels, got gamma {} / beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    let unit = Grn {
        gamma: Param::from_vec(&[c], gamma.to_vec()),
        beta: Param::from_vec(&[c], beta.to_vec()),
    };
    Ok(unit.forward(x).0)
}
