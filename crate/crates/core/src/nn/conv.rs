use ndarray::Array4;
use rand::Rng;

use super::{gemm, Module, Param};
use crate::Scalar;

pub fn conv_output_size(n: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> usize {
    (n + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1
}

pub(crate) fn conv_param<T: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Param<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Param::from_vec(shape, data)
}

/// Output positions `o` in `0..n` for which `o + off` is also in `0..n_in`.
#[inline]
fn valid_range(off: isize, n_out: usize, n_in: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n_in as isize - off).min(n_out as isize).max(0) as usize;
    (lo.min(hi), hi)
}

/// Dense 2-D convolution with square kernel, stride and zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        Self {
            weight: conv_param(&[out_channels, in_channels, kernel, kernel], bound, rng),
            bias: conv_param(&[out_channels], bound, rng),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_output_size(h, self.kernel, self.stride, self.padding, 1),
            conv_output_size(w, self.kernel, self.stride, self.padding, 1),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, col: &mut [T]) {
        let k = self.kernel;
        let s = self.stride;
        let p = self.padding as isize;
        let hw = ho * wo;
        for ci in 0..self.in_channels {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, col: &[T], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let k = self.kernel;
        let s = self.stride;
        let p = self.padding as isize;
        let hw = ho * wo;
        for ci in 0..self.in_channels {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &g) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Array4<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self.out_hw(h, w);
        let kk = c * self.kernel * self.kernel;
        let hw = ho * wo;
        let mut out = Array4::zeros((b, self.out_channels, ho, wo));
        let mut col = vec![T::zero(); kk * hw];
        let xs = x.as_slice().expect("standard layout");
        let os = out.as_slice_mut().unwrap();
        let bias = self.bias.values();
        for bi in 0..b {
            self.im2col(&xs[bi * c * h * w..(bi + 1) * c * h * w], h, w, ho, wo, &mut col);
            let dst = &mut os[bi * self.out_channels * hw..(bi + 1) * self.out_channels * hw];
            for (co, plane) in dst.chunks_mut(hw).enumerate() {
                plane.fill(bias[co]);
            }
            gemm(self.out_channels, kk, hw, T::one(), self.weight.values(), false, &col, false, T::one(), dst);
        }
        out
    }

    pub fn backward(&mut self, x: &Array4<T>, dy: &Array4<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        let kk = c * self.kernel * self.kernel;
        let hw = ho * wo;
        let co = self.out_channels;
        let mut dx = Array4::zeros((b, c, h, w));
        let mut col = vec![T::zero(); kk * hw];
        let mut dcol = vec![T::zero(); kk * hw];
        let xs = x.as_slice().expect("standard layout");
        let dys = dy.as_slice().expect("standard layout");
        let dxs = dx.as_slice_mut().unwrap();
        for bi in 0..b {
            let g = &dys[bi * co * hw..(bi + 1) * co * hw];
            self.im2col(&xs[bi * c * h * w..(bi + 1) * c * h * w], h, w, ho, wo, &mut col);
            gemm(co, hw, kk, T::one(), g, false, &col, true, T::one(), self.weight.grads_mut());
            let db = self.bias.grads_mut();
            for (o, plane) in g.chunks(hw).enumerate() {
                db[o] += plane.iter().copied().sum::<T>();
            }
            gemm(kk, co, hw, T::one(), self.weight.values(), true, g, false, T::zero(), &mut dcol);
            self.col2im(&dcol, h, w, ho, wo, &mut dxs[bi * c * h * w..(bi + 1) * c * h * w]);
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&super::join(prefix, "weight"), &self.weight);
        f(&super::join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&super::join(prefix, "weight"), &mut self.weight);
        f(&super::join(prefix, "bias"), &mut self.bias);
    }
}

/// 1×1 convolution (per-pixel linear map over channels).
#[derive(Debug, Clone)]
pub struct Pointwise<T> {
    /// `out × in`
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl<T: Scalar> Pointwise<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_channels as f64).sqrt();
        Self {
            weight: conv_param(&[out_channels, in_channels], bound, rng),
            bias: conv_param(&[out_channels], bound, rng),
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, x: &Array4<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "pointwise input channels");
        let hw = h * w;
        let co = self.out_channels;
        let mut out = Array4::zeros((b, co, h, w));
        let xs = x.as_slice().expect("standard layout");
        let os = out.as_slice_mut().unwrap();
        let bias = self.bias.values();
        for bi in 0..b {
            let dst = &mut os[bi * co * hw..(bi + 1) * co * hw];
            for (o, plane) in dst.chunks_mut(hw).enumerate() {
                plane.fill(bias[o]);
            }
            gemm(co, c, hw, T::one(), self.weight.values(), false, &xs[bi * c * hw..(bi + 1) * c * hw], false, T::one(), dst);
        }
        out
    }

    pub fn backward(&mut self, x: &Array4<T>, dy: &Array4<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        let hw = h * w;
        let co = self.out_channels;
        let mut dx = Array4::zeros((b, c, h, w));
        let xs = x.as_slice().expect("standard layout");
        let dys = dy.as_slice().expect("standard layout");
        let dxs = dx.as_slice_mut().unwrap();
        for bi in 0..b {
            let g = &dys[bi * co * hw..(bi + 1) * co * hw];
            let xi = &xs[bi * c * hw..(bi + 1) * c * hw];
            gemm(co, hw, c, T::one(), g, false, xi, true, T::one(), self.weight.grads_mut());
            let db = self.bias.grads_mut();
            for (o, plane) in g.chunks(hw).enumerate() {
                db[o] += plane.iter().copied().sum::<T>();
            }
            gemm(c, co, hw, T::one(), self.weight.values(), true, g, false, T::zero(), &mut dxs[bi * c * hw..(bi + 1) * c * hw]);
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Pointwise<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&super::join(prefix, "weight"), &self.weight);
        f(&super::join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&super::join(prefix, "weight"), &mut self.weight);
        f(&super::join(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed 2×2 convolution with stride 2 (exact ×2 upsampling).
///
/// Weight row `o * 4 + dy * 2 + dx` maps input channels to output channel
/// `o` at sub-pixel offset `(dy, dx)`.
#[derive(Debug, Clone)]
pub struct UpConv2x2<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl<T: Scalar> UpConv2x2<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_channels as f64).sqrt();
        Self {
            weight: conv_param(&[out_channels * 4, in_channels], bound, rng),
            bias: conv_param(&[out_channels], bound, rng),
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, x: &Array4<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "upconv input channels");
        let hw = h * w;
        let co = self.out_channels;
        let mut out = Array4::zeros((b, co, 2 * h, 2 * w));
        let mut z = vec![T::zero(); co * 4 * hw];
        let xs = x.as_slice().expect("standard layout");
        let bias = self.bias.values();
        for bi in 0..b {
            gemm(co * 4, c, hw, T::one(), self.weight.values(), false, &xs[bi * c * hw..(bi + 1) * c * hw], false, T::zero(), &mut z);
            for o in 0..co {
                for sub in 0..4 {
                    let (dy, dx) = (sub / 2, sub % 2);
                    let zr = &z[(o * 4 + sub) * hw..][..hw];
                    for i in 0..h {
                        for j in 0..w {
                            out[[bi, o, 2 * i + dy, 2 * j + dx]] = zr[i * w + j] + bias[o];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Array4<T>, dy: &Array4<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        let hw = h * w;
        let co = self.out_channels;
        let mut dx = Array4::zeros((b, c, h, w));
        let mut dz = vec![T::zero(); co * 4 * hw];
        let xs = x.as_slice().expect("standard layout");
        let dxs = dx.as_slice_mut().unwrap();
        for bi in 0..b {
            let db = self.bias.grads_mut();
            for o in 0..co {
                for sub in 0..4 {
                    let (sy, sx) = (sub / 2, sub % 2);
                    let zr = &mut dz[(o * 4 + sub) * hw..][..hw];
                    for i in 0..h {
                        for j in 0..w {
                            let g = dy[[bi, o, 2 * i + sy, 2 * j + sx]];
                            zr[i * w + j] = g;
                            db[o] += g;
                        }
                    }
                }
            }
            let xi = &xs[bi * c * hw..(bi + 1) * c * hw];
            gemm(co * 4, hw, c, T::one(), &dz, false, xi, true, T::one(), self.weight.grads_mut());
            gemm(c, co * 4, hw, T::one(), self.weight.values(), true, &dz, false, T::zero(), &mut dxs[bi * c * hw..(bi + 1) * c * hw]);
        }
        dx
    }
}

impl<T: Scalar> Module<T> for UpConv2x2<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&super::join(prefix, "weight"), &self.weight);
        f(&super::join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&super::join(prefix, "weight"), &mut self.weight);
        f(&super::join(prefix, "bias"), &mut self.bias);
    }
}

/// Stride-1 "same" depthwise convolution. `kernel` is `channels × k × k`,
/// padding is `dilation * (k - 1) / 2`.
pub fn depthwise_forward<T: Scalar>(x: &Array4<T>, kernel: &[T], bias: &[T], k: usize, dilation: usize) -> Array4<T> {
    let (b, c, h, w) = x.dim();
    assert_eq!(kernel.len(), c * k * k, "depthwise kernel size");
    assert_eq!(bias.len(), c, "depthwise bias size");
    let pad = (dilation * (k - 1) / 2) as isize;
    let mut out = Array4::zeros((b, c, h, w));
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().unwrap();
    let hw = h * w;
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let src = &xs[base..base + hw];
            let dst = &mut os[base..base + hw];
            dst.fill(bias[ch]);
            let kern = &kernel[ch * k * k..(ch + 1) * k * k];
            for ky in 0..k {
                let off_y = (ky * dilation) as isize - pad;
                let (y0, y1) = valid_range(off_y, h, h);
                for kx in 0..k {
                    let wgt = kern[ky * k + kx];
                    if wgt == T::zero() {
                        continue;
                    }
                    let off_x = (kx * dilation) as isize - pad;
                    let (x0, x1) = valid_range(off_x, w, w);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = (oy as isize + off_y) as usize;
                        let s = &src[iy * w + (x0 as isize + off_x) as usize..][..x1 - x0];
                        let d = &mut dst[oy * w + x0..oy * w + x1];
                        for (dv, &sv) in d.iter_mut().zip(s) {
                            *dv += wgt * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`depthwise_forward`]; accumulates into `dkernel` / `dbias`.
pub fn depthwise_backward<T: Scalar>(
    x: &Array4<T>,
    kernel: &[T],
    k: usize,
    dilation: usize,
    dy: &Array4<T>,
    dkernel: &mut [T],
    dbias: &mut [T],
) -> Array4<T> {
    let (b, c, h, w) = x.dim();
    let pad = (dilation * (k - 1) / 2) as isize;
    let mut dx = Array4::zeros((b, c, h, w));
    let xs = x.as_slice().expect("standard layout");
    let gs = dy.as_slice().expect("standard layout");
    let dxs = dx.as_slice_mut().unwrap();
    let hw = h * w;
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let src = &xs[base..base + hw];
            let g = &gs[base..base + hw];
            let dsrc = &mut dxs[base..base + hw];
            dbias[ch] += g.iter().copied().sum::<T>();
            let kern = &kernel[ch * k * k..(ch + 1) * k * k];
            let dkern = &mut dkernel[ch * k * k..(ch + 1) * k * k];
            for ky in 0..k {
                let off_y = (ky * dilation) as isize - pad;
                let (y0, y1) = valid_range(off_y, h, h);
                for kx in 0..k {
                    let off_x = (kx * dilation) as isize - pad;
                    let (x0, x1) = valid_range(off_x, w, w);
                    if x0 >= x1 {
                        continue;
                    }
                    let wgt = kern[ky * k + kx];
                    let mut acc = T::zero();
                    for oy in y0..y1 {
                        let iy = (oy as isize + off_y) as usize;
                        let start = iy * w + (x0 as isize + off_x) as usize;
                        let gr = &g[oy * w + x0..oy * w + x1];
                        for (gv, &sv) in gr.iter().zip(&src[start..start + x1 - x0]) {
                            acc += *gv * sv;
                        }
                        for (dv, &gv) in dsrc[start..start + x1 - x0].iter_mut().zip(gr) {
                            *dv += wgt * gv;
                        }
                    }
                    dkern[ky * k + kx] += acc;
                }
            }
        }
    }
    dx
}
