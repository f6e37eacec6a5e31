//! LarK / SmaK inverted-bottleneck blocks.
//!
//! `x → depthwise conv → LayerNorm → 1×1 expand → GELU → GRN → 1×1 project → + x`
//!
//! The LarK depthwise kernel is kept in its multi-branch (dilated) training
//! form and merged into one dense kernel for every forward pass; gradients
//! w.r.t. the dense kernel are gathered back onto the branches, which is
//! exact because the merge is linear.

use ndarray::{Array3, Array4, ArrayView3};
use rand::Rng;

use super::config::{BlockKind, BlockSpec, DilatedBranch};
use crate::nn::{
    depthwise_backward, depthwise_forward, gelu, gelu_backward, join, Grn, GrnCache, LayerNorm2d, LayerNormCache,
    Module, Param, Pointwise,
};
use crate::{Error, Result, Scalar};

/// Sum a set of (possibly dilated) depthwise kernels into one dense
/// `channels × kernel_size × kernel_size` kernel, centering every branch.
pub fn merge_dilated_branches<T: Scalar>(
    kernel_size: usize,
    parts: &[(DilatedBranch, ArrayView3<'_, T>)],
) -> Result<Array3<T>> {
    let channels = parts.first().map(|(_, w)| w.dim().0).unwrap_or(0);
    let mut dense = Array3::zeros((channels, kernel_size, kernel_size));
    for (geom, w) in parts {
        let (c, kh, kw) = w.dim();
        if c != channels || kh != geom.kernel || kw != geom.kernel {
            return Err(Error::Shape(format!(
                "branch weight {:?} does not match {}x{} over {channels} channels",
                w.dim(),
                geom.kernel,
                geom.kernel
            )));
        }
        if geom.span() > kernel_size || (kernel_size - geom.span()) % 2 != 0 {
            return Err(Error::Config(format!(
                "branch {}x{} dilation {} does not fit a {kernel_size}x{kernel_size} kernel",
                geom.kernel, geom.kernel, geom.dilation
            )));
        }
        let off = (kernel_size - geom.span()) / 2;
        for ch in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    dense[[ch, off + i * geom.dilation, off + j * geom.dilation]] += w[[ch, i, j]];
                }
            }
        }
    }
    Ok(dense)
}

#[derive(Debug, Clone)]
pub struct Block<T> {
    pub spec: BlockSpec,
    /// Dense `kernel_size` kernel, `channels × k × k`.
    pub dw_main: Param<T>,
    /// One `channels × k_b × k_b` kernel per dilated branch.
    pub dw_branches: Vec<Param<T>>,
    pub dw_bias: Param<T>,
    pub norm: LayerNorm2d<T>,
    pub expand: Pointwise<T>,
    pub grn: Grn<T>,
    pub project: Pointwise<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    input: Array4<T>,
    kernel: Array3<T>,
    norm: LayerNormCache<T>,
    normed: Array4<T>,
    hidden: Array4<T>,
    activated: Array4<T>,
    grn: GrnCache<T>,
    recalibrated: Array4<T>,
}

impl<T: Scalar> Block<T> {
    pub fn new<R: Rng + ?Sized>(spec: BlockSpec, expansion: usize, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let c = spec.channels;
        let k = spec.kernel_size;
        let bound = 1.0 / ((k * k) as f64).sqrt();
        let dw_main = crate::nn::conv_param(&[c, k, k], bound, rng);
        let dw_branches = spec
            .dilated_branches
            .iter()
            .map(|b| crate::nn::conv_param(&[c, b.kernel, b.kernel], 1.0 / ((b.kernel * b.kernel) as f64).sqrt(), rng))
            .collect();
        let hidden = c * expansion;
        Ok(Self {
            dw_main,
            dw_branches,
            dw_bias: Param::zeros(&[c]),
            norm: LayerNorm2d::new(c),
            expand: Pointwise::new(c, hidden, rng),
            grn: Grn::new(hidden),
            project: Pointwise::new(hidden, c, rng),
            spec,
        })
    }

    pub fn kind(&self) -> BlockKind {
        self.spec.kind
    }

    fn parts(&self) -> Vec<(DilatedBranch, ArrayView3<'_, T>)> {
        let k = self.spec.kernel_size;
        let c = self.spec.channels;
        let main = DilatedBranch { kernel: k, dilation: 1 };
        let mut parts = vec![(main, self.dw_main.value.view().into_shape_with_order((c, k, k)).unwrap())];
        for (geom, p) in self.spec.dilated_branches.iter().zip(&self.dw_branches) {
            parts.push((*geom, p.value.view().into_shape_with_order((c, geom.kernel, geom.kernel)).unwrap()));
        }
        parts
    }

    /// The single dense depthwise kernel equivalent to all branches.
    pub fn merged_kernel(&self) -> Array3<T> {
        merge_dilated_branches(self.spec.kernel_size, &self.parts()).expect("validated block spec")
    }

    /// Depthwise stage evaluated branch by branch (training form).
    pub fn depthwise_branches(&self, x: &Array4<T>) -> Array4<T> {
        let c = self.spec.channels;
        let zero = vec![T::zero(); c];
        let mut out = Array4::zeros(x.raw_dim());
        for (geom, w) in self.parts() {
            let kern: Vec<T> = w.iter().copied().collect();
            out += &depthwise_forward(x, &kern, &zero, geom.kernel, geom.dilation);
        }
        let bias = self.dw_bias.values();
        for ((_, ch, _, _), v) in out.indexed_iter_mut() {
            *v += bias[ch];
        }
        out
    }

    /// Depthwise stage evaluated with the merged dense kernel.
    pub fn depthwise_merged(&self, x: &Array4<T>) -> Array4<T> {
        let kernel = self.merged_kernel();
        depthwise_forward(x, kernel.as_slice().unwrap(), self.dw_bias.values(), self.spec.kernel_size, 1)
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, BlockCache<T>) {
        assert_eq!(x.dim().1, self.spec.channels, "block input channels");
        let kernel = self.merged_kernel();
        let spatial = depthwise_forward(x, kernel.as_slice().unwrap(), self.dw_bias.values(), self.spec.kernel_size, 1);
        let (normed, norm) = self.norm.forward(&spatial);
        let hidden = self.expand.forward(&normed);
        let activated = gelu(&hidden);
        let (recalibrated, grn) = self.grn.forward(&activated);
        let mut y = self.project.forward(&recalibrated);
        y += x;
        (
            y,
            BlockCache {
                input: x.clone(),
                kernel,
                norm,
                normed,
                hidden,
                activated,
                grn,
                recalibrated,
            },
        )
    }

    pub fn backward(&mut self, cache: &BlockCache<T>, dy: &Array4<T>) -> Array4<T> {
        let d_recal = self.project.backward(&cache.recalibrated, dy);
        let d_act = self.grn.backward(&cache.activated, &cache.grn, &d_recal);
        let d_hidden = gelu_backward(&cache.hidden, &d_act);
        let d_normed = self.expand.backward(&cache.normed, &d_hidden);
        let d_spatial = self.norm.backward(&cache.norm, &d_normed);
        let k = self.spec.kernel_size;
        let c = self.spec.channels;
        let mut d_kernel = vec![T::zero(); c * k * k];
        let mut dx = depthwise_backward(
            &cache.input,
            cache.kernel.as_slice().unwrap(),
            k,
            1,
            &d_spatial,
            &mut d_kernel,
            self.dw_bias.grads_mut(),
        );
        for (g, d) in self.dw_main.grads_mut().iter_mut().zip(&d_kernel) {
            *g += *d;
        }
        for (geom, p) in self.spec.dilated_branches.iter().zip(self.dw_branches.iter_mut()) {
            let off = (k - geom.span()) / 2;
            let kb = geom.kernel;
            let grads = p.grads_mut();
            for ch in 0..c {
                for i in 0..kb {
                    for j in 0..kb {
                        grads[(ch * kb + i) * kb + j] +=
                            d_kernel[(ch * k + off + i * geom.dilation) * k + off + j * geom.dilation];
                    }
                }
            }
        }
        dx += dy;
        dx
    }
}

impl<T: Scalar> Module<T> for Block<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "dw.main"), &self.dw_main);
        for (i, p) in self.dw_branches.iter().enumerate() {
            f(&join(prefix, &format!("dw.branch{i}")), p);
        }
        f(&join(prefix, "dw.bias"), &self.dw_bias);
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.expand.visit_params(&join(prefix, "expand"), f);
        self.grn.visit_params(&join(prefix, "grn"), f);
        self.project.visit_params(&join(prefix, "project"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "dw.main"), &mut self.dw_main);
        for (i, p) in self.dw_branches.iter_mut().enumerate() {
            f(&join(prefix, &format!("dw.branch{i}")), p);
        }
        f(&join(prefix, "dw.bias"), &mut self.dw_bias);
        self.norm.visit_params_mut(&join(prefix, "norm"), f);
        self.expand.visit_params_mut(&join(prefix, "expand"), f);
        self.grn.visit_params_mut(&join(prefix, "grn"), f);
        self.project.visit_params_mut(&join(prefix, "project"), f);
    }
}
