//! Feature-diversity and receptive-field instruments.

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::model::{Encoder, FeaturePyramid, Layer, Model, Sequential};
use crate::nn::Module;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    pub entropy_bins: usize,
    pub entropy_epsilon: f64,
    pub erf_input_size: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            entropy_bins: 256,
            entropy_epsilon: 1e-12,
            erf_input_size: 64,
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entropy_bins < 2 {
            return Err(Error::Config("entropy needs at least two bins".into()));
        }
        if self.entropy_epsilon <= 0.0 {
            return Err(Error::Config("entropy epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Elements of a level divided by the level's global L2 norm (floored at
/// `1e-12`).
fn normalized<T: Scalar>(level: &Array4<T>) -> Vec<f64> {
    let norm = level.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt().max(1e-12);
    level.iter().map(|v| v.as_f64() / norm).collect()
}

/// Mean over the three levels of the population variance of `f / ||f||`.
pub fn feature_variance<T: Scalar>(pyramid: &FeaturePyramid<T>) -> f64 {
    pyramid
        .levels
        .iter()
        .map(|l| {
            let v = normalized(l);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
        })
        .sum::<f64>()
        / 3.0
}

/// Shannon entropy (bits) of a value histogram with `bins` equal-width bins
/// spanning `[min, max]`.
pub fn histogram_entropy(values: &[f64], bins: usize, eps: f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; bins];
    if hi > lo {
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
    } else {
        counts[0] = values.len();
    }
    let n = values.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * (p + eps).log2()
        })
        .sum::<f64>()
}

/// Mean over the three levels of the binned entropy of `f / ||f||`.
pub fn feature_entropy<T: Scalar>(pyramid: &FeaturePyramid<T>, cfg: &DiagnosticsConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(pyramid
        .levels
        .iter()
        .map(|l| histogram_entropy(&normalized(l), cfg.entropy_bins, cfg.entropy_epsilon))
        .sum::<f64>()
        / 3.0)
}

/// Input-gradient magnitude of the channel sum at the center of the deepest
/// encoder level, summed over input channels and scaled to a maximum of 1.
/// `image` is `1 × 3 × H × W`.
pub fn erf_map<T: Scalar>(model: &Model<T>, image: &Array4<T>) -> Result<Array2<f64>> {
    if image.dim().0 != 1 {
        return Err(Error::Input("ERF probes a single image".into()));
    }
    let mut encoder = model.encoder.clone();
    let (pyramid, cache) = encoder.forward(image)?;
    let deep = &pyramid.levels[2];
    let (_, _, h3, w3) = deep.dim();
    let mut seed = Array4::zeros(deep.raw_dim());
    seed.slice_mut(ndarray::s![0, .., h3 / 2, w3 / 2]).fill(T::one());
    let dx = encoder.backward(&cache, [None, None, Some(&seed)]);
    let mut heat = dx.index_axis(Axis(0), 0).map(|v| v.as_f64().abs()).sum_axis(Axis(0));
    let peak = heat.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        heat.mapv_inplace(|v| v / peak);
    }
    Ok(heat)
}

fn sequence_extent<T: Scalar>(seq: &Sequential<T>, out: &mut Vec<(usize, usize, isize)>) {
    for layer in &seq.layers {
        match layer {
            Layer::Conv(c) => out.push((c.kernel, c.stride, c.padding as isize)),
            Layer::Block(b) => {
                let k = b.spec.kernel_size;
                out.push((k, 1, ((k - 1) / 2) as isize));
            }
            _ => {}
        }
    }
}

/// Inclusive input-pixel interval `[(y0, y1), (x0, x1)]` that can influence
/// the center unit of the deepest encoder level (before clipping to the
/// image). Exact when every GRN `gamma` is zero; a nonzero `gamma` couples
/// all pixels through the channel norms.
pub fn theoretical_receptive_field<T: Scalar>(encoder: &Encoder<T>, input: (usize, usize)) -> [(isize, isize); 2] {
    let mut layers = Vec::new();
    sequence_extent(&encoder.stem, &mut layers);
    for s in &encoder.stages {
        sequence_extent(s, &mut layers);
    }
    let center = [(input.0 >> 4) / 2, (input.1 >> 4) / 2];
    center.map(|c| {
        let (mut a, mut b) = (c as isize, c as isize);
        for &(k, s, p) in layers.iter().rev() {
            a = a * s as isize - p;
            b = b * s as isize - p + k as isize - 1;
        }
        (a, b)
    })
}

/// Whether any GRN unit in the encoder has a nonzero scale.
pub fn encoder_grn_active<T: Scalar>(encoder: &Encoder<T>) -> bool {
    let mut active = false;
    encoder.visit_params("", &mut |name, p| {
        if name.ends_with("grn.gamma") && p.value.iter().any(|v| *v != T::zero()) {
            active = true;
        }
    });
    active
}
