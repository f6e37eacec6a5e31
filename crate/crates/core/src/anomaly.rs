//! Per-level cosine-distance maps, their bilinear aggregation to input
//! resolution, and the image-level score.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::model::FeaturePyramid;
use crate::{Error, Result, Scalar};

/// Norm floor for cosine similarities.
pub const COSINE_EPS: f64 = 1e-8;

/// Default Gaussian smoothing width for image scores, in pixels.
pub const DEFAULT_SMOOTHING_SIGMA: f64 = 4.0;

/// Upper bound of the aggregated map (three levels, each at most 2).
pub const MAX_SCORE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap<T> {
    /// `M^k`, each `batch × H_k × W_k`.
    pub per_level: [Array3<T>; 3],
    /// `S`, `batch × H0 × W0`.
    pub aggregated: Array3<T>,
    pub smoothed: Option<Array3<T>>,
}

impl<T: Scalar> AnomalyMap<T> {
    pub fn from_pyramids(enc: &FeaturePyramid<T>, dec: &FeaturePyramid<T>, target: (usize, usize)) -> Result<Self> {
        enc.check_pair(dec)?;
        let per_level = [
            level_map(&enc.levels[0], &dec.levels[0])?,
            level_map(&enc.levels[1], &dec.levels[1])?,
            level_map(&enc.levels[2], &dec.levels[2])?,
        ];
        let aggregated = aggregate(&per_level, target);
        Ok(Self {
            per_level,
            aggregated,
            smoothed: None,
        })
    }

    pub fn with_smoothing(mut self, sigma: f64) -> Self {
        self.smoothed = Some(gaussian_smooth(&self.aggregated, sigma));
        self
    }

    /// Smoothed map when present, raw aggregate otherwise.
    pub fn final_map(&self) -> &Array3<T> {
        self.smoothed.as_ref().unwrap_or(&self.aggregated)
    }
}

/// `max(v, lo)` that keeps NaN, so non-finite features surface in the loss.
pub(crate) fn at_least<T: Scalar>(v: T, lo: T) -> T {
    if v < lo {
        lo
    } else {
        v
    }
}

/// Clamp a cosine to `[-1, 1]`, keeping NaN.
pub(crate) fn clamp_cos<T: Scalar>(cos: T) -> T {
    if cos > T::one() {
        T::one()
    } else if cos < -T::one() {
        -T::one()
    } else {
        cos
    }
}

/// `1 - cos` between channel vectors at every pixel, in `[0, 2]`.
pub fn level_map<T: Scalar>(enc: &Array4<T>, dec: &Array4<T>) -> Result<Array3<T>> {
    if enc.dim() != dec.dim() {
        return Err(Error::Shape(format!("level map {:?} vs {:?}", enc.dim(), dec.dim())));
    }
    let (b, c, h, w) = enc.dim();
    let hw = h * w;
    let es = enc.as_standard_layout();
    let ds = dec.as_standard_layout();
    let (es, ds) = (es.as_slice().unwrap(), ds.as_slice().unwrap());
    let eps = T::lit(COSINE_EPS);
    let mut out = Array3::zeros((b, h, w));
    let os = out.as_slice_mut().unwrap();
    let mut dot = vec![T::zero(); hw];
    let mut ne = vec![T::zero(); hw];
    let mut nd = vec![T::zero(); hw];
    for bi in 0..b {
        dot.fill(T::zero());
        ne.fill(T::zero());
        nd.fill(T::zero());
        for ch in 0..c {
            let off = (bi * c + ch) * hw;
            for p in 0..hw {
                let (e, d) = (es[off + p], ds[off + p]);
                dot[p] += e * d;
                ne[p] += e * e;
                nd[p] += d * d;
            }
        }
        for p in 0..hw {
            let cos = dot[p] / (at_least(ne[p].sqrt(), eps) * at_least(nd[p].sqrt(), eps));
            os[bi * hw + p] = T::one() - clamp_cos(cos);
        }
    }
    Ok(out)
}

/// Gradient of `Σ dm ⊙ level_map(enc, dec)` w.r.t. `dec`.
pub fn level_map_backward<T: Scalar>(enc: &Array4<T>, dec: &Array4<T>, dm: &Array3<T>) -> Array4<T> {
    let (b, c, h, w) = enc.dim();
    let hw = h * w;
    let es = enc.as_standard_layout();
    let ds = dec.as_standard_layout();
    let (es, ds) = (es.as_slice().unwrap(), ds.as_slice().unwrap());
    let gs = dm.as_slice().expect("standard layout");
    let eps = T::lit(COSINE_EPS);
    let mut grad = Array4::zeros((b, c, h, w));
    let out = grad.as_slice_mut().unwrap();
    let mut dot = vec![T::zero(); hw];
    let mut ne = vec![T::zero(); hw];
    let mut nd = vec![T::zero(); hw];
    for bi in 0..b {
        dot.fill(T::zero());
        ne.fill(T::zero());
        nd.fill(T::zero());
        for ch in 0..c {
            let off = (bi * c + ch) * hw;
            for p in 0..hw {
                let (e, d) = (es[off + p], ds[off + p]);
                dot[p] += e * d;
                ne[p] += e * e;
                nd[p] += d * d;
            }
        }
        // dM/dd = -(e / (|e||d|) - cos * d / |d|^2); the |d|^2 term vanishes
        // when |d| sits on the epsilon floor.
        let coef: Vec<(T, T)> = (0..hw)
            .map(|p| {
                let a = at_least(ne[p].sqrt(), eps);
                let n = nd[p].sqrt();
                let bn = at_least(n, eps);
                let cos = dot[p] / (a * bn);
                let g = gs[bi * hw + p];
                let self_term = if n > eps { cos / (bn * bn) } else { T::zero() };
                (-g / (a * bn), g * self_term)
            })
            .collect();
        for ch in 0..c {
            let off = (bi * c + ch) * hw;
            for p in 0..hw {
                let (ce, cd) = coef[p];
                out[off + p] = ce * es[off + p] + cd * ds[off + p];
            }
        }
    }
    grad
}

/// Interpolation taps for one axis: for each output index, `(i0, i1, w0, w1)`.
/// Half-pixel centers, corners not aligned.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let l1 = src - i0 as f64;
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

pub fn upsample_bilinear<T: Scalar>(map: ArrayView2<'_, T>, target: (usize, usize)) -> Array2<T> {
    let (h, w) = map.dim();
    let ty = bilinear_taps(h, target.0);
    let tx = bilinear_taps(w, target.1);
    // rows first, then columns
    let mut rows = Array2::zeros((target.0, w));
    for (o, &(i0, i1, w0, w1)) in ty.iter().enumerate() {
        let (w0, w1) = (T::lit(w0), T::lit(w1));
        for x in 0..w {
            rows[[o, x]] = w0 * map[[i0, x]] + w1 * map[[i1, x]];
        }
    }
    let mut out = Array2::zeros(target);
    for y in 0..target.0 {
        for (o, &(j0, j1, w0, w1)) in tx.iter().enumerate() {
            out[[y, o]] = T::lit(w0) * rows[[y, j0]] + T::lit(w1) * rows[[y, j1]];
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear`].
pub fn upsample_bilinear_backward<T: Scalar>(grad: ArrayView2<'_, T>, input: (usize, usize)) -> Array2<T> {
    let (th, tw) = grad.dim();
    let ty = bilinear_taps(input.0, th);
    let tx = bilinear_taps(input.1, tw);
    let mut rows = Array2::zeros((th, input.1));
    for y in 0..th {
        for (o, &(j0, j1, w0, w1)) in tx.iter().enumerate() {
            let g = grad[[y, o]];
            rows[[y, j0]] += T::lit(w0) * g;
            rows[[y, j1]] += T::lit(w1) * g;
        }
    }
    let mut out = Array2::zeros(input);
    for (o, &(i0, i1, w0, w1)) in ty.iter().enumerate() {
        for x in 0..input.1 {
            let g = rows[[o, x]];
            out[[i0, x]] += T::lit(w0) * g;
            out[[i1, x]] += T::lit(w1) * g;
        }
    }
    out
}

/// `S = Σ_k upsample(M^k)`.
pub fn aggregate<T: Scalar>(per_level: &[Array3<T>; 3], target: (usize, usize)) -> Array3<T> {
    let b = per_level[0].dim().0;
    let mut s = Array3::zeros((b, target.0, target.1));
    for m in per_level {
        for (bi, mut dst) in s.axis_iter_mut(Axis(0)).enumerate() {
            dst += &upsample_bilinear(m.index_axis(Axis(0), bi), target);
        }
    }
    s
}

/// Gradients on the decoder levels given `dL/dS`.
pub fn anomaly_map_backward<T: Scalar>(
    enc: &FeaturePyramid<T>,
    dec: &FeaturePyramid<T>,
    ds: &Array3<T>,
) -> [Array4<T>; 3] {
    std::array::from_fn(|k| {
        let (b, _, h, w) = enc.levels[k].dim();
        let mut dm = Array3::zeros((b, h, w));
        for bi in 0..b {
            dm.index_axis_mut(Axis(0), bi)
                .assign(&upsample_bilinear_backward(ds.index_axis(Axis(0), bi), (h, w)));
        }
        level_map_backward(&enc.levels[k], &dec.levels[k], &dm)
    })
}

/// Index into `0..n` under half-sample symmetric reflection (`d c b a | a b c d`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Normalized discrete Gaussian with radius `round(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5) as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian smoothing with reflective borders; `sigma <= 0`
/// returns the input unchanged.
pub fn gaussian_smooth<T: Scalar>(maps: &Array3<T>, sigma: f64) -> Array3<T> {
    if sigma <= 0.0 {
        return maps.clone();
    }
    let kernel: Vec<T> = gaussian_kernel(sigma).into_iter().map(T::lit).collect();
    let r = (kernel.len() / 2) as isize;
    let (b, h, w) = maps.dim();
    let mut out = Array3::zeros((b, h, w));
    let mut tmp = Array2::zeros((h, w));
    for bi in 0..b {
        let m = maps.index_axis(Axis(0), bi);
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for (t, &kv) in kernel.iter().enumerate() {
                    acc += kv * m[[y, reflect(x as isize + t as isize - r, w)]];
                }
                tmp[[y, x]] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for (t, &kv) in kernel.iter().enumerate() {
                    acc += kv * tmp[[reflect(y as isize + t as isize - r, h), x]];
                }
                out[[bi, y, x]] = acc;
            }
        }
    }
    out
}

/// Per-image maximum of the smoothed map.
pub fn image_score<T: Scalar>(maps: &Array3<T>, sigma: f64) -> Vec<T> {
    let smoothed = gaussian_smooth(maps, sigma);
    max_per_image(&smoothed)
}

pub fn max_per_image<T: Scalar>(maps: &Array3<T>) -> Vec<T> {
    maps.axis_iter(Axis(0))
        .map(|m| m.iter().copied().fold(T::neg_infinity(), T::max))
        .collect()
}

/// Sidecar written next to every exported map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub encoding: String,
    pub width: u32,
    pub height: u32,
    /// Score represented by one grey level: `score = level * scale`.
    pub scale: f64,
    pub max_score: f64,
}

/// Linear mapping of a score in `[0, 6]` to a 16-bit grey level.
pub fn score_to_level(v: f64) -> u16 {
    ((v / MAX_SCORE).clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Write a 16-bit grayscale PNG (row-major, big-endian samples as mandated
/// by PNG) plus `<stem>.json` holding the scale factor.
pub fn export_map_png<T: Scalar>(map: ArrayView2<'_, T>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let levels: Vec<u16> = map.iter().map(|v| score_to_level(v.as_f64())).collect();
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(w as u32, h as u32, levels)
        .expect("buffer matches dimensions");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let sidecar = MapSidecar {
        encoding: "png-gray16".into(),
        width: w as u32,
        height: h as u32,
        scale: MAX_SCORE / 65535.0,
        max_score: MAX_SCORE,
    };
    let side = path.with_extension("json");
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Inverse of [`export_map_png`] up to quantization.
pub fn import_map_png(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma16();
    let (w, h) = img.dimensions();
    let side = path.with_extension("json");
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: MapSidecar =
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", side.display())))?;
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f64 * sidecar.scale
    }))
}
