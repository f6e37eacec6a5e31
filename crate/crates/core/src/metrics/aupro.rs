//! Area under the per-region-overlap curve.
//!
//! For a threshold `t` (predict anomalous when `score >= t`), PRO is the mean
//! over ground-truth regions of the covered fraction of that region and FPR
//! is the fraction of normal pixels predicted anomalous. The PRO-vs-FPR
//! curve, starting at `(0, 0)`, is integrated with the trapezoid rule up to
//! `fpr_cap` (interpolating linearly at the cap) and divided by `fpr_cap`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::regions::{label_regions, Connectivity};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuproConfig {
    pub fpr_cap: f64,
    pub connectivity: Connectivity,
    /// Above this many distinct scores the sweep is restricted to
    /// `approx_thresholds` quantile-spaced thresholds.
    pub max_exact_thresholds: usize,
    pub approx_thresholds: usize,
}

impl Default for AuproConfig {
    fn default() -> Self {
        Self {
            fpr_cap: 0.3,
            connectivity: Connectivity::Eight,
            max_exact_thresholds: 2_000_000,
            approx_thresholds: 500,
        }
    }
}

/// `(fpr, pro)` points in non-decreasing FPR order, starting at `(0, 0)`.
pub fn pro_curve<T: Scalar>(
    scores: &[Array2<T>],
    masks: &[Array2<bool>],
    cfg: &AuproConfig,
) -> Result<Vec<(f64, f64)>> {
    if scores.len() != masks.len() {
        return Err(Error::Shape(format!("{} score maps vs {} masks", scores.len(), masks.len())));
    }
    // region id per pixel; u32::MAX marks a normal pixel
    const NORMAL: u32 = u32::MAX;
    let mut pixels: Vec<(f64, u32)> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for (s, m) in scores.iter().zip(masks) {
        if s.dim() != m.dim() {
            return Err(Error::Shape(format!("score map {:?} vs mask {:?}", s.dim(), m.dim())));
        }
        let (labels, n) = label_regions(m.view(), cfg.connectivity);
        let base = sizes.len() as u32;
        sizes.resize(sizes.len() + n, 0);
        for (&v, &l) in s.iter().zip(labels.iter()) {
            if l == 0 {
                pixels.push((v.as_f64(), NORMAL));
            } else {
                let id = base + l - 1;
                sizes[id as usize] += 1;
                pixels.push((v.as_f64(), id));
            }
        }
    }
    if sizes.is_empty() {
        return Err(Error::UndefinedMetric("AUPRO needs at least one anomalous region".into()));
    }
    let normals = pixels.iter().filter(|p| p.1 == NORMAL).count();
    if normals == 0 {
        return Err(Error::UndefinedMetric("AUPRO needs at least one normal pixel".into()));
    }
    if pixels.iter().any(|p| !p.0.is_finite()) {
        return Err(Error::Input("non-finite pixel score".into()));
    }
    pixels.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut distinct = 1usize;
    for w in pixels.windows(2) {
        if w[1].0 != w[0].0 {
            distinct += 1;
        }
    }
    // thresholds at which to record a point (descending); None = every distinct score
    let stops: Option<Vec<f64>> = (distinct > cfg.max_exact_thresholds).then(|| {
        let n = pixels.len();
        let k = cfg.approx_thresholds.max(2);
        let mut t: Vec<f64> = (0..k)
            .map(|i| {
                let q = i as f64 / (k - 1) as f64;
                pixels[((q * (n - 1) as f64).round()) as usize].0
            })
            .collect();
        t.dedup();
        t
    });

    let regions = sizes.len() as f64;
    let inv_sizes: Vec<f64> = sizes.iter().map(|&s| 1.0 / s as f64).collect();
    let mut pro_sum = 0.0;
    let mut fp = 0usize;
    let mut curve = vec![(0.0, 0.0)];
    let mut stop_idx = 0usize;
    let mut i = 0;
    while i < pixels.len() {
        let t = pixels[i].0;
        while i < pixels.len() && pixels[i].0 == t {
            match pixels[i].1 {
                NORMAL => fp += 1,
                id => pro_sum += inv_sizes[id as usize],
            }
            i += 1;
        }
        let record = match &stops {
            None => true,
            Some(stops) => {
                let next = pixels.get(i).map(|p| p.0);
                let mut hit = false;
                while stop_idx < stops.len() && next.is_none_or(|n| n < stops[stop_idx]) && t >= stops[stop_idx] {
                    hit = true;
                    stop_idx += 1;
                }
                hit || i == pixels.len()
            }
        };
        if record {
            curve.push((fp as f64 / normals as f64, pro_sum / regions));
        }
    }
    Ok(curve)
}

/// Trapezoid integral of a monotone-in-x curve over `[0, cap]`, divided by `cap`.
pub fn normalized_area(curve: &[(f64, f64)], cap: f64) -> f64 {
    let mut area = 0.0;
    for w in curve.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if x0 >= cap {
            break;
        }
        if x1 <= cap {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_cap = y0 + (y1 - y0) * (cap - x0) / (x1 - x0);
            area += (cap - x0) * (y0 + y_cap) / 2.0;
            break;
        }
    }
    area / cap
}

pub fn aupro<T: Scalar>(scores: &[Array2<T>], masks: &[Array2<bool>], cfg: &AuproConfig) -> Result<f64> {
    if !(cfg.fpr_cap > 0.0 && cfg.fpr_cap <= 1.0) {
        return Err(Error::Config(format!("fpr cap {} outside (0, 1]", cfg.fpr_cap)));
    }
    let curve = pro_curve(scores, masks, cfg)?;
    Ok(normalized_area(&curve, cfg.fpr_cap))
}
