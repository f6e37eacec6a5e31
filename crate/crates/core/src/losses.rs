//! Training objectives: global cosine loss, local anomaly-map loss, fixed
//! hard-mining loss and the adaptive-contraction (ADC) loss.
//!
//! The quantile thresholds and masks of the mining losses are constants
//! under differentiation: excluded pixels receive exactly zero gradient and
//! every active pixel receives `2 S / |active|`.

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::anomaly::{at_least, clamp_cos, COSINE_EPS};
use crate::model::FeaturePyramid;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub p_hard: f64,
    pub p_lim: f64,
    /// Take `alpha` as a quantile of `S²` instead of `S`. Off by default.
    pub alpha_of_squared: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            p_hard: 0.9999,
            p_lim: 0.9995,
            alpha_of_squared: false,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_hard", self.p_hard), ("p_lim", self.p_lim)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("{name} = {p} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdcBranch {
    /// `A >= B`: threshold `alpha - sigma²`.
    Alpha,
    /// `A < B`: threshold `beta - sigma²`.
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcDiagnostics {
    pub alpha: f64,
    pub beta_q: f64,
    pub sigma: f64,
    pub count_a: usize,
    pub count_b: f64,
    pub branch: AdcBranch,
    pub threshold: f64,
    pub active_fraction: f64,
}

/// Linear interpolation between the closest order statistics at zero-based
/// position `p (n - 1)`.
pub fn quantile<T: Scalar>(values: &[T], p: f64) -> Result<T> {
    if values.is_empty() {
        return Err(Error::Input("quantile of an empty array".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Input(format!("quantile level {p} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(quantile_sorted(&sorted, p))
}

pub(crate) fn quantile_sorted<T: Scalar>(sorted: &[T], p: f64) -> T {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = T::lit(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Σ over items and levels of `1 - cos(flatten(e), flatten(d))`, averaged
/// over the batch. Lies in `[0, 6]`.
pub fn global_cosine_loss<T: Scalar>(enc: &FeaturePyramid<T>, dec: &FeaturePyramid<T>) -> Result<T> {
    Ok(global_cosine_loss_with_grad(enc, dec)?.0)
}

/// Loss plus its gradient w.r.t. every decoder level.
pub fn global_cosine_loss_with_grad<T: Scalar>(
    enc: &FeaturePyramid<T>,
    dec: &FeaturePyramid<T>,
) -> Result<(T, [Array4<T>; 3])> {
    enc.check_pair(dec)?;
    let b = enc.batch();
    let eps = T::lit(COSINE_EPS);
    let inv_b = T::one() / T::lit(b as f64);
    let mut total = T::zero();
    let mut grads: [Array4<T>; 3] = std::array::from_fn(|k| Array4::zeros(dec.levels[k].raw_dim()));
    for k in 0..3 {
        let e = enc.levels[k].as_standard_layout();
        let d = dec.levels[k].as_standard_layout();
        let (es, ds) = (e.as_slice().unwrap(), d.as_slice().unwrap());
        let per = es.len() / b;
        let gs = grads[k].as_slice_mut().unwrap();
        for bi in 0..b {
            let er = &es[bi * per..(bi + 1) * per];
            let dr = &ds[bi * per..(bi + 1) * per];
            let (mut dot, mut ne, mut nd) = (T::zero(), T::zero(), T::zero());
            for (&x, &y) in er.iter().zip(dr) {
                dot += x * y;
                ne += x * x;
                nd += y * y;
            }
            let a = at_least(ne.sqrt(), eps);
            let n = nd.sqrt();
            let bn = at_least(n, eps);
            let cos = clamp_cos(dot / (a * bn));
            total += (T::one() - cos) * inv_b;
            let ce = -inv_b / (a * bn);
            let cd = if n > eps { inv_b * cos / (bn * bn) } else { T::zero() };
            for ((g, &x), &y) in gs[bi * per..(bi + 1) * per].iter_mut().zip(er).zip(dr) {
                *g = ce * x + cd * y;
            }
        }
    }
    Ok((total, grads))
}

/// Mean of `S²` over all pixels.
pub fn local_loss<T: Scalar>(s: &Array3<T>) -> T {
    let n = T::lit(s.len() as f64);
    s.iter().map(|&v| v * v).sum::<T>() / n
}

pub fn local_loss_with_grad<T: Scalar>(s: &Array3<T>) -> (T, Array3<T>) {
    let scale = T::lit(2.0) / T::lit(s.len() as f64);
    (local_loss(s), s.mapv(|v| v * scale))
}

/// Mean of `S²` over pixels with `S² >= threshold`, the active count, and the
/// gradient (zero outside the active set). Empty active set yields zero.
fn masked_mean_sq<T: Scalar>(s: &Array3<T>, threshold: T) -> (T, usize, Array3<T>) {
    let mut sum = T::zero();
    let mut count = 0usize;
    for &v in s.iter() {
        let sq = v * v;
        if sq >= threshold {
            sum += sq;
            count += 1;
        }
    }
    if count == 0 {
        return (T::zero(), 0, Array3::zeros(s.raw_dim()));
    }
    let n = T::lit(count as f64);
    let scale = T::lit(2.0) / n;
    let grad = s.mapv(|v| if v * v >= threshold { v * scale } else { T::zero() });
    (sum / n, count, grad)
}

/// Fixed mining: masked mean of `S²` over `S² >= beta`, `beta` the
/// `p_lim`-quantile of `S²`.
pub fn hard_mined_loss<T: Scalar>(s: &Array3<T>, p_lim: f64) -> Result<T> {
    Ok(hard_mined_loss_with_grad(s, p_lim)?.0)
}

pub fn hard_mined_loss_with_grad<T: Scalar>(s: &Array3<T>, p_lim: f64) -> Result<(T, Array3<T>)> {
    let sq: Vec<T> = s.iter().map(|&v| v * v).collect();
    let beta = quantile(&sq, p_lim)?;
    let (loss, _, grad) = masked_mean_sq(s, beta);
    Ok((loss, grad))
}

pub fn adc_loss<T: Scalar>(s: &Array3<T>, cfg: &MiningConfig) -> Result<(T, AdcDiagnostics)> {
    let (loss, diag, _) = adc_loss_with_grad(s, cfg)?;
    Ok((loss, diag))
}

/// Adaptive-contraction loss. `alpha` (quantile of `S`), `beta` (quantile of
/// `S²`) and `sigma` (population std of `S`) are taken over the whole batch.
pub fn adc_loss_with_grad<T: Scalar>(s: &Array3<T>, cfg: &MiningConfig) -> Result<(T, AdcDiagnostics, Array3<T>)> {
    cfg.validate()?;
    let (b, h, w) = s.dim();
    let flat: Vec<T> = s.iter().copied().collect();
    if flat.is_empty() {
        return Err(Error::Input("empty anomaly map".into()));
    }
    let sq: Vec<T> = flat.iter().map(|&v| v * v).collect();
    let alpha = if cfg.alpha_of_squared {
        quantile(&sq, cfg.p_hard)?
    } else {
        quantile(&flat, cfg.p_hard)?
    };
    let beta = quantile(&sq, cfg.p_lim)?;
    let n = T::lit(flat.len() as f64);
    let mean = flat.iter().copied().sum::<T>() / n;
    let var = flat.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let sigma = var.sqrt();
    let alpha_threshold = alpha - var;
    let count_a = sq.iter().filter(|&&v| v >= alpha_threshold).count();
    let count_b = (b * h * w) as f64 * (1.0 - cfg.p_lim);
    let (branch, threshold) = if count_a as f64 >= count_b {
        (AdcBranch::Alpha, alpha_threshold)
    } else {
        (AdcBranch::Beta, beta - var)
    };
    let (loss, active, grad) = masked_mean_sq(s, threshold);
    let diag = AdcDiagnostics {
        alpha: alpha.as_f64(),
        beta_q: beta.as_f64(),
        sigma: sigma.as_f64(),
        count_a,
        count_b,
        branch,
        threshold: threshold.as_f64(),
        active_fraction: active as f64 / flat.len() as f64,
    };
    Ok((loss, diag, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Global,
    Local,
    LocalHm,
    Adc,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "local" => Ok(Self::Local),
            "local_hm" | "local-hm" => Ok(Self::LocalHm),
            "adc" => Ok(Self::Adc),
            other => Err(Error::Config(format!("unknown loss mode `{other}`"))),
        }
    }
}

/// Value, decoder-level gradients and (for ADC) diagnostics of one objective.
pub struct Objective<T> {
    pub loss: T,
    pub grads: [Array4<T>; 3],
    pub adc: Option<AdcDiagnostics>,
}

/// Evaluate the selected objective on an encoder/decoder pair. `target` is
/// the anomaly-map resolution for the map-based losses.
pub fn objective<T: Scalar>(
    mode: LossMode,
    enc: &FeaturePyramid<T>,
    dec: &FeaturePyramid<T>,
    mining: &MiningConfig,
    target: (usize, usize),
) -> Result<Objective<T>> {
    if mode == LossMode::Global {
        let (loss, grads) = global_cosine_loss_with_grad(enc, dec)?;
        return Ok(Objective { loss, grads, adc: None });
    }
    let map = crate::anomaly::AnomalyMap::from_pyramids(enc, dec, target)?;
    let s = &map.aggregated;
    if s.iter().any(|v| !v.is_finite()) {
        // Mining would silently drop NaN pixels; report the loss as NaN.
        let grads = std::array::from_fn(|k| Array4::zeros(dec.levels[k].raw_dim()));
        return Ok(Objective {
            loss: T::nan(),
            grads,
            adc: None,
        });
    }
    let (loss, ds, adc) = match mode {
        LossMode::Local => {
            let (l, g) = local_loss_with_grad(s);
            (l, g, None)
        }
        LossMode::LocalHm => {
            let (l, g) = hard_mined_loss_with_grad(s, mining.p_lim)?;
            (l, g, None)
        }
        LossMode::Adc => {
            let (l, d, g) = adc_loss_with_grad(s, mining)?;
            (l, g, Some(d))
        }
        LossMode::Global => unreachable!(),
    };
    let grads = crate::anomaly::anomaly_map_backward(enc, dec, &ds);
    Ok(Objective { loss, grads, adc })
}
