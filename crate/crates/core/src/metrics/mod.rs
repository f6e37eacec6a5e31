//! Image- and pixel-level evaluation: AUROC, AP, F1-max, AUPRO and their
//! seven-way mean (mAD).

mod aupro;
mod regions;

pub use aupro::{aupro, normalized_area, pro_curve, AuproConfig};
pub use regions::{label_regions, Connectivity};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

fn check_inputs<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score.
fn descending<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].as_f64().total_cmp(&scores[a].as_f64()));
    idx
}

/// Cumulative `(tp, fp)` after each group of tied scores, descending.
fn sweep<T: Scalar>(scores: &[T], labels: &[bool]) -> Vec<(usize, usize)> {
    let idx = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]].as_f64();
        while i < idx.len() && scores[idx[i]].as_f64() == t {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// Mann–Whitney estimate of `P(score_pos > score_neg)`, ties counting one half.
pub fn auroc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].as_f64().total_cmp(&scores[b].as_f64()));
    // sum of average ranks (1-based) of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]].as_f64();
        let mut j = i;
        let mut pos_in_group = 0usize;
        while j < idx.len() && scores[idx[j]].as_f64() == t {
            if labels[idx[j]] {
                pos_in_group += 1;
            }
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg_rank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Step-wise average precision `Σ (R_n - R_{n-1}) P_n` over the descending
/// threshold sweep.
pub fn average_precision<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive".into()));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in sweep(scores, labels) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Best F1 over thresholds at every distinct score (`score >= t` is positive).
pub fn f1_max<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("F1 needs a positive".into()));
    }
    let mut best = 0.0f64;
    for (tp, fp) in sweep(scores, labels) {
        if tp == 0 {
            continue;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / pos as f64;
        best = best.max(2.0 * precision * recall / (precision + recall));
    }
    Ok(best)
}

/// Everything needed to fill a [`MetricReport`].
#[derive(Debug, Clone)]
pub struct EvalSet<T> {
    pub image_scores: Vec<T>,
    pub image_labels: Vec<bool>,
    pub pixel_scores: Vec<Array2<T>>,
    pub pixel_masks: Vec<Array2<bool>>,
}

impl<T: Scalar> EvalSet<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.image_scores.len();
        if self.image_labels.len() != n || self.pixel_scores.len() != n || self.pixel_masks.len() != n {
            return Err(Error::Shape("evaluation set arrays differ in length".into()));
        }
        for (s, m) in self.pixel_scores.iter().zip(&self.pixel_masks) {
            if s.dim() != m.dim() {
                return Err(Error::Shape(format!("map {:?} vs mask {:?}", s.dim(), m.dim())));
            }
        }
        Ok(())
    }
}

/// The seven metrics and their mean, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub i_auroc: f64,
    pub i_ap: f64,
    pub i_f1max: f64,
    pub p_auroc: f64,
    pub p_ap: f64,
    pub p_f1max: f64,
    pub aupro: f64,
    pub mad: f64,
}

pub const CSV_COLUMNS: [&str; 8] = ["I-AUROC", "I-AP", "I-F1max", "P-AUROC", "P-AP", "P-F1max", "AUPRO", "mAD"];

impl MetricReport {
    /// Build from the seven metrics in table order; mAD is derived.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() != 7 {
            return Err(Error::Input(format!("expected 7 metric values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("metric value is not finite".into()));
        }
        let mut r = Self {
            i_auroc: values[0],
            i_ap: values[1],
            i_f1max: values[2],
            p_auroc: values[3],
            p_ap: values[4],
            p_f1max: values[5],
            aupro: values[6],
            mad: 0.0,
        };
        r.mad = mad(&r);
        Ok(r)
    }

    pub fn seven(&self) -> [f64; 7] {
        [self.i_auroc, self.i_ap, self.i_f1max, self.p_auroc, self.p_ap, self.p_f1max, self.aupro]
    }

    /// Table row: all eight columns ×100, one decimal.
    pub fn percent_row(&self) -> Vec<String> {
        self.seven()
            .iter()
            .chain(std::iter::once(&self.mad))
            .map(|v| format!("{:.1}", v * 100.0))
            .collect()
    }
}

/// Arithmetic mean of the seven metrics.
pub fn mad(report: &MetricReport) -> f64 {
    report.seven().iter().sum::<f64>() / 7.0
}

/// Fill every field of a [`MetricReport`].
pub fn evaluate_set<T: Scalar>(set: &EvalSet<T>, cfg: &AuproConfig) -> Result<MetricReport> {
    set.validate()?;
    let i_auroc = auroc(&set.image_scores, &set.image_labels)?;
    let i_ap = average_precision(&set.image_scores, &set.image_labels)?;
    let i_f1max = f1_max(&set.image_scores, &set.image_labels)?;
    let flat_scores: Vec<T> = set.pixel_scores.iter().flat_map(|m| m.iter().copied()).collect();
    let flat_labels: Vec<bool> = set.pixel_masks.iter().flat_map(|m| m.iter().copied()).collect();
    let p_auroc = auroc(&flat_scores, &flat_labels)?;
    let p_ap = average_precision(&flat_scores, &flat_labels)?;
    let p_f1max = f1_max(&flat_scores, &flat_labels)?;
    let pro = aupro(&set.pixel_scores, &set.pixel_masks, cfg)?;
    MetricReport::from_values(&[i_auroc, i_ap, i_f1max, p_auroc, p_ap, p_f1max, pro])
}
