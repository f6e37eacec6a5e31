//! Evaluation orchestration: score every test image, compute the metric
//! report per category and their mean, and write JSON/CSV/PNG artifacts.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::config::EvalConfig;
use super::data::{image_batch, Sample};
use crate::anomaly::{export_map_png, AnomalyMap};
use crate::metrics::{evaluate_set, EvalSet, MetricReport, CSV_COLUMNS};
use crate::model::Model;
use crate::{Error, Result, Scalar};

/// Pixel map and image score of one test image.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub map: Array2<f64>,
    pub score: f64,
}

/// Anything that turns test images into anomaly maps and scores.
pub trait Scorer {
    fn score(&self, samples: &[&Sample]) -> Result<Vec<Scored>>;
}

/// The trained model: aggregated cosine map, optionally smoothed; the image
/// score is the maximum of the final map.
pub struct ModelScorer<'a, T> {
    pub model: &'a Model<T>,
    pub smoothing_sigma: f64,
}

impl<T: Scalar> Scorer for ModelScorer<'_, T> {
    fn score(&self, samples: &[&Sample]) -> Result<Vec<Scored>> {
        let images = image_batch::<T>(samples);
        let (enc, dec) = self.model.forward(&images)?;
        let (_, _, h, w) = images.dim();
        let mut map = AnomalyMap::from_pyramids(&enc, &dec, (h, w))?;
        if self.smoothing_sigma > 0.0 {
            map = map.with_smoothing(self.smoothing_sigma);
        }
        Ok(map
            .final_map()
            .axis_iter(Axis(0))
            .map(|m| {
                let map = m.mapv(|v| v.as_f64());
                let score = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Scored { map, score }
            })
            .collect())
    }
}

/// Ground truth in place of a model: the map is the mask itself.
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn score(&self, samples: &[&Sample]) -> Result<Vec<Scored>> {
        samples
            .iter()
            .map(|s| {
                let mask = s
                    .mask
                    .as_ref()
                    .ok_or_else(|| Error::Dataset(format!("{} has no mask", s.path.display())))?;
                let map = mask.mapv(|m| m as u8 as f64);
                Ok(Scored {
                    score: map.iter().copied().fold(0.0, f64::max),
                    map,
                })
            })
            .collect()
    }
}

/// The same value everywhere.
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&self, samples: &[&Sample]) -> Result<Vec<Scored>> {
        Ok(samples
            .iter()
            .map(|s| {
                let (_, h, w) = s.image.dim();
                Scored {
                    map: Array2::from_elem((h, w), self.0),
                    score: self.0,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub path: String,
    pub category: String,
    pub defect: String,
    pub label: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub categories: Vec<CategoryReport>,
    /// Column-wise mean over categories.
    pub mean: MetricReport,
    pub images: Vec<ImageResult>,
}

/// Column-wise mean of several reports; mAD is recomputed from the means.
pub fn mean_report(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::Input("no reports to average".into()));
    }
    let mut sums = [0.0; 7];
    for r in reports {
        for (s, v) in sums.iter_mut().zip(r.seven()) {
            *s += v;
        }
    }
    MetricReport::from_values(&sums.map(|s| s / reports.len() as f64))
}

/// Score `samples` and compute one report per category. `identity` names
/// the dataset in error messages. Maps are written under `maps_dir` when
/// given.
pub fn evaluate(
    scorer: &dyn Scorer,
    samples: &[Sample],
    cfg: &EvalConfig,
    identity: &str,
    maps_dir: Option<&Path>,
) -> Result<Evaluation> {
    let mut scored = Vec::with_capacity(samples.len());
    let refs: Vec<&Sample> = samples.iter().collect();
    for chunk in refs.chunks(cfg.batch_size.max(1)) {
        scored.extend(scorer.score(chunk)?);
    }

    let mut names: Vec<&str> = samples.iter().map(|s| s.category.as_str()).collect();
    names.dedup();
    let mut categories = Vec::with_capacity(names.len());
    for name in names {
        let mut set = EvalSet {
            image_scores: Vec::new(),
            image_labels: Vec::new(),
            pixel_scores: Vec::new(),
            pixel_masks: Vec::new(),
        };
        for (s, sc) in samples.iter().zip(&scored).filter(|(s, _)| s.category == name) {
            let mask = s
                .mask
                .clone()
                .ok_or_else(|| Error::Dataset(format!("{} has no mask", s.path.display())))?;
            set.image_scores.push(sc.score);
            set.image_labels.push(s.label);
            set.pixel_scores.push(sc.map.clone());
            set.pixel_masks.push(mask);
        }
        let report =
            evaluate_set(&set, &cfg.aupro).map_err(|e| e.annotate(format!("{identity}, category {name}")))?;
        categories.push(CategoryReport {
            category: name.to_string(),
            report,
        });
    }
    let mean = mean_report(&categories.iter().map(|c| c.report).collect::<Vec<_>>())?;

    if let Some(dir) = maps_dir {
        for (s, sc) in samples.iter().zip(&scored) {
            let stem = s.path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let path = dir.join(&s.category).join(&s.defect).join(format!("{stem}.png"));
            export_map_png(sc.map.view(), &path)?;
        }
    }

    let images = samples
        .iter()
        .zip(&scored)
        .map(|(s, sc)| ImageResult {
            path: s.path.display().to_string(),
            category: s.category.clone(),
            defect: s.defect.clone(),
            label: s.label,
            score: sc.score,
        })
        .collect();
    Ok(Evaluation {
        categories,
        mean,
        images,
    })
}

/// Table rows: one per category, then `Mean` when there are several.
pub fn csv_rows(eval: &Evaluation) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = eval
        .categories
        .iter()
        .map(|c| std::iter::once(c.category.clone()).chain(c.report.percent_row()).collect())
        .collect();
    if eval.categories.len() > 1 {
        rows.push(std::iter::once("Mean".to_string()).chain(eval.mean.percent_row()).collect());
    }
    rows
}

pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<&str> = std::iter::once("Category").chain(CSV_COLUMNS).collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Input(format!("{}: {e}", path.display()))
    }
}

/// `report.json` (full precision) and `report.csv` (×100, one decimal).
pub fn write_reports(dir: &Path, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(eval).map_err(|e| Error::Input(e.to_string()))?;
    let path = dir.join("report.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    write_csv(&dir.join("report.csv"), &csv_rows(eval))
}
