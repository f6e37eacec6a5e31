//! Student training on cached encoder features.
//!
//! The encoder is frozen, so its pyramid for every training image is
//! computed once up front. Each epoch visits the images in an order drawn
//! from a ChaCha8 stream seeded by `TrainConfig::seed`; every optimizer step
//! writes exactly one JSON line to the step log. Runs are single-threaded
//! and therefore bit-reproducible for a fixed seed, config and dataset.

use std::io::Write;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{image_batch, Sample};
use super::optim::AdamW;
use crate::diagnostics::{feature_entropy, feature_variance, DiagnosticsConfig};
use crate::losses::{objective, AdcDiagnostics};
use crate::model::{FeaturePyramid, Model, Reconstructor};
use crate::{Error, Result, Scalar};

/// One line of the step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub adc: Option<AdcDiagnostics>,
}

/// One line of the diagnostics log, written after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub step: usize,
    pub epoch: usize,
    pub encoder_variance: f64,
    pub decoder_variance: f64,
    pub encoder_entropy: f64,
    pub decoder_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    pub epoch_mean_losses: Vec<f64>,
    pub final_loss: f64,
    /// Learning rate after the last scheduler update.
    pub final_lr: f64,
}

/// Where training writes its JSON lines.
pub struct TrainLogs<'a> {
    pub steps: &'a mut dyn Write,
    pub diagnostics: Option<(&'a mut dyn Write, DiagnosticsConfig)>,
}

fn write_line<S: Serialize>(out: &mut dyn Write, record: &S) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::Input(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| Error::io("<training log>", e))
}

fn gather<T: Scalar>(pyramid: &FeaturePyramid<T>, items: &[usize]) -> FeaturePyramid<T> {
    FeaturePyramid::new(pyramid.levels.clone().map(|l| l.select(Axis(0), items)), pyramid.origin)
}

/// Encoder pyramids for `samples`, computed in chunks of `chunk` images.
pub fn encode_samples<T: Scalar>(model: &Model<T>, samples: &[Sample], chunk: usize) -> Result<FeaturePyramid<T>> {
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let parts = refs
        .chunks(chunk.max(1))
        .map(|c| model.encode(&image_batch(c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeaturePyramid::stack(&parts.iter().collect::<Vec<_>>()))
}

/// Optimize `student` to reconstruct `features` (all training items
/// stacked along the batch axis). `target` is the anomaly-map resolution.
pub fn train_student<T: Scalar, R: Reconstructor<T>>(
    student: &mut R,
    features: &FeaturePyramid<T>,
    cfg: &TrainConfig,
    target: (usize, usize),
    logs: &mut TrainLogs<'_>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let n = features.batch();
    if n == 0 {
        return Err(Error::Dataset("no training samples".into()));
    }
    let mut optimizer = AdamW::<T>::new(cfg.lr, cfg.betas, cfg.adam_eps, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let probe: Vec<usize> = (0..n.min(cfg.batch_size)).collect();
    let mut step = 0usize;
    let mut epoch_mean_losses = Vec::with_capacity(cfg.epochs);
    let mut final_loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        optimizer.lr = cfg.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut batches = 0usize;
        for items in order.chunks(cfg.batch_size) {
            let enc = gather(features, items);
            student.zero_grad();
            let (dec, cache) = student.reconstruct(&enc);
            let obj = objective(cfg.loss_mode, &enc, &dec, &cfg.mining, target)?;
            let loss = obj.loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            student.backward(&cache, &obj.grads);
            optimizer.step(student)?;
            write_line(
                logs.steps,
                &StepRecord {
                    step,
                    epoch,
                    loss,
                    lr: optimizer.lr,
                    adc: obj.adc,
                },
            )?;
            epoch_sum += loss;
            batches += 1;
            final_loss = loss;
            step += 1;
        }
        epoch_mean_losses.push(epoch_sum / batches as f64);

        if let Some((out, dcfg)) = logs.diagnostics.as_mut() {
            let enc = gather(features, &probe);
            let dec = student.infer(&enc);
            let record = DiagnosticRecord {
                step,
                epoch,
                encoder_variance: feature_variance(&enc),
                decoder_variance: feature_variance(&dec),
                encoder_entropy: feature_entropy(&enc, dcfg)?,
                decoder_entropy: feature_entropy(&dec, dcfg)?,
            };
            write_line(*out, &record)?;
        }
    }
    logs.steps.flush().map_err(|e| Error::io("<training log>", e))?;
    Ok(TrainSummary {
        steps: step,
        epochs: cfg.epochs,
        epoch_mean_losses,
        final_loss,
        final_lr: cfg.lr_at_epoch(cfg.epochs),
    })
}

/// Train the student of `model` on `samples`; the encoder is never touched.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    samples: &[Sample],
    cfg: &TrainConfig,
    logs: &mut TrainLogs<'_>,
) -> Result<TrainSummary> {
    let features = encode_samples(model, samples, cfg.batch_size)?;
    let target = model.config.input_resolution;
    train_student(&mut model.student, &features, cfg, target, logs)
}

/// Parse a step log back into records.
pub fn read_step_log(text: &str) -> Result<Vec<StepRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Input(format!("bad log line: {e}"))))
        .collect()
}
