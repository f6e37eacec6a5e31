//! File-level helpers and end-to-end suites shared by the pipeline tests and
//! the acceptance target.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use minimaxad::model::Model;
use minimaxad::pipeline::{
    evaluate, load_checkpoint, load_dataset, save_checkpoint, synth_dataset, train, EvalConfig, ModelScorer,
    SynthConfig, TrainConfig, TrainLogs,
};

use super::suites::Outcome;

/// Every file under `root` keyed by its relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        categories: 2,
        normals_per_cat: 6,
        anomalies_per_cat: 3,
        good_test_per_cat: 3,
        resolution: 32,
    }
}

pub fn short_training(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

/// Synthesis, training and evaluation are reproducible, and a checkpoint
/// reloads to the same evaluation.
pub fn determinism(work: &Path) -> Outcome {
    let synth = small_synth(3);
    let a = synth_dataset(&synth, &work.join("a")).map_err(|e| e.to_string())?;
    synth_dataset(&synth, &work.join("b")).map_err(|e| e.to_string())?;
    if tree(&work.join("a")) != tree(&work.join("b")) {
        return Err("two syntheses with the same seed differ".into());
    }

    let train_set = load_dataset(&a.spec(minimaxad::pipeline::Split::Train)).map_err(|e| e.to_string())?;
    let test_set = load_dataset(&a.spec(minimaxad::pipeline::Split::Test)).map_err(|e| e.to_string())?;
    let cfg = short_training(2);
    let run = |log: &mut Vec<u8>| -> Result<Model<f32>, String> {
        let mut model = Model::<f32>::new(super::tiny_config(), 5).map_err(|e| e.to_string())?;
        let mut logs = TrainLogs {
            steps: log,
            diagnostics: None,
        };
        train(&mut model, &train_set, &cfg, &mut logs).map_err(|e| e.to_string())?;
        Ok(model)
    };
    let (mut log_a, mut log_b) = (Vec::new(), Vec::new());
    let model = run(&mut log_a)?;
    run(&mut log_b)?;
    if log_a != log_b {
        return Err("two trainings with the same seed logged different steps".into());
    }

    let eval_cfg = EvalConfig::default();
    let report = |m: &Model<f32>| {
        let scorer = ModelScorer {
            model: m,
            smoothing_sigma: eval_cfg.smoothing_sigma,
        };
        evaluate(&scorer, &test_set, &eval_cfg, "determinism", None).map_err(|e| e.to_string())
    };
    let before = report(&model)?;
    let dir = work.join("checkpoint");
    save_checkpoint(&dir, &model).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint::<f32>(&dir).map_err(|e| e.to_string())?;
    let after = report(&loaded)?;
    if before != after {
        return Err("reloaded checkpoint evaluates differently".into());
    }
    Ok(format!(
        "synthesis ({} files), training log ({} bytes) and checkpoint report identical",
        tree(&work.join("a")).len(),
        log_a.len()
    ))
}
