mod common;

use std::cell::Cell;
use std::fs;
use std::path::Path;

use minimaxad::losses::{objective, LossMode, MiningConfig};
use minimaxad::model::{FeaturePyramid, Model, Origin, Reconstructor};
use minimaxad::nn::{Module, Param};
use minimaxad::pipeline::train::{read_step_log, train_student};
use minimaxad::pipeline::{
    evaluate, load_dataset, synth_dataset, train, ConstantScorer, DatasetSpec, EvalConfig, OracleScorer, RunConfig, Split,
    SynthConfig, TrainConfig, TrainLogs,
};
use minimaxad::Error;
use ndarray::Array4;
use tempfile::tempdir;

use common::e2e::{short_training, small_synth, tree};

fn no_logs(buf: &mut Vec<u8>) -> TrainLogs<'_> {
    TrainLogs {
        steps: buf,
        diagnostics: None,
    }
}

#[test]
fn synthesis_is_byte_identical_for_a_seed() {
    let dir = tempdir().unwrap();
    let cfg = small_synth(11);
    synth_dataset(&cfg, &dir.path().join("a")).unwrap();
    synth_dataset(&cfg, &dir.path().join("b")).unwrap();
    synth_dataset(&small_synth(12), &dir.path().join("c")).unwrap();
    let a = tree(&dir.path().join("a"));
    assert!(!a.is_empty());
    assert_eq!(a, tree(&dir.path().join("b")));
    assert_ne!(a, tree(&dir.path().join("c")));
}

#[test]
fn default_synthesis_counts_and_mask_areas() {
    let dir = tempdir().unwrap();
    let summary = synth_dataset(&SynthConfig::default(), dir.path()).unwrap();
    assert_eq!(summary.categories.len(), 5);
    let train = load_dataset(&summary.spec(Split::Train)).unwrap();
    let test = load_dataset(&summary.spec(Split::Test)).unwrap();
    assert_eq!(train.len(), 100);
    assert_eq!(test.iter().filter(|s| s.label).count(), 50);
    assert_eq!(test.iter().filter(|s| !s.label).count(), 50);

    let mut masks = 0;
    for cat in &summary.categories {
        for a in &cat.anomalies {
            let png = image::open(&a.mask).unwrap().to_luma8();
            assert_eq!(png.pixels().filter(|p| p.0[0] > 127).count(), a.area, "{}", a.mask.display());
            assert!(a.area > 0);
            masks += 1;
        }
    }
    assert_eq!(masks, 50);
}

#[test]
fn loader_contracts() {
    let dir = tempdir().unwrap();
    let summary = synth_dataset(&small_synth(4), dir.path()).unwrap();
    let train = load_dataset(&summary.spec(Split::Train)).unwrap();
    assert!(train.iter().all(|s| !s.label && s.defect == "good"));
    let test = load_dataset(&summary.spec(Split::Test)).unwrap();
    for s in &test {
        let mask = s.mask.as_ref().unwrap();
        assert_eq!(mask.dim(), (32, 32));
        assert_eq!(mask.iter().any(|&m| m), s.label, "{}", s.path.display());
    }
    let mut paths: Vec<_> = test.iter().map(|s| (s.category.clone(), s.path.clone())).collect();
    let sorted = {
        let mut p = paths.clone();
        p.sort();
        p
    };
    assert_eq!(paths, sorted);
    paths.clear();

    // At native size with zero mean and unit std the tensor is the PNG / 255.
    let spec = DatasetSpec {
        mean: [0.0; 3],
        std: [1.0; 3],
        ..summary.spec(Split::Train)
    };
    let raw = load_dataset(&spec).unwrap();
    let png = image::open(&raw[0].path).unwrap().to_rgb8();
    for (x, y, p) in png.enumerate_pixels() {
        for c in 0..3 {
            let want = p.0[c] as f32 / 255.0;
            assert!((raw[0].image[[c, y as usize, x as usize]] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn missing_mask_names_the_file() {
    let dir = tempdir().unwrap();
    let summary = synth_dataset(&small_synth(5), dir.path()).unwrap();
    let victim = &summary.categories[1].anomalies[0].mask;
    fs::remove_file(victim).unwrap();
    let err = load_dataset(&summary.spec(Split::Test)).unwrap_err().to_string();
    let name = victim.file_name().unwrap().to_string_lossy();
    assert!(err.contains(name.as_ref()), "{err}");
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainConfig {
        epochs: 4,
        ..short_training(4)
    };
    for e in 0..10 {
        let want = cfg.lr * cfg.scheduler_gamma.powi(e as i32);
        assert!((cfg.lr_at_epoch(e) - want).abs() <= 1e-15 * want);
    }

    let dir = tempdir().unwrap();
    let summary = synth_dataset(&small_synth(6), dir.path()).unwrap();
    let samples = load_dataset(&summary.spec(Split::Train)).unwrap();
    let mut model = Model::<f32>::new(common::tiny_config(), 1).unwrap();
    let mut buf = Vec::new();
    let out = train(&mut model, &samples, &cfg, &mut no_logs(&mut buf)).unwrap();
    let records = read_step_log(std::str::from_utf8(&buf).unwrap()).unwrap();
    // 12 samples in batches of 4.
    assert_eq!(out.steps, 12);
    assert_eq!(records.len(), out.steps);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.step, i);
        assert_eq!(r.epoch, i / 3);
        assert_eq!(r.lr, cfg.lr_at_epoch(r.epoch));
        assert!(r.adc.is_some());
    }
    assert_eq!(out.final_lr, cfg.lr_at_epoch(4));
}

#[test]
fn partial_last_batch_is_kept() {
    let dir = tempdir().unwrap();
    let summary = synth_dataset(&small_synth(6), dir.path()).unwrap();
    let samples = load_dataset(&summary.spec(Split::Train)).unwrap();
    let mut model = Model::<f32>::new(common::tiny_config(), 1).unwrap();
    let cfg = TrainConfig {
        batch_size: 5,
        loss_mode: LossMode::Global,
        ..short_training(2)
    };
    let mut buf = Vec::new();
    let out = train(&mut model, &samples, &cfg, &mut no_logs(&mut buf)).unwrap();
    assert_eq!(out.steps, 6);
    let records = read_step_log(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(records.len(), 6);
    assert!(records.iter().all(|r| r.adc.is_none()));
}

/// Returns the encoder features plus a per-level scalar offset.
#[derive(Clone)]
struct Offset {
    bias: [Param<f64>; 3],
    nan_from_call: Option<usize>,
    calls: Cell<usize>,
}

impl Offset {
    fn new(nan_from_call: Option<usize>) -> Self {
        Self {
            bias: std::array::from_fn(|_| Param::zeros(&[1])),
            nan_from_call,
            calls: Cell::new(0),
        }
    }
}

impl Module<f64> for Offset {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
        for (k, b) in self.bias.iter().enumerate() {
            f(&format!("{prefix}bias{k}"), b);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        for (k, b) in self.bias.iter_mut().enumerate() {
            f(&format!("{prefix}bias{k}"), b);
        }
    }
}

impl Reconstructor<f64> for Offset {
    type Cache = ();

    fn reconstruct(&self, encoded: &FeaturePyramid<f64>) -> (FeaturePyramid<f64>, ()) {
        let call = self.calls.get();
        self.calls.set(call + 1);
        let poison = self.nan_from_call.is_some_and(|n| call >= n);
        let levels = std::array::from_fn(|k| {
            let b = self.bias[k].values()[0];
            encoded.levels[k].mapv(|v| if poison { f64::NAN } else { v + b })
        });
        (FeaturePyramid::new(levels, Origin::Decoder), ())
    }

    fn backward(&mut self, _: &(), grads: &[Array4<f64>; 3]) {
        for (b, g) in self.bias.iter_mut().zip(grads) {
            b.grads_mut()[0] += g.sum();
        }
    }
}

fn random_features(n: usize, seed: u64) -> FeaturePyramid<f64> {
    let mut rng = common::rng(seed);
    let levels = std::array::from_fn(|k| common::uniform4(&mut rng, (n, 4 << k, 8 >> k, 8 >> k), 0.1, 1.0));
    FeaturePyramid::new(levels, Origin::Encoder)
}

#[test]
fn exact_reconstruction_is_a_fixed_point() {
    let features = random_features(6, 1);
    for mode in [LossMode::Local, LossMode::LocalHm, LossMode::Adc] {
        let mut student = Offset::new(None);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            loss_mode: mode,
            ..short_training(3)
        };
        let mut buf = Vec::new();
        let out = train_student(&mut student, &features, &cfg, (16, 16), &mut no_logs(&mut buf)).unwrap();
        let records = read_step_log(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(records.len(), out.steps);
        for r in &records {
            assert!(r.loss.abs() < 1e-20, "{mode:?}: step {} loss {}", r.step, r.loss);
        }
        for b in &student.bias {
            assert!(b.values()[0].abs() < 1e-15, "{mode:?}: bias moved to {}", b.values()[0]);
        }
    }

    // The global loss is linear in 1 - cos, so its gradient at the optimum
    // is zero only up to rounding, which Adam would normalize into full
    // steps. Check the gradient itself instead.
    let dec = FeaturePyramid::new(features.levels.clone(), Origin::Decoder);
    let obj = objective(LossMode::Global, &features, &dec, &MiningConfig::default(), (16, 16)).unwrap();
    assert!(obj.loss.abs() < 1e-12);
    for g in &obj.grads {
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let features = random_features(8, 2);
    let mut student = Offset::new(Some(5));
    let mut buf = Vec::new();
    let err = train_student(&mut student, &features, &short_training(3), (16, 16), &mut no_logs(&mut buf))
        .unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { step: 5 }), "{err}");
    assert!(err.to_string().contains('5'));
    assert_eq!(read_step_log(std::str::from_utf8(&buf).unwrap()).unwrap().len(), 5);
}

#[test]
fn encoder_is_frozen() {
    let dir = tempdir().unwrap();
    let summary = synth_dataset(&small_synth(7), dir.path()).unwrap();
    let samples = load_dataset(&summary.spec(Split::Train)).unwrap();
    let mut model = Model::<f32>::new(common::tiny_config(), 3).unwrap();
    let snapshot = |m: &Model<f32>| {
        let mut v = Vec::new();
        m.encoder.visit_params("", &mut |_, p| v.extend(p.values().iter().map(|x| x.to_bits())));
        v
    };
    let student_before = {
        let mut v = Vec::new();
        model.student.visit_params("", &mut |_, p| v.extend_from_slice(p.values()));
        v
    };
    let before = snapshot(&model);
    let mut buf = Vec::new();
    train(&mut model, &samples, &short_training(2), &mut no_logs(&mut buf)).unwrap();
    assert_eq!(before, snapshot(&model));
    let mut student_after = Vec::new();
    model.student.visit_params("", &mut |_, p| student_after.extend_from_slice(p.values()));
    assert_ne!(student_before, student_after);
}

#[test]
fn global_loss_decreases_on_single_category() {
    let dir = tempdir().unwrap();
    let cfg = SynthConfig {
        categories: 1,
        normals_per_cat: 12,
        ..small_synth(8)
    };
    let summary = synth_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(summary.categories.len(), 1);
    let samples = load_dataset(&summary.spec(Split::Train)).unwrap();
    let mut model = Model::<f32>::new(common::tiny_config(), 4).unwrap();
    let cfg = TrainConfig {
        loss_mode: LossMode::Global,
        ..short_training(20)
    };
    let mut buf = Vec::new();
    let out = train(&mut model, &samples, &cfg, &mut no_logs(&mut buf)).unwrap();
    let first = out.epoch_mean_losses[0];
    let last = *out.epoch_mean_losses.last().unwrap();
    assert!(last < first, "epoch losses {:?}", out.epoch_mean_losses);
}

#[test]
fn oracle_and_constant_scorers() {
    let dir = tempdir().unwrap();
    let summary = synth_dataset(&small_synth(9), dir.path()).unwrap();
    let test = load_dataset(&summary.spec(Split::Test)).unwrap();
    let cfg = EvalConfig::default();

    let oracle = evaluate(&OracleScorer, &test, &cfg, "oracle", None).unwrap();
    assert_eq!(oracle.categories.len(), 2);
    assert!((oracle.mean.aupro - 1.0).abs() < 1e-12);
    assert!((oracle.mean.p_auroc - 1.0).abs() < 1e-12);
    assert!((oracle.mean.i_auroc - 1.0).abs() < 1e-12);

    let out = dir.path().join("eval");
    fs::create_dir_all(&out).unwrap();
    minimaxad::pipeline::eval::write_reports(&out, &oracle).unwrap();
    let rows = minimaxad::pipeline::report::read_rows(&out.join("report.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].category, "Mean");
    assert!(rows.iter().all(|r| r.values[6] == 100.0));

    let constant = evaluate(&ConstantScorer(0.5), &test, &cfg, "constant", None).unwrap();
    assert!((constant.mean.i_auroc - 0.5).abs() < 1e-12);
    assert!((constant.mean.p_auroc - 0.5).abs() < 1e-12);
}

#[test]
fn saved_maps_round_trip() {
    let dir = tempdir().unwrap();
    let summary = synth_dataset(&small_synth(10), dir.path().join("data").as_path()).unwrap();
    let test = load_dataset(&summary.spec(Split::Test)).unwrap();
    let maps = dir.path().join("maps");
    evaluate(&OracleScorer, &test, &EvalConfig::default(), "maps", Some(&maps)).unwrap();
    let s = &test[test.len() - 1];
    let stem = s.path.file_stem().unwrap().to_string_lossy();
    let path = maps.join(&s.category).join(&s.defect).join(format!("{stem}.png"));
    let back = minimaxad::anomaly::import_map_png(&path).unwrap();
    let want = s.mask.as_ref().unwrap().mapv(|m| m as u8 as f64);
    assert!(back.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-3));
}

#[test]
fn determinism_and_checkpoint_round_trip() {
    let dir = tempdir().unwrap();
    let out = common::e2e::determinism(dir.path());
    assert!(out.is_ok(), "{}", out.unwrap_err());
}

fn cli(args: &[&str]) -> i32 {
    minimaxad::pipeline::cli::run(std::iter::once("minimaxad").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn cli_end_to_end_and_exit_codes() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    assert_eq!(cli(&["train", "--bogus-flag"]), 1);
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["--device", "gpu", "synth", "--out", s(&d.join("x"))]), 1);
    assert_eq!(cli(&["train", "--data", s(&d.join("missing")), "--out", s(&d.join("r0"))]), 2);

    let (t1, t2) = (d.join("t1"), d.join("t2"));
    for t in [&t1, &t2] {
        let args = ["--seed", "7", "synth", "--categories", "3", "--normals", "2", "--resolution", "32", "--out", s(t)];
        assert_eq!(cli(&args), 0);
    }
    assert_eq!(tree(&t1), tree(&t2));

    let data = d.join("data");
    assert_eq!(
        cli(&[
            "--seed", "2", "synth", "--categories", "2", "--normals", "4", "--anomalies", "2", "--good-test", "2",
            "--resolution", "32", "--out", s(&data)
        ]),
        0
    );

    let run_cfg = RunConfig {
        model: common::tiny_config(),
        train: TrainConfig {
            loss_mode: LossMode::Adc,
            ..short_training(2)
        },
        ..RunConfig::default()
    };
    let config = d.join("c.toml");
    fs::write(&config, run_cfg.to_toml().unwrap()).unwrap();
    let run = d.join("run");
    assert_eq!(
        cli(&["--config", s(&config), "train", "--data", s(&data), "--log-diagnostics", "--out", s(&run)]),
        0
    );
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.lines().all(|l| l.contains("\"branch\"")));
    assert_eq!(fs::read_to_string(run.join("diagnostics.jsonl")).unwrap().lines().count(), 2);
    assert!(run.join("checkpoint").join("model.toml").exists());

    let ev = d.join("ev");
    let ckpt = run.join("checkpoint");
    assert_eq!(cli(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&ev)]), 0);
    assert!(ev.join("report.json").exists());
    assert_eq!(cli(&["eval", "--data", s(&data), "--out", s(&ev)]), 1);
    let oracle = d.join("oracle");
    assert_eq!(
        cli(&["eval", "--data", s(&data), "--scorer", "oracle", "--resolution", "32", "--out", s(&oracle)]),
        0
    );
    let diag = d.join("diag");
    assert_eq!(cli(&["diagnose", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&diag)]), 0);
    assert!(diag.join("erf.png").exists() && diag.join("diagnostics.json").exists());

    let merged = d.join("merged.csv");
    assert_eq!(
        cli(&["report", s(&ev.join("report.csv")), s(&oracle.join("report.csv")), "--out", s(&merged)]),
        0
    );
    let rows = minimaxad::pipeline::report::read_rows(&merged).unwrap();
    // Two categories from each input, then the fresh mean.
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4].category, "Mean");
    for c in 0..8 {
        let mean = rows[..4].iter().map(|r| r.values[c]).sum::<f64>() / 4.0;
        assert!((rows[4].values[c] - mean).abs() < 0.051, "column {c}");
    }
    assert_eq!(cli(&["report", s(&d.join("nope.csv")), "--out", s(&merged)]), 2);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let desk = RunConfig::load(&root.join("desk.toml")).unwrap();
    assert_eq!(desk.model, minimaxad::model::ModelConfig::desk());
    assert_eq!(desk.train.loss_mode, LossMode::Adc);
    let full = RunConfig::load(&root.join("full_scale.toml")).unwrap();
    assert_eq!(full.model, minimaxad::model::ModelConfig::full_scale());
    assert_eq!(full.train.epochs, 160);
}
