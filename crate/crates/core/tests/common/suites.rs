//! Randomized oracle comparisons shared by the integration tests and the
//! acceptance target. Each suite returns a one-line summary on success and
//! the first discrepancy on failure.

use minimaxad::losses::{adc_loss, hard_mined_loss, AdcBranch};
use minimaxad::metrics::{aupro, auroc, average_precision, f1_max, AuproConfig};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::random_mining;
use super::oracles;

pub type Outcome = Result<String, String>;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Random map with occasional exact ties.
fn random_map(rng: &mut ChaCha8Rng) -> Array3<f64> {
    let shape = (rng.gen_range(1..=4), rng.gen_range(1..=64), rng.gen_range(1..=64));
    let quantized = rng.gen_bool(0.3);
    Array3::from_shape_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.0..6.0);
        if quantized {
            (v * 4.0).round() / 4.0
        } else {
            v
        }
    })
}

pub fn loss_oracles(instances: usize, seed: u64) -> Outcome {
    let mut rng = super::rng(seed);
    let mut worst: f64 = 0.0;
    let mut beta_branches = 0;
    for i in 0..instances {
        let s = random_map(&mut rng);
        let cfg = if rng.gen_bool(0.25) {
            minimaxad::losses::MiningConfig::default()
        } else {
            random_mining(&mut rng)
        };
        let (loss, diag) = adc_loss(&s, &cfg).map_err(|e| e.to_string())?;
        let o = oracles::adc(&s, cfg.p_hard, cfg.p_lim, cfg.alpha_of_squared);
        let alpha_branch = diag.branch == AdcBranch::Alpha;
        if alpha_branch != o.alpha_branch {
            return Err(format!("instance {i}: branch {:?} vs oracle alpha={}", diag.branch, o.alpha_branch));
        }
        if !alpha_branch {
            beta_branches += 1;
        }
        if !close(loss, o.loss, 1e-12) || !close(diag.threshold, o.threshold, 1e-12) {
            return Err(format!(
                "instance {i}: adc loss {loss} / threshold {} vs oracle {} / {}",
                diag.threshold, o.loss, o.threshold
            ));
        }
        let active = (diag.active_fraction * s.len() as f64).round() as usize;
        if active != o.active {
            return Err(format!("instance {i}: {active} active pixels vs oracle {}", o.active));
        }
        let hm = hard_mined_loss(&s, cfg.p_lim).map_err(|e| e.to_string())?;
        let ho = oracles::hard_mined(&s, cfg.p_lim);
        if !close(hm, ho, 1e-12) {
            return Err(format!("instance {i}: hard-mined {hm} vs oracle {ho}"));
        }
        worst = worst.max((loss - o.loss).abs()).max((hm - ho).abs());
    }
    Ok(format!(
        "{instances} instances ({beta_branches} beta-branch), max abs diff {worst:.1e}"
    ))
}

fn random_ranking(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.gen_range(2..=200);
    let levels = [0u32, 3, 10, 1000][rng.gen_range(0..4)];
    let rate = rng.gen_range(0.05..0.95);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(rate)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let v: f64 = rng.gen_range(0.0..1.0) + if l { rng.gen_range(0.0..0.5) } else { 0.0 };
            if levels == 0 {
                v
            } else {
                (v * levels as f64).round() / levels as f64
            }
        })
        .collect();
    (scores, labels)
}

pub fn ranking_oracles(instances: usize, seed: u64) -> Outcome {
    let mut rng = super::rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let (s, l) = random_ranking(&mut rng);
        let pairs = [
            ("auroc", auroc(&s, &l), oracles::auroc(&s, &l)),
            ("ap", average_precision(&s, &l), oracles::average_precision(&s, &l)),
            ("f1max", f1_max(&s, &l), oracles::f1_max(&s, &l)),
        ];
        for (name, got, want) in pairs {
            let got = got.map_err(|e| format!("instance {i}: {name}: {e}"))?;
            if (got - want).abs() > 1e-12 {
                return Err(format!("instance {i}: {name} {got} vs oracle {want}"));
            }
            worst = worst.max((got - want).abs());
        }
    }
    Ok(format!("{instances} instances, max abs diff {worst:.1e}"))
}

/// A few random rectangles and scattered pixels.
fn random_mask(rng: &mut ChaCha8Rng, size: usize) -> Array2<bool> {
    let mut m = Array2::from_elem((size, size), false);
    for _ in 0..rng.gen_range(0..3) {
        let (h, w) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let (y, x) = (rng.gen_range(0..size - h), rng.gen_range(0..size - w));
        m.slice_mut(ndarray::s![y..y + h, x..x + w]).fill(true);
    }
    for _ in 0..rng.gen_range(0..4) {
        m[[rng.gen_range(0..size), rng.gen_range(0..size)]] = true;
    }
    m
}

pub fn aupro_oracles(instances: usize, seed: u64) -> Outcome {
    let mut rng = super::rng(seed);
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < instances {
        let n = rng.gen_range(1..=3);
        let masks: Vec<Array2<bool>> = (0..n).map(|_| random_mask(&mut rng, 16)).collect();
        if !masks.iter().any(|m| m.iter().any(|&v| v)) || masks.iter().all(|m| m.iter().all(|&v| v)) {
            continue;
        }
        let levels = [0.0, 8.0, 64.0][rng.gen_range(0..3)];
        let scores: Vec<Array2<f64>> = masks
            .iter()
            .map(|m| {
                m.mapv(|l| {
                    let v: f64 = rng.gen_range(0.0..1.0) + if l { rng.gen_range(0.0..0.6) } else { 0.0 };
                    if levels == 0.0 {
                        v
                    } else {
                        (v * levels).round() / levels
                    }
                })
            })
            .collect();
        let cap = [0.3, 1.0, rng.gen_range(0.05..1.0)][rng.gen_range(0..3)];
        let cfg = AuproConfig {
            fpr_cap: cap,
            ..AuproConfig::default()
        };
        let got = aupro(&scores, &masks, &cfg).map_err(|e| format!("instance {i}: {e}"))?;
        let want = oracles::aupro(&scores, &masks, cap);
        if (got - want).abs() > 1e-9 {
            return Err(format!("instance {i}: aupro {got} vs oracle {want} (cap {cap})"));
        }
        worst = worst.max((got - want).abs());
        i += 1;
    }
    Ok(format!("{instances} instances of 16x16 maps, max abs diff {worst:.1e}"))
}

fn random_config(rng: &mut ChaCha8Rng) -> minimaxad::model::ModelConfig {
    use minimaxad::model::StageDepth;
    let c0 = [2, 4, 6][rng.gen_range(0..3)];
    let mut depth = || {
        let lark = rng.gen_range(0..2);
        StageDepth {
            lark,
            smak: if lark == 0 { 1 } else { rng.gen_range(0..2) },
        }
    };
    let stage_depths = vec![depth(), depth(), depth()];
    minimaxad::model::ModelConfig {
        stage_depths,
        stage_channels: vec![c0, 2 * c0, 4 * c0],
        bottleneck_depth: rng.gen_range(1..3),
        input_resolution: [(32, 32), (64, 64), (32, 64)][rng.gen_range(0..3)],
        lark_kernel: 13,
        expansion: rng.gen_range(1..4),
    }
}

/// Shape mirroring, GRN zero-init identity, reparameterization equivalence,
/// map bounds and zero maps under exact reconstruction.
pub fn structural(configs: usize, seed: u64) -> Outcome {
    use minimaxad::anomaly::AnomalyMap;
    use minimaxad::model::{Block, BlockSpec, Model};
    use minimaxad::nn::{Grn, Module};

    let mut rng = super::rng(seed);
    for i in 0..configs {
        let cfg = random_config(&mut rng);
        let model = Model::<f64>::new(cfg.clone(), rng.gen()).map_err(|e| e.to_string())?;
        let mut grn_nonzero = false;
        model.visit_params("", &mut |n, p| {
            if n.contains("grn.") && p.values().iter().any(|&v| v != 0.0) {
                grn_nonzero = true;
            }
        });
        if grn_nonzero {
            return Err(format!("config {i}: GRN parameters not zero at initialization"));
        }
        let (h, w) = cfg.input_resolution;
        let batch = rng.gen_range(1..3);
        let x = super::uniform4(&mut rng, (batch, 3, h, w), -2.0, 2.0);
        let (enc, dec) = model.forward(&x).map_err(|e| e.to_string())?;
        for k in 0..3 {
            let want = (x.dim().0, cfg.stage_channels[k], h >> (2 + k), w >> (2 + k));
            if enc.levels[k].dim() != want || dec.levels[k].dim() != want {
                return Err(format!(
                    "config {i}: level {k} enc {:?} dec {:?} expected {want:?}",
                    enc.levels[k].dim(),
                    dec.levels[k].dim()
                ));
            }
        }
        let map = AnomalyMap::from_pyramids(&enc, &dec, (h, w)).map_err(|e| e.to_string())?;
        if map.per_level.iter().flatten().any(|&v| !(0.0..=2.0).contains(&v))
            || map.aggregated.iter().any(|&v| !(0.0..=6.0).contains(&v))
        {
            return Err(format!("config {i}: anomaly map outside its bounds"));
        }
        let same = AnomalyMap::from_pyramids(&enc, &enc, (h, w)).map_err(|e| e.to_string())?;
        let peak = same.aggregated.iter().copied().fold(0.0, f64::max);
        if peak > 1e-12 {
            return Err(format!("config {i}: exact reconstruction gives S up to {peak:e}"));
        }
    }

    for i in 0..20 {
        let c = rng.gen_range(1..6);
        let shape = (rng.gen_range(1..3), c, rng.gen_range(1..9), rng.gen_range(1..9));
        let x = super::uniform4(&mut rng, shape, -3.0, 3.0);
        if Grn::<f64>::new(c).forward(&x).0 != x {
            return Err(format!("grn instance {i}: zero-initialized unit is not the identity"));
        }
    }

    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let c = rng.gen_range(1..5);
        let (h, w) = (rng.gen_range(4..20), rng.gen_range(4..20));
        let b32 = Block::<f32>::new(BlockSpec::lark(c, 13), 2, &mut rng).map_err(|e| e.to_string())?;
        let x: ndarray::Array4<f32> = super::uniform4(&mut rng, (1, c, h, w), -1.0, 1.0).mapv(|v| v as f32);
        let a = b32.depthwise_branches(&x);
        let m = b32.depthwise_merged(&x);
        let scale = a.iter().fold(0.0f32, |s, v| s.max(v.abs())).max(f32::MIN_POSITIVE);
        let err = a.iter().zip(m.iter()).fold(0.0f32, |s, (p, q)| s.max((p - q).abs())) / scale;
        if err > 1e-5 {
            return Err(format!("reparam instance {i}: relative difference {err:e}"));
        }
        worst = worst.max(err as f64);
    }
    Ok(format!(
        "{configs} random configs, 20 GRN and 20 f32 reparameterization instances (worst {worst:.1e})"
    ))
}
