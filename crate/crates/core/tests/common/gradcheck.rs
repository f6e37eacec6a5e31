//! Central finite-difference checks of hand-written backward passes (f64).
//!
//! A coordinate passes when
//! `|analytic - numeric| <= REL_TOL * max(|a|, |n|) + ABS_FLOOR`; the floor
//! only matters for gradients that are zero up to rounding.

use minimaxad::losses::{adc_loss, adc_loss_with_grad, global_cosine_loss_with_grad, local_loss_with_grad, MiningConfig};
use minimaxad::model::{Block, BlockSpec, FeaturePyramid, Origin};
use minimaxad::nn::{Grn, Module};
use ndarray::{Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const REL_TOL: f64 = 1e-3;
pub const ABS_FLOOR: f64 = 1e-8;
const H: f64 = 1e-5;

#[derive(Debug, Clone, Default)]
pub struct Check {
    pub instances: usize,
    pub coords: usize,
    /// Largest `|a - n| / (REL_TOL * max(|a|, |n|) + ABS_FLOOR)`; ≤ 1 passes.
    pub worst: f64,
    pub failure: Option<String>,
}

impl Check {
    pub fn compare(&mut self, what: &str, analytic: f64, numeric: f64) {
        self.coords += 1;
        let ratio = (analytic - numeric).abs() / (REL_TOL * analytic.abs().max(numeric.abs()) + ABS_FLOOR);
        if !(ratio <= 1.0) && self.failure.is_none() {
            self.failure = Some(format!("{what}: analytic {analytic:e} vs numeric {numeric:e}"));
        }
        if !(ratio <= self.worst) {
            self.worst = ratio;
        }
    }

    pub fn fail(&mut self, msg: String) {
        if self.failure.is_none() {
            self.failure = Some(msg);
        }
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.coords > 0
    }

    pub fn describe(&self) -> String {
        match &self.failure {
            None => format!(
                "{} instances, {} coordinates, worst ratio {:.3}",
                self.instances, self.coords, self.worst
            ),
            Some(f) => format!("{} instances; first failure {f}", self.instances),
        }
    }
}

/// Parameter tensors of `m` as `(name, len)` in visit order.
pub fn param_layout<M: Module<f64>>(m: &M) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    m.visit_params("", &mut |n, p| out.push((n.to_string(), p.len())));
    out
}

fn nudge<M: Module<f64>>(m: &mut M, which: usize, idx: usize, delta: f64) {
    let mut k = 0;
    m.visit_params_mut("", &mut |_, p| {
        if k == which {
            p.values_mut()[idx] += delta;
        }
        k += 1;
    });
}

fn grad_of<M: Module<f64>>(m: &M, which: usize, idx: usize) -> f64 {
    let mut k = 0;
    let mut g = f64::NAN;
    m.visit_params("", &mut |_, p| {
        if k == which {
            g = p.grads()[idx];
        }
        k += 1;
    });
    g
}

/// Compare accumulated parameter gradients of `m` against central
/// differences of `eval`, on up to `picks` random coordinates per tensor.
pub fn check_params<M: Module<f64>>(
    m: &mut M,
    eval: &dyn Fn(&M) -> f64,
    picks: usize,
    rng: &mut ChaCha8Rng,
    check: &mut Check,
) {
    for (which, (name, len)) in param_layout(m).into_iter().enumerate() {
        let idxs: Vec<usize> = if len <= picks {
            (0..len).collect()
        } else {
            (0..picks).map(|_| rng.gen_range(0..len)).collect()
        };
        for idx in idxs {
            let analytic = grad_of(m, which, idx);
            nudge(m, which, idx, H);
            let up = eval(m);
            nudge(m, which, idx, -2.0 * H);
            let down = eval(m);
            nudge(m, which, idx, H);
            check.compare(&format!("{name}[{idx}]"), analytic, (up - down) / (2.0 * H));
        }
    }
}

/// Compare `analytic` (gradient w.r.t. `x`) against central differences of
/// `eval` on up to `picks` random coordinates.
pub fn check_input<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    analytic: &ndarray::Array<f64, D>,
    eval: &dyn Fn(&ndarray::Array<f64, D>) -> f64,
    picks: usize,
    rng: &mut ChaCha8Rng,
    check: &mut Check,
) {
    let n = x.len();
    let idxs: Vec<usize> = if n <= picks {
        (0..n).collect()
    } else {
        (0..picks).map(|_| rng.gen_range(0..n)).collect()
    };
    let a = analytic.as_slice().expect("standard layout");
    for idx in idxs {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[idx] += H;
        let up = eval(&xp);
        xp.as_slice_mut().unwrap()[idx] -= 2.0 * H;
        let down = eval(&xp);
        check.compare(&format!("input[{idx}]"), a[idx], (up - down) / (2.0 * H));
    }
}

/// Weighted sum used as a scalar probe of a tensor-valued function.
pub fn probe<D: ndarray::Dimension>(y: &ndarray::Array<f64, D>, w: &ndarray::Array<f64, D>) -> f64 {
    y.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
}

fn randomize<M: Module<f64>>(m: &mut M, rng: &mut ChaCha8Rng, suffixes: &[&str], lo: f64, hi: f64) {
    m.visit_params_mut("", &mut |name, p| {
        if suffixes.iter().any(|s| name.ends_with(s)) {
            p.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(lo..hi));
        }
    });
}

/// Give every zero-initialized or unit-initialized parameter a random value
/// so that all paths carry gradient.
pub fn randomize_affine<M: Module<f64>>(m: &mut M, rng: &mut ChaCha8Rng) {
    randomize(m, rng, &["grn.gamma", "grn.beta", "dw.bias", "norm.beta"], -0.5, 0.5);
    randomize(m, rng, &["norm.gamma"], 0.5, 1.5);
}

pub fn grn(instances: usize, seed: u64) -> Check {
    let mut rng = super::rng(seed);
    let mut check = Check::default();
    for _ in 0..instances {
        let shape = (
            rng.gen_range(1..4),
            rng.gen_range(2..7),
            rng.gen_range(2..6),
            rng.gen_range(2..6),
        );
        let x = super::uniform4(&mut rng, shape, -1.0, 1.0);
        let w = super::uniform4(&mut rng, shape, -1.0, 1.0);
        let mut unit = Grn::<f64>::new(shape.1);
        randomize(&mut unit, &mut rng, &["gamma", "beta"], -1.0, 1.0);
        let (_, cache) = unit.forward(&x);
        let dx = unit.backward(&x, &cache, &w);
        check_params(&mut unit, &|u: &Grn<f64>| probe(&u.forward(&x).0, &w), 64, &mut rng, &mut check);
        let unit_ref = unit.clone();
        check_input(&x, &dx, &|xp| probe(&unit_ref.forward(xp).0, &w), 64, &mut rng, &mut check);
        check.instances += 1;
    }
    check
}

/// Gradient check of a LarK (`lark = true`) or SmaK block.
pub fn block(lark: bool, instances: usize, seed: u64) -> Check {
    let mut rng = super::rng(seed);
    let mut check = Check::default();
    for _ in 0..instances {
        let c = rng.gen_range(2..5);
        let spec = if lark { BlockSpec::lark(c, 13) } else { BlockSpec::smak(c) };
        let mut b = Block::<f64>::new(spec, 2, &mut rng).unwrap();
        randomize_affine(&mut b, &mut rng);
        let shape = (rng.gen_range(1..3), c, rng.gen_range(5..10), rng.gen_range(5..10));
        let x = super::uniform4(&mut rng, shape, -1.0, 1.0);
        let w = super::uniform4(&mut rng, shape, -1.0, 1.0);
        let (_, cache) = b.forward(&x);
        let dx = b.backward(&cache, &w);
        check_params(&mut b, &|m: &Block<f64>| probe(&m.forward(&x).0, &w), 8, &mut rng, &mut check);
        let b_ref = b.clone();
        check_input(&x, &dx, &|xp| probe(&b_ref.forward(xp).0, &w), 16, &mut rng, &mut check);
        check.instances += 1;
    }
    check
}

pub fn random_pyramid_pair(rng: &mut ChaCha8Rng, base: usize) -> (FeaturePyramid<f64>, FeaturePyramid<f64>) {
    let b = rng.gen_range(1..4);
    let c0 = rng.gen_range(1..5);
    let levels: Vec<(usize, usize, usize, usize)> = (0..3).map(|k| (b, c0 << k, base >> k, base >> k)).collect();
    let enc = FeaturePyramid::new(
        std::array::from_fn(|k| super::uniform4(rng, levels[k], -1.0, 1.0)),
        Origin::Encoder,
    );
    let dec = FeaturePyramid::new(
        std::array::from_fn(|k| super::uniform4(rng, levels[k], -1.0, 1.0)),
        Origin::Decoder,
    );
    (enc, dec)
}

pub fn global_loss(instances: usize, seed: u64) -> Check {
    let mut rng = super::rng(seed);
    let mut check = Check::default();
    for _ in 0..instances {
        let (enc, dec) = random_pyramid_pair(&mut rng, 8);
        let (_, grads) = global_cosine_loss_with_grad(&enc, &dec).unwrap();
        for k in 0..3 {
            let eval = |lvl: &Array4<f64>| {
                let mut d = dec.clone();
                d.levels[k] = lvl.clone();
                global_cosine_loss_with_grad(&enc, &d).unwrap().0
            };
            check_input(&dec.levels[k], &grads[k], &eval, 24, &mut rng, &mut check);
        }
        check.instances += 1;
    }
    check
}

pub fn local_loss(instances: usize, seed: u64) -> Check {
    let mut rng = super::rng(seed);
    let mut check = Check::default();
    for _ in 0..instances {
        let shape = (rng.gen_range(1..4), rng.gen_range(2..10), rng.gen_range(2..10));
        let s = super::uniform3(&mut rng, shape, 0.0, 6.0);
        let (_, g) = local_loss_with_grad(&s);
        check_input(&s, &g, &|sp| local_loss_with_grad(sp).0, 64, &mut rng, &mut check);
        check.instances += 1;
    }
    check
}

pub fn random_mining(rng: &mut ChaCha8Rng) -> MiningConfig {
    MiningConfig {
        p_hard: rng.gen_range(0.5..1.0),
        p_lim: rng.gen_range(0.5..1.0),
        alpha_of_squared: rng.gen_bool(0.5),
    }
}

/// Active pixels: analytic vs numeric. Excluded pixels: analytic exactly 0.
pub fn adc(instances: usize, seed: u64) -> Check {
    let mut rng = super::rng(seed);
    let mut check = Check::default();
    for _ in 0..instances {
        let shape = (rng.gen_range(1..4), rng.gen_range(4..12), rng.gen_range(4..12));
        let s = super::uniform3(&mut rng, shape, 0.0, 6.0);
        let cfg = random_mining(&mut rng);
        let (_, diag, grad) = adc_loss_with_grad(&s, &cfg).unwrap();
        let mut active = 0;
        for (idx, (&v, &g)) in s.iter().zip(grad.iter()).enumerate() {
            if v * v >= diag.threshold {
                active += 1;
                let eval = |delta: f64| {
                    let mut sp: Array3<f64> = s.clone();
                    sp.as_slice_mut().unwrap()[idx] += delta;
                    adc_loss(&sp, &cfg).unwrap()
                };
                let (up, du) = eval(H);
                let (down, dd) = eval(-H);
                // The quantile thresholds move with S; skip the rare pixel
                // whose nudge changes the active set.
                if du.active_fraction != diag.active_fraction || dd.active_fraction != diag.active_fraction {
                    continue;
                }
                check.compare(&format!("S[{idx}]"), g, (up - down) / (2.0 * H));
            } else if g != 0.0 {
                check.fail(format!("excluded pixel {idx} has gradient {g:e}"));
            }
        }
        if active == 0 {
            check.fail("instance without active pixels".into());
        }
        check.instances += 1;
    }
    check
}
