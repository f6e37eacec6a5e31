//! Brute-force reference implementations written directly from the
//! definitions, sharing no code with the library.

use std::collections::VecDeque;

use ndarray::{Array2, Array3};

/// Linear-interpolation quantile at position `p (n - 1)` of the sorted data.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() as f64 - 1.0);
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    let t = pos - i as f64;
    if t == 0.0 {
        v[i]
    } else {
        v[i] + (v[j] - v[i]) * t
    }
}

fn masked_mean(sq: &[f64], threshold: f64) -> (f64, usize) {
    let kept: Vec<f64> = sq.iter().copied().filter(|&v| v >= threshold).collect();
    if kept.is_empty() {
        (0.0, 0)
    } else {
        (kept.iter().sum::<f64>() / kept.len() as f64, kept.len())
    }
}

pub fn hard_mined(s: &Array3<f64>, p_lim: f64) -> f64 {
    let sq: Vec<f64> = s.iter().map(|v| v * v).collect();
    masked_mean(&sq, quantile(&sq, p_lim)).0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdcOracle {
    pub loss: f64,
    pub alpha_branch: bool,
    pub threshold: f64,
    pub active: usize,
}

pub fn adc(s: &Array3<f64>, p_hard: f64, p_lim: f64, alpha_of_squared: bool) -> AdcOracle {
    let flat: Vec<f64> = s.iter().copied().collect();
    let sq: Vec<f64> = flat.iter().map(|v| v * v).collect();
    let n = flat.len() as f64;
    let alpha = quantile(if alpha_of_squared { &sq } else { &flat }, p_hard);
    let beta = quantile(&sq, p_lim);
    let mean = flat.iter().sum::<f64>() / n;
    let var = flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let a = sq.iter().filter(|&&v| v >= alpha - var).count() as f64;
    let b = n * (1.0 - p_lim);
    let alpha_branch = a >= b;
    let threshold = if alpha_branch { alpha - var } else { beta - var };
    let (loss, active) = masked_mean(&sq, threshold);
    AdcOracle {
        loss,
        alpha_branch,
        threshold,
        active,
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by enumerating all pairs.
pub fn auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// `(precision, recall)` of the rule `score >= t` for every distinct `t`,
/// highest threshold first.
fn pr_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let mut ts = scores.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    ts.iter()
        .map(|&t| {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (&s, &l) in scores.iter().zip(labels) {
                if s >= t {
                    if l {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            (tp / (tp + fp), tp / pos)
        })
        .collect()
}

/// Σ (R_k - R_{k-1}) P_k over distinct thresholds.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let mut prev_r = 0.0;
    let mut ap = 0.0;
    for (p, r) in pr_points(scores, labels) {
        ap += (r - prev_r) * p;
        prev_r = r;
    }
    ap
}

pub fn f1_max(scores: &[f64], labels: &[bool]) -> f64 {
    pr_points(scores, labels)
        .into_iter()
        .map(|(p, r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        .fold(0.0, f64::max)
}

/// Connected components of `mask` by breadth-first search.
pub fn regions(mask: &Array2<bool>, eight: bool) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut out = Vec::new();
    let steps: Vec<(isize, isize)> = if eight {
        vec![(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    } else {
        vec![(-1, 0), (0, -1), (0, 1), (1, 0)]
    };
    for y in 0..h {
        for x in 0..w {
            if !mask[[y, x]] || seen[[y, x]] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([(y, x)]);
            seen[[y, x]] = true;
            while let Some((cy, cx)) = queue.pop_front() {
                comp.push((cy, cx));
                for &(dy, dx) in &steps {
                    let (ny, nx) = (cy as isize + dy, cx as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    if mask[[ny, nx]] && !seen[[ny, nx]] {
                        seen[[ny, nx]] = true;
                        queue.push_back((ny, nx));
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

/// Area under the PRO curve up to `cap`, normalized by `cap`, evaluating
/// every distinct score as a threshold.
pub fn aupro(scores: &[Array2<f64>], masks: &[Array2<bool>], cap: f64) -> f64 {
    let comps: Vec<(usize, Vec<(usize, usize)>)> = masks
        .iter()
        .enumerate()
        .flat_map(|(i, m)| regions(m, true).into_iter().map(move |c| (i, c)))
        .collect();
    let negatives: f64 = masks.iter().map(|m| m.iter().filter(|&&v| !v).count() as f64).sum();
    let mut ts: Vec<f64> = scores.iter().flat_map(|s| s.iter().copied()).collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();

    let mut curve = vec![(0.0, 0.0)];
    for &t in &ts {
        let mut fp = 0.0;
        for (s, m) in scores.iter().zip(masks) {
            for (&v, &l) in s.iter().zip(m.iter()) {
                if !l && v >= t {
                    fp += 1.0;
                }
            }
        }
        let pro = comps
            .iter()
            .map(|(i, c)| c.iter().filter(|&&(y, x)| scores[*i][[y, x]] >= t).count() as f64 / c.len() as f64)
            .sum::<f64>()
            / comps.len() as f64;
        curve.push((fp / negatives, pro));
    }

    let mut area = 0.0;
    for win in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (win[0], win[1]);
        if x0 >= cap {
            break;
        }
        if x1 <= cap {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_cap = y0 + (y1 - y0) * (cap - x0) / (x1 - x0);
            area += (cap - x0) * (y0 + y_cap) / 2.0;
        }
    }
    area / cap
}

/// Discrete Gaussian smoothing with reflect padding, by direct summation.
pub fn gaussian_smooth(map: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let r = (4.0 * sigma + 0.5) as isize;
    let weights: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let (h, w) = map.dim();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let wgt = weights[(dy + r) as usize] * weights[(dx + r) as usize] / (total * total);
                acc += wgt * map[[reflect(y as isize + dy, h), reflect(x as isize + dx, w)]];
            }
        }
        acc
    })
}
