//! Procedural texture datasets in the MVTec folder layout.
//!
//! Each category is one texture family with fixed colors and geometry;
//! images within a category differ by phase, offsets and pixel noise.
//! Anomalies are solid patches in a contrasting color whose masks are
//! exactly the painted pixels.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{DatasetSpec, Split};
use crate::{Error, Result};

pub const FAMILIES: [&str; 5] = ["striped", "blob", "checker", "gradient_noise", "dots"];
pub const DEFECTS: [&str; 3] = ["square", "ellipse", "scratch"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub categories: usize,
    pub normals_per_cat: usize,
    pub anomalies_per_cat: usize,
    pub good_test_per_cat: usize,
    pub resolution: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            categories: 5,
            normals_per_cat: 20,
            anomalies_per_cat: 10,
            good_test_per_cat: 10,
            resolution: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub defect: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    /// Number of mask pixels.
    pub area: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub name: String,
    pub family: String,
    pub train: usize,
    pub test_good: usize,
    pub anomalies: Vec<AnomalyRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub root: PathBuf,
    pub config: SynthConfig,
    pub categories: Vec<CategorySummary>,
}

impl SynthSummary {
    pub fn spec(&self, split: Split) -> DatasetSpec {
        DatasetSpec::new(&self.root, split, self.config.resolution)
    }
}

type Color = [f64; 3];

fn mix(a: Color, b: Color, t: f64) -> Color {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn dist(a: Color, b: Color) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-category constants drawn once from the category stream.
struct Texture {
    family: usize,
    fg: Color,
    bg: Color,
    angle: f64,
    period: f64,
}

impl Texture {
    fn new(family: usize, res: usize, rng: &mut ChaCha8Rng) -> Self {
        let bg: Color = [0, 1, 2].map(|_| rng.gen_range(0.15..0.85));
        let mut fg: Color = [0, 1, 2].map(|_| rng.gen_range(0.15..0.85));
        while dist(fg, bg) < 0.35 {
            fg = [0, 1, 2].map(|_| rng.gen_range(0.15..0.85));
        }
        let s = res as f64 / 64.0;
        Self {
            family,
            fg,
            bg,
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            period: rng.gen_range(10.0..16.0) * s,
        }
    }

    fn render(&self, res: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
        let s = res as f64 / 64.0;
        let mut t = Array2::<f64>::zeros((res, res));
        match FAMILIES[self.family] {
            "striped" => {
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let period = self.period * rng.gen_range(0.95..1.05);
                let (c, sn) = (self.angle.cos(), self.angle.sin());
                t.indexed_iter_mut().for_each(|((y, x), v)| {
                    let u = (x as f64 * c + y as f64 * sn) / period;
                    *v = 0.5 + 0.5 * (std::f64::consts::TAU * u + phase).sin();
                });
            }
            "blob" => {
                let n = rng.gen_range(4..8);
                let blobs: Vec<(f64, f64, f64)> = (0..n)
                    .map(|_| {
                        (
                            rng.gen_range(0.0..res as f64),
                            rng.gen_range(0.0..res as f64),
                            rng.gen_range(4.0..9.0) * s,
                        )
                    })
                    .collect();
                t.indexed_iter_mut().for_each(|((y, x), v)| {
                    *v = blobs
                        .iter()
                        .map(|&(by, bx, r)| {
                            let d2 = (y as f64 - by).powi(2) + (x as f64 - bx).powi(2);
                            (-d2 / (2.0 * r * r)).exp()
                        })
                        .fold(0.0, f64::max);
                });
            }
            "checker" => {
                let cell = (self.period).round().max(2.0);
                let (oy, ox) = (rng.gen_range(0.0..cell), rng.gen_range(0.0..cell));
                t.indexed_iter_mut().for_each(|((y, x), v)| {
                    let k = ((y as f64 + oy) / cell).floor() + ((x as f64 + ox) / cell).floor();
                    *v = (k.rem_euclid(2.0) == 1.0) as u8 as f64;
                });
            }
            "gradient_noise" => {
                let angle = self.angle + rng.gen_range(-0.2..0.2);
                let (c, sn) = (angle.cos(), angle.sin());
                let cell = 8.0 * s;
                let g = (res as f64 / cell).ceil() as usize + 2;
                let lattice = Array2::from_shape_fn((g, g), |_| rng.gen_range(-1.0..1.0));
                let smooth = |f: f64| f * f * (3.0 - 2.0 * f);
                t.indexed_iter_mut().for_each(|((y, x), v)| {
                    let (fy, fx) = (y as f64 / cell, x as f64 / cell);
                    let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
                    let (ty, tx) = (smooth(fy.fract()), smooth(fx.fract()));
                    let top = lattice[[iy, ix]] * (1.0 - tx) + lattice[[iy, ix + 1]] * tx;
                    let bot = lattice[[iy + 1, ix]] * (1.0 - tx) + lattice[[iy + 1, ix + 1]] * tx;
                    let noise = top * (1.0 - ty) + bot * ty;
                    let ramp = ((x as f64 - res as f64 / 2.0) * c + (y as f64 - res as f64 / 2.0) * sn) / res as f64;
                    *v = (0.5 + ramp + 0.2 * noise).clamp(0.0, 1.0);
                });
            }
            _ => {
                let spacing = self.period;
                let radius = 0.25 * spacing;
                let (oy, ox) = (rng.gen_range(0.0..spacing), rng.gen_range(0.0..spacing));
                t.indexed_iter_mut().for_each(|((y, x), v)| {
                    let dy = (y as f64 + oy).rem_euclid(spacing) - spacing / 2.0;
                    let dx = (x as f64 + ox).rem_euclid(spacing) - spacing / 2.0;
                    *v = ((radius - (dy * dy + dx * dx).sqrt()) + 0.5).clamp(0.0, 1.0);
                });
            }
        }
        let mut img = Array3::<f64>::zeros((res, res, 3));
        for ((y, x), &v) in t.indexed_iter() {
            let c = mix(self.bg, self.fg, v);
            for ch in 0..3 {
                img[[y, x, ch]] = (c[ch] + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0);
            }
        }
        img
    }

    fn contrasting(&self, rng: &mut ChaCha8Rng) -> Color {
        for _ in 0..200 {
            let c: Color = [0, 1, 2].map(|_| rng.gen_range(0.0..1.0));
            if dist(c, self.fg) > 0.5 && dist(c, self.bg) > 0.5 {
                return c;
            }
        }
        mix(self.fg, self.bg, 0.5).map(|v| 1.0 - v)
    }
}

/// Rasterize one defect shape of kind `defect` into a boolean mask.
fn defect_mask(defect: usize, res: usize, rng: &mut ChaCha8Rng) -> Array2<bool> {
    let s = res as f64 / 64.0;
    let margin = 2.0 * s;
    let mut mask = Array2::from_elem((res, res), false);
    match DEFECTS[defect] {
        "square" => {
            let side = (rng.gen_range(8.0..14.0) * s).round() as usize;
            let hi = res - side - margin as usize;
            let (y0, x0) = (rng.gen_range(margin as usize..=hi), rng.gen_range(margin as usize..=hi));
            mask.slice_mut(ndarray::s![y0..y0 + side, x0..x0 + side]).fill(true);
        }
        "ellipse" => {
            let (ry, rx) = (rng.gen_range(4.0..8.0) * s, rng.gen_range(4.0..8.0) * s);
            let cy = rng.gen_range(margin + ry..res as f64 - margin - ry);
            let cx = rng.gen_range(margin + rx..res as f64 - margin - rx);
            mask.indexed_iter_mut().for_each(|((y, x), m)| {
                let (dy, dx) = ((y as f64 + 0.5 - cy) / ry, (x as f64 + 0.5 - cx) / rx);
                *m = dy * dy + dx * dx <= 1.0;
            });
        }
        _ => {
            let len = rng.gen_range(14.0..26.0) * s;
            let half_width = 1.2 * s;
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let (dy, dx) = (theta.sin() * len / 2.0, theta.cos() * len / 2.0);
            let lo = margin + len / 2.0;
            let cy = rng.gen_range(lo..res as f64 - lo);
            let cx = rng.gen_range(lo..res as f64 - lo);
            let (ay, ax, by, bx) = (cy - dy, cx - dx, cy + dy, cx + dx);
            let l2 = (by - ay).powi(2) + (bx - ax).powi(2);
            mask.indexed_iter_mut().for_each(|((y, x), m)| {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let t = (((py - ay) * (by - ay) + (px - ax) * (bx - ax)) / l2).clamp(0.0, 1.0);
                let d = ((py - ay - t * (by - ay)).powi(2) + (px - ax - t * (bx - ax)).powi(2)).sqrt();
                *m = d <= half_width;
            });
        }
    }
    mask
}

fn write_rgb(img: &Array3<f64>, path: &Path) -> Result<()> {
    let (h, w, _) = img.dim();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb([0, 1, 2].map(|c| (img[[y as usize, x as usize, c]] * 255.0).round() as u8))
    });
    out.save(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

fn write_mask(mask: &Array2<bool>, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let out = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([if mask[[y as usize, x as usize]] { 255 } else { 0 }]));
    out.save(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn category_name(index: usize) -> String {
    let family = FAMILIES[index % FAMILIES.len()];
    match index / FAMILIES.len() {
        0 => family.to_string(),
        k => format!("{family}_{k}"),
    }
}

/// Write a synthetic dataset under `root`. One category gives a
/// feature-poor root, several give a feature-rich one.
pub fn synth_dataset(cfg: &SynthConfig, root: &Path) -> Result<SynthSummary> {
    if cfg.resolution == 0 || cfg.resolution % 32 != 0 {
        return Err(Error::Input(format!("resolution {} is not divisible by 32", cfg.resolution)));
    }
    if cfg.categories == 0 {
        return Err(Error::Config("at least one category is required".into()));
    }
    let res = cfg.resolution;
    let mut categories = Vec::with_capacity(cfg.categories);
    for cat in 0..cfg.categories {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cat as u64);
        let family = cat % FAMILIES.len();
        let name = category_name(cat);
        let dir = root.join(&name);
        let texture = Texture::new(family, res, &mut rng);

        let train_dir = dir.join("train").join("good");
        mkdir(&train_dir)?;
        for i in 0..cfg.normals_per_cat {
            write_rgb(&texture.render(res, &mut rng), &train_dir.join(format!("{i:03}.png")))?;
        }
        let good_dir = dir.join("test").join("good");
        mkdir(&good_dir)?;
        for i in 0..cfg.good_test_per_cat {
            write_rgb(&texture.render(res, &mut rng), &good_dir.join(format!("{i:03}.png")))?;
        }

        let mut anomalies = Vec::with_capacity(cfg.anomalies_per_cat);
        let mut per_defect = [0usize; DEFECTS.len()];
        for i in 0..cfg.anomalies_per_cat {
            let defect = i % DEFECTS.len();
            let idx = per_defect[defect];
            per_defect[defect] += 1;
            let mut img = texture.render(res, &mut rng);
            let mask = defect_mask(defect, res, &mut rng);
            let color = texture.contrasting(&mut rng);
            for ((y, x), &m) in mask.indexed_iter() {
                if m {
                    for ch in 0..3 {
                        img[[y, x, ch]] = (color[ch] + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0);
                    }
                }
            }
            let img_dir = dir.join("test").join(DEFECTS[defect]);
            let mask_dir = dir.join("ground_truth").join(DEFECTS[defect]);
            mkdir(&img_dir)?;
            mkdir(&mask_dir)?;
            let image = img_dir.join(format!("{idx:03}.png"));
            let mask_path = mask_dir.join(format!("{idx:03}_mask.png"));
            write_rgb(&img, &image)?;
            write_mask(&mask, &mask_path)?;
            anomalies.push(AnomalyRecord {
                defect: DEFECTS[defect].to_string(),
                image,
                mask: mask_path,
                area: mask.iter().filter(|&&m| m).count(),
            });
        }
        categories.push(CategorySummary {
            name,
            family: FAMILIES[family].to_string(),
            train: cfg.normals_per_cat,
            test_good: cfg.good_test_per_cat,
            anomalies,
        });
    }
    Ok(SynthSummary {
        root: root.to_path_buf(),
        config: *cfg,
        categories,
    })
}
