//! Folder datasets in the MVTec layout:
//! `<category>/train/good/*`, `<category>/test/<defect>/*` and
//! `<category>/ground_truth/<defect>/<stem>_mask.png`.
//!
//! A root that itself contains `train/` or `test/` is one category;
//! otherwise every sub-directory holding either is a category.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use ndarray::{Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

const IMAGE_EXTENSIONS: [&str; 1] = ["png"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub split: Split,
    /// Target `(height, width)`.
    pub resolution: (usize, usize),
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, split: Split, resolution: usize) -> Self {
        Self {
            root: root.into(),
            split,
            resolution: (resolution, resolution),
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }

    /// Human-readable identity used to annotate errors.
    pub fn identity(&self) -> String {
        let split = match self.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        format!("dataset {} ({split})", self.root.display())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub path: PathBuf,
    pub category: String,
    /// `good` for normal images.
    pub defect: String,
    /// Normalized `3 × H × W`.
    pub image: Array3<f32>,
    pub label: bool,
    /// Present for test samples; all-false for normal ones.
    pub mask: Option<Array2<bool>>,
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn dir_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Category directories under `root`, in lexicographic order.
pub fn categories(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory")));
    }
    if root.join("train").is_dir() || root.join("test").is_dir() {
        return Ok(vec![root.to_path_buf()]);
    }
    let cats: Vec<PathBuf> = read_dir_sorted(root)?
        .into_iter()
        .filter(|p| p.join("train").is_dir() || p.join("test").is_dir())
        .collect();
    if cats.is_empty() {
        return Err(Error::Dataset(format!("no category directories under {}", root.display())));
    }
    Ok(cats)
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

fn load_image(path: &Path, spec: &DatasetSpec) -> Result<(Array3<f32>, (u32, u32))> {
    let img = open(path)?.to_rgb8();
    let native = img.dimensions();
    let (h, w) = spec.resolution;
    let img = if native == (w as u32, h as u32) {
        img
    } else {
        image::imageops::resize(&img, w as u32, h as u32, FilterType::Triangle)
    };
    let mut out = Array3::<f32>::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            let v = px.0[c] as f64 / 255.0;
            out[[c, y as usize, x as usize]] = ((v - spec.mean[c]) / spec.std[c]) as f32;
        }
    }
    Ok((out, native))
}

fn load_mask(path: &Path, native: (u32, u32), spec: &DatasetSpec) -> Result<Array2<bool>> {
    let img = open(path)?.to_luma8();
    if img.dimensions() != native {
        return Err(Error::Dataset(format!(
            "mask {} is {:?} but its image is {:?}",
            path.display(),
            img.dimensions(),
            native
        )));
    }
    let (h, w) = spec.resolution;
    let img = if native == (w as u32, h as u32) {
        img
    } else {
        image::imageops::resize(&img, w as u32, h as u32, FilterType::Triangle)
    };
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        img.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0 >= 0.5
    }))
}

/// Load every sample of `spec`, ordered by category then path.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    crate::model::ModelConfig::check_resolution(spec.resolution.0, spec.resolution.1)?;
    let mut out = Vec::new();
    for cat_dir in categories(&spec.root)? {
        let category = dir_name(&cat_dir);
        match spec.split {
            Split::Train => {
                let dir = cat_dir.join("train").join("good");
                if !dir.is_dir() {
                    return Err(Error::Dataset(format!("missing {}", dir.display())));
                }
                for path in read_dir_sorted(&dir)?.into_iter().filter(|p| is_image(p)) {
                    let (image, _) = load_image(&path, spec)?;
                    out.push(Sample {
                        path,
                        category: category.clone(),
                        defect: "good".into(),
                        image,
                        label: false,
                        mask: None,
                    });
                }
            }
            Split::Test => {
                let dir = cat_dir.join("test");
                if !dir.is_dir() {
                    return Err(Error::Dataset(format!("missing {}", dir.display())));
                }
                for defect_dir in read_dir_sorted(&dir)?.into_iter().filter(|p| p.is_dir()) {
                    let defect = dir_name(&defect_dir);
                    let label = defect != "good";
                    for path in read_dir_sorted(&defect_dir)?.into_iter().filter(|p| is_image(p)) {
                        let (image, native) = load_image(&path, spec)?;
                        let mask = if label {
                            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                            let mask_path = cat_dir.join("ground_truth").join(&defect).join(format!("{stem}_mask.png"));
                            if !mask_path.is_file() {
                                return Err(Error::Dataset(format!(
                                    "missing mask {} for {}",
                                    mask_path.display(),
                                    path.display()
                                )));
                            }
                            load_mask(&mask_path, native, spec)?
                        } else {
                            Array2::from_elem(spec.resolution, false)
                        };
                        out.push(Sample {
                            path,
                            category: category.clone(),
                            defect: defect.clone(),
                            image,
                            label,
                            mask: Some(mask),
                        });
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("{} contains no images", spec.identity())));
    }
    Ok(out)
}

/// Stack sample images into a `batch × 3 × H × W` tensor.
pub fn image_batch<T: Scalar>(samples: &[&Sample]) -> Array4<T> {
    let views: Vec<_> = samples.iter().map(|s| s.image.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views)
        .expect("samples share one resolution")
        .mapv(|v| T::lit(v as f64))
}
