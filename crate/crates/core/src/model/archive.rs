//! Weight archive: a directory holding `manifest.txt` and `weights.bin`.
//!
//! The manifest has one line per tensor, `name shape dtype offset`, where
//! shape is `x`-separated (`32x3x3x3`), dtype is `f32` or `f64`, and offset
//! is the byte position of the tensor inside the little-endian blob. Lines
//! starting with `#` are comments.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::nn::Module;
use crate::{Error, Result, Scalar};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

impl ArchiveEntry {
    fn byte_len(&self) -> Result<usize> {
        let width = match self.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Archive(format!("unsupported dtype {other} for {}", self.name))),
        };
        Ok(self.shape.iter().product::<usize>() * width)
    }
}

fn format_shape(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn save_archive<T: Scalar, M: Module<T> + ?Sized>(dir: &Path, module: &M) -> Result<Vec<ArchiveEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    module.visit_params("", &mut |name, p| {
        let entry = ArchiveEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            dtype: T::DTYPE.to_string(),
            offset: blob.len(),
        };
        for &v in p.value.iter() {
            v.write_le(&mut blob);
        }
        entries.push(entry);
    });
    let mut manifest = String::from("# minimaxad weight archive v1\n# name shape dtype offset\n");
    for e in &entries {
        manifest.push_str(&format!("{} {} {} {}\n", e.name, format_shape(&e.shape), e.dtype, e.offset));
    }
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, blob).map_err(|e| Error::io(&wpath, e))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ArchiveEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Archive(format!("{}:{}: malformed line `{line}`", path.display(), no + 1));
        if fields.len() != 4 {
            return Err(bad());
        }
        let shape = fields[1]
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        entries.push(ArchiveEntry {
            name: fields[0].to_string(),
            shape,
            dtype: fields[2].to_string(),
            offset: fields[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(entries)
}

/// Load every parameter of `module` from the archive. Names and shapes must
/// match exactly; extra archive entries are an error as well.
pub fn load_archive<T: Scalar, M: Module<T> + ?Sized>(dir: &Path, module: &mut M) -> Result<()> {
    let entries = read_manifest(dir)?;
    let wpath = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let mut by_name: HashMap<&str, &ArchiveEntry> = HashMap::new();
    for e in &entries {
        if by_name.insert(&e.name, e).is_some() {
            return Err(Error::Archive(format!("duplicate tensor {}", e.name)));
        }
        if e.offset + e.byte_len()? > blob.len() {
            return Err(Error::Archive(format!("tensor {} runs past the end of the blob", e.name)));
        }
    }
    let mut err = None;
    let mut seen = 0usize;
    module.visit_params_mut("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        let Some(e) = by_name.get(name) else {
            err = Some(Error::Archive(format!("missing tensor {name}")));
            return;
        };
        if e.shape != p.value.shape() {
            err = Some(Error::Archive(format!(
                "tensor {name}: archive shape {:?} vs model {:?}",
                e.shape,
                p.value.shape()
            )));
            return;
        }
        seen += 1;
        let bytes = &blob[e.offset..];
        for (i, v) in p.value.iter_mut().enumerate() {
            *v = match e.dtype.as_str() {
                "f32" => T::lit(f32::read_le(&bytes[i * 4..]) as f64),
                _ => T::lit(f64::read_le(&bytes[i * 8..])),
            };
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if seen != entries.len() {
        return Err(Error::Archive(format!(
            "archive holds {} tensors, model uses {seen}",
            entries.len()
        )));
    }
    Ok(())
}
