//! On-disk dataset layout: `<root>/<class>/{normal,anomaly,mask}/*.png`,
//! anomaly images paired with masks by file stem.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::io::{read_image, read_mask};
use crate::trainer::{split_train_test, AnomalyExemplar};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyFiles {
    pub stem: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLayout {
    pub name: String,
    /// Sorted by file name.
    pub normals: Vec<PathBuf>,
    /// Sorted by stem.
    pub anomalies: Vec<AnomalyFiles>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub classes: Vec<ClassLayout>,
}

fn pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("missing directory {}", dir.display())));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png {
            continue;
        }
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        out.insert(stem, path);
    }
    Ok(out)
}

fn dims(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| Error::Dataset(format!("unreadable file {}: {e}", path.display())))
}

fn ingest_class(dir: &Path, name: String) -> Result<ClassLayout> {
    let normals: Vec<PathBuf> = pngs(&dir.join("normal"))?.into_values().collect();
    for p in &normals {
        dims(p)?;
    }
    let images = pngs(&dir.join("anomaly"))?;
    let mut masks = pngs(&dir.join("mask"))?;
    let mut anomalies = Vec::with_capacity(images.len());
    for (stem, image) in images {
        let mask = masks.remove(&stem).ok_or_else(|| {
            Error::Dataset(format!("anomaly image {stem} ({}) has no mask", image.display()))
        })?;
        let (di, dm) = (dims(&image)?, dims(&mask)?);
        if di != dm {
            return Err(Error::Dataset(format!(
                "dimension mismatch: {} is {}x{} but {} is {}x{}",
                image.display(),
                di.0,
                di.1,
                mask.display(),
                dm.0,
                dm.1
            )));
        }
        anomalies.push(AnomalyFiles { stem, image, mask });
    }
    if let Some((stem, path)) = masks.into_iter().next() {
        log::warn!("mask {stem} ({}) has no anomaly image; ignored", path.display());
    }
    Ok(ClassLayout { name, normals, anomalies })
}

/// Scans and validates a dataset tree. Every subdirectory of `root` is a class.
pub fn ingest(root: &Path) -> Result<DatasetLayout> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} is not a directory", root.display())));
    }
    let mut dirs: Vec<(String, PathBuf)> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    dirs.sort();
    let classes = dirs
        .into_iter()
        .map(|(name, dir)| ingest_class(&dir, name))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetLayout {
        root: root.to_path_buf(),
        classes,
    })
}

impl DatasetLayout {
    pub fn class(&self, name: &str) -> Result<&ClassLayout> {
        self.classes.iter().find(|c| c.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
            Error::Dataset(format!("no class {name:?} under {} (found: {})", self.root.display(), known.join(", ")))
        })
    }
}

impl ClassLayout {
    pub fn load_normals(&self) -> Result<Vec<(String, Image)>> {
        self.normals
            .iter()
            .map(|p| Ok((p.file_stem().unwrap().to_string_lossy().into_owned(), read_image(p)?)))
            .collect()
    }

    pub fn load_exemplars(&self) -> Result<Vec<AnomalyExemplar>> {
        self.anomalies
            .iter()
            .map(|a| {
                let mask = read_mask(&a.mask)?;
                AnomalyExemplar::new(read_image(&a.image)?, mask, self.name.clone(), a.stem.clone()).map_err(|e| {
                    Error::Dataset(format!("{}: {e}", a.mask.display()))
                })
            })
            .collect()
    }

    /// Train and test portions of the sorted anomaly list.
    pub fn split(&self) -> Result<(Vec<AnomalyFiles>, Vec<AnomalyFiles>)> {
        split_train_test(&self.anomalies)
    }

    /// Loaded training exemplars, failing when the split leaves none.
    pub fn train_exemplars(&self) -> Result<Vec<AnomalyExemplar>> {
        let all = self.load_exemplars()?;
        let (train, _) = split_train_test(&all)?;
        if train.is_empty() {
            return Err(Error::InsufficientSamples(format!(
                "class {} has {} anomaly images; the training split is empty",
                self.name,
                all.len()
            )));
        }
        Ok(train)
    }

    pub fn test_exemplars(&self) -> Result<Vec<AnomalyExemplar>> {
        let all = self.load_exemplars()?;
        Ok(split_train_test(&all)?.1)
    }
}
