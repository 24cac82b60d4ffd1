//! Image datasets listed in a manifest of `path<TAB>split` lines. Relative
//! paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use super::png::read_rgb;
use crate::auxiliary::ImageU8;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: String,
    pub images: Vec<ImageU8>,
    pub paths: Vec<PathBuf>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn resolution(&self) -> Option<(usize, usize)> {
        self.images.first().map(|i| (i.height(), i.width()))
    }

    /// Appends a horizontally mirrored copy of every image.
    pub fn with_flips(mut self) -> Self {
        let flipped: Vec<_> = self.images.iter().map(ImageU8::flip_horizontal).collect();
        self.images.extend(flipped);
        self.paths.extend(self.paths.clone());
        self
    }

    /// Crops each image by the given margins.
    pub fn cropped(mut self, left: usize, right: usize, top: usize, bottom: usize) -> Result<Self> {
        self.images = self
            .images
            .iter()
            .map(|i| i.crop(left, right, top, bottom))
            .collect::<Result<_>>()?;
        Ok(self)
    }

    /// Face-crop margins (left 25, right 25, top 50, bottom 40).
    pub fn face_cropped(self) -> Result<Self> {
        self.cropped(25, 25, 50, 40)
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (file, split) = line
            .split_once('\t')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected path<TAB>split", path.display(), n + 1)))?;
        let file = Path::new(file.trim());
        entries.push(ManifestEntry {
            path: if file.is_absolute() {
                file.to_path_buf()
            } else {
                base.join(file)
            },
            split: split.trim().to_string(),
        });
    }
    Ok(entries)
}

/// Loads every image of `split`. Fails without returning anything if any
/// file is unreadable or the resolutions differ.
pub fn load_images(manifest: &Path, split: &str) -> Result<Dataset> {
    let entries: Vec<_> = read_manifest(manifest)?
        .into_iter()
        .filter(|e| e.split == split)
        .collect();
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "{} lists no images for split {split:?}",
            manifest.display()
        )));
    }
    let mut images: Vec<ImageU8> = Vec::with_capacity(entries.len());
    for e in &entries {
        let img = read_rgb(&e.path)?;
        if let Some(first) = images.first() {
            if (img.height(), img.width()) != (first.height(), first.width()) {
                return Err(Error::Image {
                    path: e.path.clone(),
                    message: format!(
                        "resolution {}x{} differs from {}x{}",
                        img.height(),
                        img.width(),
                        first.height(),
                        first.width()
                    ),
                });
            }
        }
        images.push(img);
    }
    Ok(Dataset {
        split: split.to_string(),
        images,
        paths: entries.into_iter().map(|e| e.path).collect(),
    })
}
