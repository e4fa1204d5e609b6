//! Image datasets laid out as one directory per class.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub path: PathBuf,
    pub label: String,
}

/// Ordered `(image path, class label)` list, sorted lexicographically by path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    entries: Vec<DatasetEntry>,
    classes: Vec<String>,
}

impl DatasetIndex {
    pub fn from_entries(mut entries: Vec<DatasetEntry>) -> Self {
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let mut classes: Vec<String> = entries.iter().map(|e| e.label.clone()).collect();
        classes.sort();
        classes.dedup();
        DatasetIndex { entries, classes }
    }

    /// Indexes `root/<class>/*.png`.
    pub fn from_dir(root: &Path) -> Result<Self> {
        let read = |p: &Path| fs::read_dir(p).map_err(|e| Error::io(p, e));
        let mut entries = Vec::new();
        for class_dir in read(root)? {
            let class_dir = class_dir.map_err(|e| Error::io(root, e))?.path();
            if !class_dir.is_dir() {
                continue;
            }
            let label = class_dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::Input(format!("non-UTF-8 class directory {}", class_dir.display())))?
                .to_owned();
            for file in read(&class_dir)? {
                let path = file.map_err(|e| Error::io(&class_dir, e))?.path();
                let is_png = path
                    .extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"));
                if path.is_file() && is_png {
                    entries.push(DatasetEntry {
                        path,
                        label: label.clone(),
                    });
                }
            }
        }
        if entries.is_empty() {
            return Err(Error::Input(format!("no images found under {}", root.display())));
        }
        Ok(DatasetIndex::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &DatasetEntry {
        &self.entries[index]
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn load(&self, index: usize) -> Result<Image> {
        Image::load(&self.entries[index].path)
    }

    /// Seeded sample of up to `per_class` images from each class, in index
    /// order.
    pub fn stratified_sample(&self, per_class: usize, seed: u64) -> DatasetIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = Vec::new();
        for class in &self.classes {
            let mut members: Vec<&DatasetEntry> = self.entries.iter().filter(|e| &e.label == class).collect();
            members.shuffle(&mut rng);
            picked.extend(members.into_iter().take(per_class).cloned());
        }
        DatasetIndex::from_entries(picked)
    }
}
