//! Dataset discovery over `<root>/{train,val,test}/{class0,class1}/*.ppm`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::image::{normalize, resize, FloatImage, ImageBuffer};
use super::ppm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Directory names of the two classes; index 0 is the negative class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassNames(pub [String; 2]);

impl Default for ClassNames {
    fn default() -> Self {
        Self(["Non Accident".to_string(), "Accident".to_string()])
    }
}

impl ClassNames {
    pub fn name(&self, label: usize) -> &str {
        &self.0[label]
    }
}

/// Files of one split, per class, in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub split: Split,
    pub classes: ClassNames,
    pub files: [Vec<PathBuf>; 2],
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.files[0].len() + self.files[1].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> [usize; 2] {
        [self.files[0].len(), self.files[1].len()]
    }

    /// `(path, label)` pairs, class 0 first.
    pub fn entries(&self) -> impl Iterator<Item = (&Path, u8)> {
        self.files[0]
            .iter()
            .map(|p| (p.as_path(), 0))
            .chain(self.files[1].iter().map(|p| (p.as_path(), 1)))
    }

    /// SHA-256 over every file's class, name and contents.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (path, label) in self.entries() {
            h.update([label]);
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            let bytes = std::fs::read(path)?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Decodes every file, resizing to `size` when given, and normalizes.
    pub fn load(&self, size: Option<(usize, usize)>) -> Result<LabeledSet> {
        let mut images = Vec::with_capacity(self.len());
        let mut labels = Vec::with_capacity(self.len());
        let mut paths = Vec::with_capacity(self.len());
        for (path, label) in self.entries() {
            let mut img = ppm::read(path)?;
            if let Some((h, w)) = size {
                img = resize(&img, h, w)?;
            }
            images.push(normalize(&img));
            labels.push(label);
            paths.push(path.to_path_buf());
        }
        LabeledSet::from_images(&images, labels, paths)
    }
}

/// A whole split in memory: `[N, H, W, C]` inputs in `[0, 1]` plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub inputs: Tensor<f32>,
    pub labels: Vec<u8>,
    pub paths: Vec<PathBuf>,
}

/// A minibatch drawn from a [`LabeledSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Tensor<f32>,
    pub labels: Vec<f32>,
}

impl LabeledSet {
    pub fn from_images(images: &[FloatImage], labels: Vec<u8>, paths: Vec<PathBuf>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Dataset("no images to load".into()))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            if (img.height, img.width, img.channels) != (h, w, c) {
                return Err(Error::Dataset(format!(
                    "mixed image sizes: {}×{}×{} and {}×{}×{}",
                    h, w, c, img.height, img.width, img.channels
                )));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Self {
            inputs: Tensor::new(vec![images.len(), h, w, c], data)?,
            labels,
            paths,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.inputs.shape();
        (s[1], s[2], s[3])
    }

    pub fn batch(&self, rows: &[usize]) -> Result<LabeledBatch> {
        Ok(LabeledBatch {
            inputs: self.inputs.select_rows(rows)?,
            labels: rows.iter().map(|&r| f32::from(self.labels[r])).collect(),
        })
    }

    /// Rows carrying `label`, as a tensor.
    pub fn class_inputs(&self, label: u8) -> Result<Tensor<f32>> {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
        if rows.is_empty() {
            return Err(Error::Dataset(format!("no images with label {label}")));
        }
        self.inputs.select_rows(&rows)
    }
}

fn is_ppm(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

fn list_class(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDir(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if is_ppm(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Indexes one split. Every file must decode, both classes must be
/// non-empty, and no file content may appear under both classes.
pub fn index_split(root: &Path, split: Split, classes: &ClassNames) -> Result<DatasetIndex> {
    let split_dir = root.join(split.as_str());
    if !split_dir.is_dir() {
        return Err(Error::MissingDir(split_dir));
    }
    let mut files: [Vec<PathBuf>; 2] = Default::default();
    let mut seen: HashMap<[u8; 32], (usize, PathBuf)> = HashMap::new();
    for (label, slot) in files.iter_mut().enumerate() {
        let dir = split_dir.join(classes.name(label));
        let list = list_class(&dir)?;
        if list.is_empty() {
            return Err(Error::Dataset(format!("class directory {} has no .ppm files", dir.display())));
        }
        for path in &list {
            let bytes = std::fs::read(path)?;
            ppm::decode(&bytes).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
            let key: [u8; 32] = Sha256::digest(&bytes).into();
            if let Some((other_label, other)) = seen.get(&key) {
                if *other_label != label {
                    return Err(Error::Dataset(format!(
                        "ambiguous label: {} and {} have identical contents",
                        other.display(),
                        path.display()
                    )));
                }
            }
            seen.insert(key, (label, path.clone()));
        }
        *slot = list;
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        split,
        classes: classes.clone(),
        files,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: DatasetIndex,
    pub val: DatasetIndex,
    pub test: DatasetIndex,
}

impl DatasetSplits {
    pub fn get(&self, split: Split) -> &DatasetIndex {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn index_dataset(root: &Path, classes: &ClassNames) -> Result<DatasetSplits> {
    if !root.is_dir() {
        return Err(Error::MissingDir(root.to_path_buf()));
    }
    Ok(DatasetSplits {
        train: index_split(root, Split::Train, classes)?,
        val: index_split(root, Split::Val, classes)?,
        test: index_split(root, Split::Test, classes)?,
    })
}

/// Writes generated images into the train split as
/// `<class>/gan_<batch_id>_<i>.ppm` and re-indexes it. Files from an earlier
/// merge with the same `batch_id` are replaced, so re-running is idempotent.
pub fn merge_augmented(
    root: &Path,
    classes: &ClassNames,
    generated: &[(FloatImage, u8)],
    batch_id: &str,
) -> Result<DatasetIndex> {
    if batch_id.is_empty() || !batch_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
        return Err(Error::invalid(format!("batch id {batch_id:?} must be alphanumeric or '-'")));
    }
    let before = index_split(root, Split::Train, classes)?;
    let reference = ppm::read(&before.files[0][0])?;
    let prefix = format!("gan_{batch_id}_");

    for label in 0..2 {
        let dir = root.join(Split::Train.as_str()).join(classes.name(label));
        for path in list_class(&dir)? {
            let stale = path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix));
            if stale {
                std::fs::remove_file(path)?;
            }
        }
    }

    let mut next = [0usize; 2];
    for (img, label) in generated {
        let label = usize::from(*label);
        if label > 1 {
            return Err(Error::invalid(format!("label {label} is not binary")));
        }
        if (img.height, img.width, img.channels) != (reference.height, reference.width, reference.channels) {
            return Err(Error::Dataset(format!(
                "generated image is {}×{}×{}, dataset images are {}×{}×{}",
                img.height, img.width, img.channels, reference.height, reference.width, reference.channels
            )));
        }
        let path = root
            .join(Split::Train.as_str())
            .join(classes.name(label))
            .join(format!("{prefix}{:04}.ppm", next[label]));
        next[label] += 1;
        ppm::write(&path, &super::image::quantize(img))?;
    }
    index_split(root, Split::Train, classes)
}

/// An all-`value` RGB image, handy for tests and degenerate datasets.
pub fn constant_image(height: usize, width: usize, value: u8) -> ImageBuffer<u8> {
    ImageBuffer {
        height,
        width,
        channels: 3,
        data: vec![value; height * width * 3],
        provenance: Default::default(),
    }
}
