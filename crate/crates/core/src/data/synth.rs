//! Deterministic synthetic two-class image dataset.
//!
//! Class 0 images are a smooth horizontal gradient with mild noise. Class 1
//! images use the same background plus a few bright blobs, so simple global
//! statistics separate the classes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{ClassNames, Split};
use super::image::{quantize, FloatImage, ImageBuffer};
use super::ppm;
use crate::error::{Error, Result};

pub const GENERATOR: &str = "acdl-synth";
pub const GENERATOR_VERSION: u32 = 1;
pub const MIN_SIZE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Files per class in every split.
    pub n_per_class: usize,
    pub size: usize,
    pub classes: ClassNames,
}

impl SynthConfig {
    pub fn new(seed: u64, n_per_class: usize, size: usize) -> Self {
        Self {
            seed,
            n_per_class,
            size,
            classes: ClassNames::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < MIN_SIZE {
            return Err(Error::invalid(format!("synthetic image size must be at least {MIN_SIZE}, got {}", self.size)));
        }
        if self.n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub generator: String,
    pub generator_version: u32,
    pub seed: u64,
    pub n_per_class: usize,
    pub size: usize,
    pub classes: ClassNames,
    pub splits: Vec<SplitCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCount {
    pub split: Split,
    pub counts: [usize; 2],
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one file, independent of generation order.
fn file_seed(seed: u64, split: Split, label: u8, index: usize) -> u64 {
    let split_id = Split::ALL.iter().position(|&s| s == split).unwrap_or(0) as u64;
    let mut s = splitmix(seed);
    s = splitmix(s ^ split_id);
    s = splitmix(s ^ u64::from(label));
    splitmix(s ^ index as u64)
}

/// Renders one image of the given class.
pub fn render(rng: &mut impl Rng, size: usize, label: u8) -> FloatImage {
    let noise = Normal::new(0.0f64, 0.03).expect("valid std");
    let base = rng.random_range(0.25..0.4);
    let slope = rng.random_range(0.05..0.15);
    let tint = [0.95, 1.0, 1.05];
    let mut data = Vec::with_capacity(size * size * 3);
    for _y in 0..size {
        for x in 0..size {
            let v = base + slope * x as f64 / size as f64;
            for t in tint {
                data.push(v * t + noise.sample(rng));
            }
        }
    }
    if label == 1 {
        let blobs = rng.random_range(2..=3);
        for _ in 0..blobs {
            let cy = rng.random_range(0.0..size as f64);
            let cx = rng.random_range(0.0..size as f64);
            let r = rng.random_range(size as f64 / 10.0..size as f64 / 6.0);
            let color = [rng.random_range(0.9..1.0), rng.random_range(0.6..0.9), rng.random_range(0.2..0.5)];
            for y in 0..size {
                for x in 0..size {
                    let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                    let a = (-d2 / (2.0 * r * r)).exp();
                    let px = &mut data[(y * size + x) * 3..(y * size + x) * 3 + 3];
                    for (v, c) in px.iter_mut().zip(color) {
                        *v = *v * (1.0 - a) + c * a;
                    }
                }
            }
        }
    }
    ImageBuffer {
        height: size,
        width: size,
        channels: 3,
        data: data.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
        provenance: Default::default(),
    }
}

/// Writes `<root>/{train,val,test}/<class>/img_<i>.ppm` plus `manifest.json`.
///
/// A non-empty `root` is refused unless `force` is set, in which case only
/// the split directories and manifest are replaced.
pub fn make_synthetic_dataset(root: &Path, config: &SynthConfig, force: bool) -> Result<SynthManifest> {
    config.validate()?;
    if root.exists() {
        let non_empty = std::fs::read_dir(root)?.next().is_some();
        if non_empty && !force {
            return Err(Error::Dataset(format!(
                "{} is not empty; refusing to overwrite without force",
                root.display()
            )));
        }
        for split in Split::ALL {
            let dir = root.join(split.as_str());
            if dir.is_dir() {
                std::fs::remove_dir_all(dir)?;
            }
        }
        let manifest = root.join("manifest.json");
        if manifest.is_file() {
            std::fs::remove_file(manifest)?;
        }
    }

    let mut splits = Vec::new();
    for split in Split::ALL {
        for label in 0..2u8 {
            let dir = root.join(split.as_str()).join(config.classes.name(usize::from(label)));
            std::fs::create_dir_all(&dir)?;
            for i in 0..config.n_per_class {
                let mut rng = ChaCha8Rng::seed_from_u64(file_seed(config.seed, split, label, i));
                let img = render(&mut rng, config.size, label);
                ppm::write(&dir.join(format!("img_{i:05}.ppm")), &quantize(&img))?;
            }
        }
        splits.push(SplitCount {
            split,
            counts: [config.n_per_class; 2],
        });
    }
    let manifest = SynthManifest {
        generator: GENERATOR.to_string(),
        generator_version: GENERATOR_VERSION,
        seed: config.seed,
        n_per_class: config.n_per_class,
        size: config.size,
        classes: config.classes.clone(),
        splits,
    };
    std::fs::write(root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
