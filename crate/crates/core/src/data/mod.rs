//! Image I/O, preprocessing and dataset layout.

pub mod dataset;
pub mod image;
pub mod ppm;
pub mod synth;

pub use dataset::{
    index_dataset, index_split, merge_augmented, ClassNames, DatasetIndex, DatasetSplits, LabeledBatch, LabeledSet,
    Split,
};
pub use image::{enhance, normalize, preprocess, quantize, resize, EnhanceParams, FloatImage, ImageBuffer, Provenance};
pub use synth::{make_synthetic_dataset, SynthConfig, SynthManifest};
