//! In-memory images and the per-pixel preprocessing chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where an image came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Real,
    Synthetic,
}

/// Row-major interleaved image, `height × width × channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer<P = u8> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<P>,
    pub provenance: Provenance,
}

impl<P: Copy> ImageBuffer<P> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<P>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "image extents must be positive, got {height}×{width}×{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "{height}×{width}×{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            provenance: Provenance::Real,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[P] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// Normalized image with values in `[0, 1]`.
pub type FloatImage = ImageBuffer<f32>;

/// `x / 255`.
pub fn normalize(img: &ImageBuffer<u8>) -> FloatImage {
    ImageBuffer {
        height: img.height,
        width: img.width,
        channels: img.channels,
        data: img.data.iter().map(|&v| f32::from(v) / 255.0).collect(),
        provenance: img.provenance,
    }
}

/// Round-half-up to 8 bits after clamping to `[0, 1]`.
pub fn quantize(img: &FloatImage) -> ImageBuffer<u8> {
    ImageBuffer {
        height: img.height,
        width: img.width,
        channels: img.channels,
        data: img.data.iter().map(|&v| to_u8(f64::from(v) * 255.0)).collect(),
        provenance: img.provenance,
    }
}

fn to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Source coordinate and blend weight along one axis, with pixel centers at
/// `(i + 0.5)` and edge samples clamped.
fn axis_taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear interpolation with half-pixel centers; output rounded half-up.
pub fn resize(img: &ImageBuffer<u8>, height: usize, width: usize) -> Result<ImageBuffer<u8>> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("resize target must be positive, got {height}×{width}")));
    }
    if (height, width) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let (ys, xs) = (axis_taps(height, img.height), axis_taps(width, img.width));
    let c = img.channels;
    let mut data = Vec::with_capacity(height * width * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let at = |y: usize, x: usize| f64::from(img.data[(y * img.width + x) * c + ch]);
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                data.push(to_u8(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Ok(ImageBuffer {
        height,
        width,
        channels: c,
        data,
        provenance: img.provenance,
    })
}

/// Saturation, contrast and brightness adjustment on normalized pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceParams {
    pub saturation_gain: f64,
    pub contrast_gain: f64,
    pub brightness_offset: f64,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self {
            saturation_gain: 1.3,
            contrast_gain: 1.2,
            brightness_offset: 0.05,
        }
    }
}

impl EnhanceParams {
    pub const IDENTITY: Self = Self {
        saturation_gain: 1.0,
        contrast_gain: 1.0,
        brightness_offset: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.saturation_gain > 0.0 && self.contrast_gain > 0.0 && self.brightness_offset.is_finite()) {
            return Err(Error::invalid(format!("enhancement gains must be positive: {self:?}")));
        }
        Ok(())
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Per pixel: push channels away from (or toward) the luma by the saturation
/// gain, then `(x − 0.5)·contrast + 0.5`, then add the brightness offset, then
/// clamp to `[0, 1]`. Non-RGB images skip the saturation step.
pub fn enhance(img: &FloatImage, params: &EnhanceParams) -> Result<FloatImage> {
    params.validate()?;
    let c = img.channels;
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks(c) {
        let luma: f64 = if c == 3 {
            px.iter().zip(LUMA).map(|(&v, w)| f64::from(v) * w).sum()
        } else {
            0.0
        };
        for &v in px {
            let mut x = f64::from(v);
            if c == 3 {
                x = luma + (x - luma) * params.saturation_gain;
            }
            x = (x - 0.5) * params.contrast_gain + 0.5;
            x += params.brightness_offset;
            data.push(x.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(ImageBuffer {
        height: img.height,
        width: img.width,
        channels: c,
        data,
        provenance: img.provenance,
    })
}

/// Resize, then enhance in normalized space, then quantize back to 8 bits.
pub fn preprocess(img: &ImageBuffer<u8>, height: usize, width: usize, params: &EnhanceParams) -> Result<ImageBuffer<u8>> {
    let resized = resize(img, height, width)?;
    Ok(quantize(&enhance(&normalize(&resized), params)?))
}
