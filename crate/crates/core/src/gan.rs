//! Adversarial training of a generator/discriminator pair.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::image::{quantize, FloatImage, ImageBuffer, Provenance};
use crate::data::ppm;
use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::nn::Mode;
use crate::optim::{bce_loss, lsgan_d_loss, lsgan_g_loss, AdamConfig, AdamState, GanLoss};
use crate::tensor::Tensor;

/// Side length, in images, of the sample grid.
pub const GRID: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentSpec {
    pub dim: usize,
    pub mean: f64,
    pub std: f64,
}

impl Default for LatentSpec {
    fn default() -> Self {
        Self {
            dim: 100,
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl LatentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !(self.std > 0.0) || !self.mean.is_finite() || !self.std.is_finite() {
            return Err(Error::invalid(format!("latent spec needs dim ≥ 1 and std > 0: {self:?}")));
        }
        Ok(())
    }
}

/// `[b, dim]` i.i.d. normal draws.
pub fn sample_latent(spec: &LatentSpec, b: usize, rng: &mut dyn RngCore) -> Result<Tensor<f32>> {
    spec.validate()?;
    if b == 0 {
        return Err(Error::invalid("latent batch must be non-empty"));
    }
    let normal = Normal::new(spec.mean, spec.std).map_err(|e| Error::invalid(e.to_string()))?;
    let data = (0..b * spec.dim).map(|_| normal.sample(rng) as f32).collect();
    Tensor::new(vec![b, spec.dim], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: GanLoss,
    pub adam: AdamConfig,
    pub report_interval: usize,
    pub save_interval: usize,
    pub seed: u64,
    pub latent: LatentSpec,
    pub verify_freeze: bool,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            loss: GanLoss::Bce,
            adam: AdamConfig::gan(),
            report_interval: 100,
            save_interval: 10,
            seed: 0,
            latent: LatentSpec::default(),
            verify_freeze: false,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.latent.validate()?;
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("GAN batch size must be at least 2, got {}", self.batch_size)));
        }
        if self.report_interval == 0 || self.save_interval == 0 {
            return Err(Error::invalid("report and save intervals must be at least 1"));
        }
        Ok(())
    }
}

/// Losses and discriminator accuracies (threshold 0.5) of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub l_d: f64,
    pub l_g: f64,
    pub d_acc_real: f64,
    pub d_acc_fake: f64,
}

impl StepStats {
    pub fn d_acc(&self) -> f64 {
        0.5 * (self.d_acc_real + self.d_acc_fake)
    }

    fn is_finite(&self) -> bool {
        self.l_d.is_finite() && self.l_g.is_finite()
    }
}

/// Generator, discriminator and their optimizer states.
#[derive(Clone, Debug)]
pub struct Gan {
    pub generator: ModelGraph,
    pub discriminator: ModelGraph,
    pub gen_opt: AdamState,
    pub disc_opt: AdamState,
    pub latent: LatentSpec,
    /// Compare parameters bitwise around each half-step and fail if the
    /// network not being trained changed.
    pub verify_freeze: bool,
}

fn param_bits(model: &ModelGraph) -> Vec<u32> {
    model.params.iter().flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits())).collect()
}

impl Gan {
    pub fn new(generator: ModelGraph, discriminator: ModelGraph, adam: AdamConfig, latent: LatentSpec) -> Result<Self> {
        latent.validate()?;
        if generator.input_shape != [latent.dim] {
            return Err(Error::shape("generator latent", &generator.input_shape, &[latent.dim]));
        }
        Ok(Self {
            generator,
            discriminator,
            gen_opt: AdamState::new(adam),
            disc_opt: AdamState::new(adam),
            latent,
            verify_freeze: false,
        })
    }

    /// Generator forward in training mode without gradients or statistic
    /// updates.
    fn fake_batch(&self, z: Tensor<f32>, rng: &mut dyn RngCore) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let z = tape.constant(z)?;
        let out = self.generator.forward(&mut tape, z, Mode::Train, false, false, rng)?;
        Ok(tape.value(out.output).clone())
    }

    /// One discriminator update on `b` real (label 1) plus `b` generated
    /// (label 0) images, then one generator update on fresh latents labelled
    /// real, with the discriminator frozen.
    pub fn train_step(&mut self, real: &Tensor<f32>, loss: GanLoss, rng: &mut dyn RngCore) -> Result<StepStats> {
        let b = real.shape().first().copied().unwrap_or(0);
        let gen_before = self.verify_freeze.then(|| param_bits(&self.generator));
        let (l_d, d_acc_real, d_acc_fake) = self.discriminator_step(real, loss, rng)?;
        if gen_before.is_some_and(|g| g != param_bits(&self.generator)) {
            return Err(Error::invalid("discriminator update changed generator parameters"));
        }
        let disc_before = self.verify_freeze.then(|| param_bits(&self.discriminator));
        let l_g = self.generator_step(b, loss, rng)?;
        if disc_before.is_some_and(|d| d != param_bits(&self.discriminator)) {
            return Err(Error::invalid("generator update changed discriminator parameters"));
        }
        Ok(StepStats {
            l_d,
            l_g,
            d_acc_real,
            d_acc_fake,
        })
    }

    /// Discriminator half of [`Gan::train_step`]. Returns the loss and the
    /// accuracies on the real and generated halves.
    pub fn discriminator_step(&mut self, real: &Tensor<f32>, loss: GanLoss, rng: &mut dyn RngCore) -> Result<(f64, f64, f64)> {
        let b = real.shape().first().copied().unwrap_or(0);
        if b < 2 {
            return Err(Error::invalid(format!("GAN step needs at least 2 real images, got {b}")));
        }
        let z = sample_latent(&self.latent, b, rng)?;
        let fake = self.fake_batch(z, rng)?;
        if fake.shape()[1..] != real.shape()[1..] {
            return Err(Error::shape("real vs generated batch", real.shape(), fake.shape()));
        }
        let mut shape = real.shape().to_vec();
        shape[0] = 2 * b;
        let mut data = real.data().to_vec();
        data.extend_from_slice(fake.data());
        let both = Tensor::new(shape, data)?;

        let mut tape = Tape::new();
        let x = tape.constant(both)?;
        let out = self.discriminator.forward(&mut tape, x, Mode::Train, true, true, rng)?;
        let scores: Vec<f64> = tape.data(out.output).iter().map(|&v| f64::from(v)).collect();
        let l = match loss {
            GanLoss::Bce => {
                let labels: Vec<f32> = (0..2 * b).map(|i| if i < b { 1.0 } else { 0.0 }).collect();
                bce_loss(&mut tape, out.output, &labels)?
            }
            GanLoss::Lsgan => {
                let d_real = tape.gather(out.output, (0..b).collect(), vec![b, 1])?;
                let d_fake = tape.gather(out.output, (b..2 * b).collect(), vec![b, 1])?;
                lsgan_d_loss(&mut tape, d_real, d_fake)?
            }
        };
        let value = f64::from(tape.data(l)[0]);
        tape.backward(l)?;
        self.discriminator.collect_grads(&tape, &out.bindings)?;
        self.disc_opt.step(&mut self.discriminator.params)?;
        self.discriminator.apply_stat_updates(out.stat_updates);

        let acc_real = scores[..b].iter().filter(|&&s| s >= 0.5).count() as f64 / b as f64;
        let acc_fake = scores[b..].iter().filter(|&&s| s < 0.5).count() as f64 / b as f64;
        Ok((value, acc_real, acc_fake))
    }

    /// Generator half of [`Gan::train_step`] on `b` fresh latents.
    pub fn generator_step(&mut self, b: usize, loss: GanLoss, rng: &mut dyn RngCore) -> Result<f64> {
        if b == 0 {
            return Err(Error::invalid("generator step needs a non-empty batch"));
        }
        let z = sample_latent(&self.latent, b, rng)?;
        let mut tape = Tape::new();
        let z = tape.constant(z)?;
        let gen = self.generator.forward(&mut tape, z, Mode::Train, true, true, rng)?;
        // Discriminator parameters enter as constants: gradients reach the
        // generated images but never the discriminator.
        let disc = self.discriminator.forward(&mut tape, gen.output, Mode::Train, false, false, rng)?;
        let l = match loss {
            GanLoss::Bce => bce_loss(&mut tape, disc.output, &vec![1.0f32; b])?,
            GanLoss::Lsgan => lsgan_g_loss(&mut tape, disc.output)?,
        };
        let value = f64::from(tape.data(l)[0]);
        tape.backward(l)?;
        self.generator.collect_grads(&tape, &gen.bindings)?;
        self.gen_opt.step(&mut self.generator.params)?;
        self.generator.apply_stat_updates(gen.stat_updates);
        Ok(value)
    }

    /// Images from the generator in inference mode.
    pub fn generate(&self, count: usize, seed: u64) -> Result<Vec<FloatImage>> {
        generate_images(&self.generator, &self.latent, count, seed)
    }
}

/// `count` generated images in `[0, 1]`, tagged synthetic.
pub fn generate_images(generator: &ModelGraph, latent: &LatentSpec, count: usize, seed: u64) -> Result<Vec<FloatImage>> {
    const CHUNK: usize = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut remaining = count;
    while remaining > 0 {
        let n = remaining.min(CHUNK);
        let z = sample_latent(latent, n, &mut rng)?;
        let out = generator.infer(&z)?;
        let s = out.shape();
        if s.len() != 4 {
            return Err(Error::invalid(format!("generator output has shape {s:?}, expected [N, H, W, C]")));
        }
        let (h, w, c) = (s[1], s[2], s[3]);
        for chunk in out.data().chunks(h * w * c) {
            let img = ImageBuffer::new(h, w, c, chunk.iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
            images.push(img.with_provenance(Provenance::Synthetic));
        }
        remaining -= n;
    }
    Ok(images)
}

/// Tiles images row-major into a `cols`-wide grid, widening grayscale to RGB.
pub fn tile_grid(images: &[FloatImage], cols: usize) -> Result<ImageBuffer<u8>> {
    let first = images.first().ok_or_else(|| Error::invalid("grid of zero images"))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    if c != 1 && c != 3 {
        return Err(Error::Unsupported(format!("{c}-channel grid")));
    }
    let rows = images.len().div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut data = vec![0.0f32; gh * gw * 3];
    for (k, img) in images.iter().enumerate() {
        if (img.height, img.width, img.channels) != (h, w, c) {
            return Err(Error::invalid("grid images must share a size"));
        }
        let (oy, ox) = ((k / cols) * h, (k % cols) * w);
        for y in 0..h {
            for x in 0..w {
                let px = img.pixel(y, x);
                let dst = ((oy + y) * gw + ox + x) * 3;
                for ch in 0..3 {
                    data[dst + ch] = px[if c == 1 { 0 } else { ch }];
                }
            }
        }
    }
    Ok(quantize(&ImageBuffer::new(gh, gw, 3, data)?))
}

/// Per-epoch means of the step statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub mean: StepStats,
}

impl EpochStats {
    pub fn progress_line(&self) -> String {
        format!(
            "epoch={} l_d={:.6} l_g={:.6} d_acc={:.6}",
            self.epoch,
            self.mean.l_d,
            self.mean.l_g,
            self.mean.d_acc()
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanHistory {
    pub epochs: Vec<EpochStats>,
    pub samples: Vec<std::path::PathBuf>,
}

/// Runs `config.epochs` passes over shuffled batches of `real`
/// (`[N, H, W, C]` in `[0, 1]`). Batches smaller than 2 are dropped.
///
/// Every `report_interval` epochs a progress line is passed to `log`. Every
/// `save_interval` epochs, when `out_dir` is given, an 8×8 grid from a fixed
/// latent batch is written to `<out_dir>/samples/epoch_<n>.ppm`.
pub fn train_gan(
    gan: &mut Gan,
    real: &Tensor<f32>,
    config: &GanTrainConfig,
    out_dir: Option<&Path>,
    log: &mut dyn FnMut(&str),
) -> Result<GanHistory> {
    config.validate()?;
    let n = real.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(Error::Dataset(format!("GAN training needs at least 2 real images, got {n}")));
    }
    gan.gen_opt.config = config.adam;
    gan.disc_opt.config = config.adam;
    gan.verify_freeze = config.verify_freeze;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sample_seed = rng.next_u64();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = GanHistory::default();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = StepStats::default();
        let mut steps = 0;
        for rows in order.chunks(config.batch_size).filter(|r| r.len() >= 2) {
            let batch = real.select_rows(rows)?;
            let stats = gan.train_step(&batch, config.loss, &mut rng).map_err(|e| match e {
                Error::NonFinite(op) => Error::Diverged {
                    epoch,
                    reason: format!("non-finite value in {op}"),
                },
                other => other,
            })?;
            if !stats.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss l_d={} l_g={}", stats.l_d, stats.l_g),
                });
            }
            sum.l_d += stats.l_d;
            sum.l_g += stats.l_g;
            sum.d_acc_real += stats.d_acc_real;
            sum.d_acc_fake += stats.d_acc_fake;
            steps += 1;
        }
        let k = steps as f64;
        let record = EpochStats {
            epoch,
            steps,
            mean: StepStats {
                l_d: sum.l_d / k,
                l_g: sum.l_g / k,
                d_acc_real: sum.d_acc_real / k,
                d_acc_fake: sum.d_acc_fake / k,
            },
        };
        if epoch % config.report_interval == 0 {
            log(&record.progress_line());
        }
        if let Some(dir) = out_dir {
            if epoch % config.save_interval == 0 {
                let samples = dir.join("samples");
                std::fs::create_dir_all(&samples)?;
                let path = samples.join(format!("epoch_{epoch}.ppm"));
                let images = gan.generate(GRID * GRID, sample_seed)?;
                ppm::write(&path, &tile_grid(&images, GRID)?)?;
                history.samples.push(path);
            }
        }
        history.epochs.push(record);
    }
    Ok(history)
}
