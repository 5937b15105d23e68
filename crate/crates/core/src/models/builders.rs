use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Architecture, ImageSpec, ModelGraph, VitConfig};
use crate::autodiff::Activation;
use crate::error::{Error, Result};
use crate::nn::{
    AttentionBlock, Conv2dLayer, ConvTranspose2dLayer, DenseLayer, DropoutLayer, HeadParams, Layer,
    NormKind, NormLayer, ParamStore,
};
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
const GAN_INIT_STD: f64 = 0.02;
const GAN_BASE: usize = 4;
const GAN_SEED_CHANNELS: usize = 256;

#[derive(Clone, Copy)]
enum Init {
    /// Uniform in ±√(6 / (fan_in + fan_out)).
    Glorot,
    /// Normal with the given standard deviation.
    Normal(f64),
}

/// Tracks the per-sample shape while layers are appended, so shape errors
/// surface at build time with the offending layer named.
struct Builder {
    params: ParamStore<f32>,
    rng: ChaCha8Rng,
    init: Init,
    shape: Vec<usize>,
    counters: std::collections::HashMap<&'static str, usize>,
    layers: Vec<Layer>,
}

impl Builder {
    fn new(input: Vec<usize>, seed: u64, init: Init) -> Self {
        Self {
            params: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            init,
            shape: input,
            counters: Default::default(),
            layers: Vec::new(),
        }
    }

    fn name(&mut self, kind: &'static str) -> String {
        let n = self.counters.entry(kind).or_insert(0);
        *n += 1;
        format!("{kind}{n}")
    }

    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Result<String> {
        let numel = shape.iter().product();
        let data: Vec<f32> = match self.init {
            Init::Glorot => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                (0..numel).map(|_| dist.sample(&mut self.rng)).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std as f32).expect("positive std");
                (0..numel).map(|_| dist.sample(&mut self.rng)).collect()
            }
        };
        self.params.insert(name.clone(), Tensor::new(shape, data)?, true)?;
        Ok(name)
    }

    fn constant(&mut self, name: String, len: usize, value: f32, trainable: bool) -> Result<String> {
        self.params
            .insert(name.clone(), Tensor::full(vec![len], value)?, trainable)?;
        Ok(name)
    }

    fn image_dims(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape(op, &self.shape, &[0, 0, 0])),
        }
    }

    fn conv(&mut self, filters: usize, k: usize, stride: usize, pad: usize, act: Activation) -> Result<()> {
        let (h, w, c) = self.image_dims("conv2d")?;
        let (Some(oh), Some(ow)) = (
            crate::autodiff::kernels::ConvGeom::out_extent(h, k, stride, pad),
            crate::autodiff::kernels::ConvGeom::out_extent(w, k, stride, pad),
        ) else {
            return Err(Error::invalid(format!(
                "input too small: a {k}×{k} convolution does not fit a {h}×{w} feature map"
            )));
        };
        let base = self.name("conv");
        let kernel = self.weight(format!("{base}/kernel"), vec![k, k, c, filters], k * k * c, k * k * filters)?;
        let bias = self.constant(format!("{base}/bias"), filters, 0.0, true)?;
        self.layers.push(Layer::Conv2d(Conv2dLayer {
            kernel,
            bias: Some(bias),
            stride,
            pad,
            activation: act,
            filters,
        }));
        self.shape = vec![oh, ow, filters];
        Ok(())
    }

    fn tconv(&mut self, filters: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Result<()> {
        let (h, w, c) = self.image_dims("conv2d_transpose")?;
        let extent = |n: usize| ((n - 1) * stride + k).checked_sub(2 * pad).filter(|&v| v > 0);
        let (Some(oh), Some(ow)) = (extent(h), extent(w)) else {
            return Err(Error::invalid("transposed convolution output extent is not positive"));
        };
        let base = self.name("tconv");
        let kernel = self.weight(format!("{base}/kernel"), vec![k, k, filters, c], k * k * c, k * k * filters)?;
        let bias = if bias {
            Some(self.constant(format!("{base}/bias"), filters, 0.0, true)?)
        } else {
            None
        };
        self.layers.push(Layer::ConvTranspose2d(ConvTranspose2dLayer {
            kernel,
            bias,
            stride,
            pad,
            filters,
        }));
        self.shape = vec![oh, ow, filters];
        Ok(())
    }

    fn pool(&mut self) -> Result<()> {
        let (h, w, c) = self.image_dims("maxpool2d")?;
        if h < 2 || w < 2 {
            return Err(Error::invalid(format!(
                "input too small: a {h}×{w} feature map cannot be max-pooled"
            )));
        }
        self.layers.push(Layer::MaxPool2d);
        self.shape = vec![h / 2, w / 2, c];
        Ok(())
    }

    fn flatten(&mut self) {
        self.layers.push(Layer::Flatten);
        self.shape = vec![self.shape.iter().product()];
    }

    fn reshape(&mut self, shape: Vec<usize>) -> Result<()> {
        if shape.iter().product::<usize>() != self.shape.iter().product::<usize>() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.layers.push(Layer::Reshape(shape.clone()));
        self.shape = shape;
        Ok(())
    }

    fn dense_layer(&mut self, prefix: &str, units: usize, act: Activation) -> Result<DenseLayer> {
        let fan_in = *self.shape.last().expect("non-empty shape");
        let weight = self.weight(format!("{prefix}/weight"), vec![fan_in, units], fan_in, units)?;
        let bias = self.constant(format!("{prefix}/bias"), units, 0.0, true)?;
        *self.shape.last_mut().expect("non-empty shape") = units;
        Ok(DenseLayer {
            weight,
            bias,
            activation: act,
            units,
        })
    }

    fn dense(&mut self, units: usize, act: Activation) -> Result<()> {
        let base = self.name("dense");
        let layer = self.dense_layer(&base, units, act)?;
        self.layers.push(Layer::Dense(layer));
        Ok(())
    }

    fn layer_norm(&mut self, prefix: &str) -> Result<NormLayer> {
        let d = *self.shape.last().expect("non-empty shape");
        Ok(NormLayer {
            kind: NormKind::Layer,
            gamma: self.constant(format!("{prefix}/gamma"), d, 1.0, true)?,
            beta: self.constant(format!("{prefix}/beta"), d, 0.0, true)?,
            eps: NORM_EPS,
        })
    }

    fn batch_norm(&mut self) -> Result<()> {
        let d = *self.shape.last().expect("non-empty shape");
        let base = self.name("batchnorm");
        let layer = NormLayer {
            kind: NormKind::Batch {
                running_mean: self.constant(format!("{base}/running_mean"), d, 0.0, false)?,
                running_var: self.constant(format!("{base}/running_var"), d, 1.0, false)?,
                momentum: BN_MOMENTUM,
            },
            gamma: self.constant(format!("{base}/gamma"), d, 1.0, true)?,
            beta: self.constant(format!("{base}/beta"), d, 0.0, true)?,
            eps: NORM_EPS,
        };
        self.layers.push(Layer::Norm(layer));
        Ok(())
    }

    fn attention(&mut self, prefix: &str, heads: usize) -> Result<AttentionBlock> {
        let d = *self.shape.last().expect("non-empty shape");
        let dk = d / heads;
        let mut head_params = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut proj = |role: &str| -> Result<(String, String)> {
                let w = self.weight(format!("{prefix}/head{h}/{role}_weight"), vec![d, dk], d, dk)?;
                let b = self.constant(format!("{prefix}/head{h}/{role}_bias"), dk, 0.0, true)?;
                Ok((w, b))
            };
            head_params.push(HeadParams {
                q: proj("query")?,
                k: proj("key")?,
                v: proj("value")?,
            });
        }
        let out_w = self.weight(format!("{prefix}/out_weight"), vec![d, d], d, d)?;
        let out_b = self.constant(format!("{prefix}/out_bias"), d, 0.0, true)?;
        Ok(AttentionBlock {
            heads: head_params,
            out: (out_w, out_b),
            dim: d,
        })
    }

    fn finish(self, architecture: Architecture, input_shape: Vec<usize>) -> ModelGraph<f32> {
        ModelGraph {
            architecture,
            input_shape,
            layers: self.layers,
            params: self.params,
        }
    }
}

fn check_image(spec: &ImageSpec) -> Result<()> {
    if spec.height == 0 || spec.width == 0 || spec.channels == 0 {
        return Err(Error::invalid(format!("image extents must be positive, got {spec:?}")));
    }
    Ok(())
}

/// Three 3×3 ReLU conv stages (32, 64, 128 filters) with 2×2 pooling, then
/// Dense 256 ReLU and a single sigmoid unit.
pub fn build_cnn(input: ImageSpec, seed: u64) -> Result<ModelGraph> {
    check_image(&input)?;
    let mut b = Builder::new(input.shape(), seed, Init::Glorot);
    for filters in [32, 64, 128] {
        b.conv(filters, 3, 1, 0, Activation::Relu)?;
        b.pool()?;
    }
    b.flatten();
    b.dense(256, Activation::Relu)?;
    b.dense(1, Activation::Sigmoid)?;
    Ok(b.finish(Architecture::Cnn { input }, input.shape()))
}

/// Four 3×3 ReLU conv stages (32 to 256 filters) with pooling, Dense 512
/// ReLU, dropout 0.5 and a single sigmoid unit.
pub fn build_ftcnn(input: ImageSpec, seed: u64) -> Result<ModelGraph> {
    check_image(&input)?;
    let mut b = Builder::new(input.shape(), seed, Init::Glorot);
    for filters in [32, 64, 128, 256] {
        b.conv(filters, 3, 1, 0, Activation::Relu)?;
        b.pool()?;
    }
    b.flatten();
    b.dense(512, Activation::Relu)?;
    b.layers.push(Layer::Dropout(DropoutLayer { rate: 0.5 }));
    b.dense(1, Activation::Sigmoid)?;
    Ok(b.finish(Architecture::Ftcnn { input }, input.shape()))
}

/// Patch embedding, `transformer_layers` pre-norm blocks (attention and a
/// two-layer MLP, each residual), final norm, mean pooling over patches and
/// a single sigmoid unit. No positional embedding.
pub fn build_vit(config: VitConfig, seed: u64) -> Result<ModelGraph> {
    check_image(&config.input)?;
    config.validate()?;
    let mut b = Builder::new(config.input.shape(), seed, Init::Glorot);
    let (np, pd) = (config.num_patches(), config.patch_dim());
    b.layers.push(Layer::PatchExtract {
        patch: config.patch_size,
    });
    b.shape = vec![np, pd];
    b.reshape(vec![np, pd])?;
    let proj = b.dense_layer("patch_projection", config.projection_dim, Activation::Identity)?;
    b.layers.push(Layer::Dense(proj));

    for i in 1..=config.transformer_layers {
        let prefix = format!("block{i}");
        let ln1 = b.layer_norm(&format!("{prefix}/norm1"))?;
        let attn = b.attention(&format!("{prefix}/attention"), config.heads)?;
        b.layers.push(Layer::Residual(vec![Layer::Norm(ln1), Layer::Attention(attn)]));

        let ln2 = b.layer_norm(&format!("{prefix}/norm2"))?;
        let up = b.dense_layer(&format!("{prefix}/mlp1"), config.mlp_hidden, Activation::Relu)?;
        let down = b.dense_layer(&format!("{prefix}/mlp2"), config.projection_dim, Activation::Identity)?;
        b.layers.push(Layer::Residual(vec![
            Layer::Norm(ln2),
            Layer::Dense(up),
            Layer::Dense(down),
        ]));
    }
    let ln = b.layer_norm("final_norm")?;
    b.layers.push(Layer::Norm(ln));
    b.layers.push(Layer::GlobalAvgPool);
    b.shape = vec![config.projection_dim];
    let head = b.dense_layer("head", 1, Activation::Sigmoid)?;
    b.layers.push(Layer::Dense(head));
    let shape = config.input.shape();
    Ok(b.finish(Architecture::Vit(config), shape))
}

fn gan_stages(image: &ImageSpec) -> Result<usize> {
    let size = image.height;
    if image.height != image.width || size < 16 || !size.is_power_of_two() || image.channels == 0 {
        return Err(Error::invalid(format!(
            "unsupported GAN image size {}×{}: needs a square power-of-two extent of at least 16",
            image.height, image.width
        )));
    }
    Ok((size / GAN_BASE).trailing_zeros() as usize)
}

/// Channel width of upsampling stage `i` (0-based).
fn gan_stage_channels(i: usize) -> usize {
    (128usize >> i).max(16)
}

/// DCGAN pair. The generator maps `[B, latent_dim]` to `[B, H, W, C]` in
/// `[0, 1]`; the discriminator maps images to `[B, 1]` in `(0, 1)`.
pub fn build_dcgan(latent_dim: usize, image: ImageSpec, seed: u64) -> Result<(ModelGraph, ModelGraph)> {
    if latent_dim == 0 {
        return Err(Error::invalid("latent dimension must be positive"));
    }
    let stages = gan_stages(&image)?;
    let init = Init::Normal(GAN_INIT_STD);

    let mut g = Builder::new(vec![latent_dim], seed, init);
    g.dense(GAN_BASE * GAN_BASE * GAN_SEED_CHANNELS, Activation::Identity)?;
    g.reshape(vec![GAN_BASE, GAN_BASE, GAN_SEED_CHANNELS])?;
    for i in 0..stages {
        g.tconv(gan_stage_channels(i), 4, 2, 1, false)?;
        g.batch_norm()?;
        g.layers.push(Layer::Activation(Activation::Relu));
    }
    g.tconv(image.channels, 3, 1, 1, true)?;
    g.layers.push(Layer::Activation(Activation::Tanh));
    g.layers.push(Layer::Rescale01);
    let generator = g.finish(
        Architecture::GanGenerator { latent_dim, image },
        vec![latent_dim],
    );

    let mut d = Builder::new(image.shape(), seed.wrapping_add(1), init);
    for filters in [32, 64, 128, 256] {
        d.conv(filters, 4, 2, 1, Activation::leaky())?;
    }
    d.flatten();
    d.dense(1, Activation::Sigmoid)?;
    let discriminator = d.finish(Architecture::GanDiscriminator { image }, image.shape());
    Ok((generator, discriminator))
}

/// Builds a fresh model for an architecture descriptor.
pub fn build(architecture: &Architecture, seed: u64) -> Result<ModelGraph> {
    match architecture {
        Architecture::Cnn { input } => build_cnn(*input, seed),
        Architecture::Ftcnn { input } => build_ftcnn(*input, seed),
        Architecture::Vit(config) => build_vit(config.clone(), seed),
        Architecture::GanGenerator { latent_dim, image } => Ok(build_dcgan(*latent_dim, *image, seed)?.0),
        Architecture::GanDiscriminator { image } => Ok(build_dcgan(1, *image, seed.wrapping_sub(1))?.1),
    }
}
