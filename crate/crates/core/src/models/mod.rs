//! Model graphs and the architecture builders.

mod builders;

pub use builders::{build, build_cnn, build_dcgan, build_ftcnn, build_vit};

use std::collections::HashMap;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{ForwardCtx, Layer, LayerSummary, Mode, ParamStore};
use crate::tensor::{Element, Tensor};

/// Height, width and channel count of an image input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageSpec {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn square(size: usize) -> Self {
        Self::new(size, size, 3)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.height, self.width, self.channels]
    }

    pub fn numel(&self) -> usize {
        self.height * self.width * self.channels
    }
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self::square(224)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VitConfig {
    pub input: ImageSpec,
    pub patch_size: usize,
    pub projection_dim: usize,
    pub heads: usize,
    pub transformer_layers: usize,
    pub mlp_hidden: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            input: ImageSpec::default(),
            patch_size: 16,
            projection_dim: 64,
            heads: 4,
            transformer_layers: 8,
            mlp_hidden: 128,
        }
    }
}

impl VitConfig {
    pub fn num_patches(&self) -> usize {
        (self.input.height / self.patch_size) * (self.input.width / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.input.channels
    }

    pub fn key_dim(&self) -> usize {
        self.projection_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.input.height % p != 0 || self.input.width % p != 0 {
            return Err(Error::invalid(format!(
                "patch size {p} must divide the input extent {}×{}",
                self.input.height, self.input.width
            )));
        }
        if self.heads == 0 || self.projection_dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "projection dim {} is not divisible by {} heads",
                self.projection_dim, self.heads
            )));
        }
        if self.projection_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::invalid("projection and MLP widths must be positive"));
        }
        Ok(())
    }

    /// Parameter count implied by the layer list: patch projection,
    /// per block two layer norms, attention (Q/K/V per head plus output
    /// projection) and the two-layer MLP, then the final norm and head.
    pub fn param_count(&self) -> usize {
        let d = self.projection_dim;
        let m = self.mlp_hidden;
        let projection = d * self.patch_dim() + d;
        let norm = 2 * d;
        let attention = 4 * d * d + 4 * d;
        let mlp = (d * m + m) + (m * d + d);
        let block = norm + attention + norm + mlp;
        projection + self.transformer_layers * block + norm + (d + 1)
    }
}

/// Everything needed to rebuild a model's structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum Architecture {
    Cnn { input: ImageSpec },
    Ftcnn { input: ImageSpec },
    Vit(VitConfig),
    GanGenerator { latent_dim: usize, image: ImageSpec },
    GanDiscriminator { image: ImageSpec },
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Cnn { .. } => "cnn",
            Architecture::Ftcnn { .. } => "ftcnn",
            Architecture::Vit(_) => "vit",
            Architecture::GanGenerator { .. } => "gan_generator",
            Architecture::GanDiscriminator { .. } => "gan_discriminator",
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(
            self,
            Architecture::Cnn { .. } | Architecture::Ftcnn { .. } | Architecture::Vit(_)
        )
    }
}

/// Result of [`ModelGraph::forward`].
pub struct ForwardOutput<T: Element> {
    pub output: Var,
    /// Parameter id → tape handle.
    pub bindings: HashMap<usize, Var>,
    /// Pending running-statistic updates, `(parameter id, new value)`.
    pub stat_updates: Vec<(usize, Vec<T>)>,
}

/// Classifier scores and the thresholded labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Decision rule: a score of exactly 0.5 is labeled positive.
pub fn threshold(score: f64) -> u8 {
    u8::from(score >= 0.5)
}

/// An ordered layer stack with its named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<T: Element = f32> {
    pub architecture: Architecture,
    /// Per-sample input shape.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub params: ParamStore<T>,
}

impl<T: Element> ModelGraph<T> {
    pub fn tag(&self) -> &'static str {
        self.architecture.tag()
    }

    pub fn num_params(&self) -> usize {
        self.params.count(true)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend(&self.input_shape);
            return Err(Error::shape("model input", shape, &expected));
        }
        Ok(())
    }

    /// Runs the layer stack on `x` (batch-first).
    ///
    /// With `track_grads`, trainable parameters become gradient-carrying
    /// leaves; [`ModelGraph::collect_grads`] copies their gradients back after
    /// `tape.backward`. Running statistics are never mutated here; with
    /// `update_stats` the new values are returned for the caller to apply.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
        track_grads: bool,
        update_stats: bool,
        rng: &mut dyn RngCore,
    ) -> Result<ForwardOutput<T>> {
        self.check_input(tape.shape(x))?;
        let mut ctx = ForwardCtx::new(tape, &self.params, mode, track_grads, update_stats, rng);
        let mut y = x;
        for layer in &self.layers {
            y = layer.forward(&mut ctx, y)?;
        }
        let (bindings, stat_updates, _) = ctx.into_parts();
        Ok(ForwardOutput {
            output: y,
            bindings,
            stat_updates,
        })
    }

    /// Copies gradients from the tape into the parameters' gradient slots.
    /// Parameters without a gradient have their slot cleared.
    pub fn collect_grads(&mut self, tape: &Tape<T>, bindings: &HashMap<usize, Var>) -> Result<()> {
        self.params.clear_grads();
        for (&id, &var) in bindings {
            if let Some(g) = tape.grad(var) {
                self.params.by_id_mut(id).tensor.set_grad(g.to_vec())?;
            }
        }
        Ok(())
    }

    pub fn apply_stat_updates(&mut self, updates: Vec<(usize, Vec<T>)>) {
        for (id, value) in updates {
            self.params.by_id_mut(id).tensor.data_mut().copy_from_slice(&value);
        }
    }

    /// Eval-mode forward pass returning the output tensor.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone())?;
        // Eval mode consumes no randomness; the generator is a placeholder.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, x, Mode::Eval, false, false, &mut rng)?;
        Ok(tape.value(out.output).clone())
    }

    /// Classifier scores in (0, 1) and labels thresholded at 0.5.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Prediction> {
        if !self.architecture.is_classifier() {
            return Err(Error::invalid(format!(
                "predict needs a classifier, got {}",
                self.tag()
            )));
        }
        let scores: Vec<f64> = self
            .infer(batch)?
            .data()
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        let labels = scores.iter().map(|&s| threshold(s)).collect();
        Ok(Prediction { scores, labels })
    }

    /// One row per layer (residual wrappers expand to their inner layers
    /// followed by an `Add` row), with per-sample output shapes.
    pub fn summary(&self) -> Result<Vec<LayerSummary>> {
        let mut tape = Tape::new();
        let mut shape = vec![1];
        shape.extend(&self.input_shape);
        let x = tape.constant(Tensor::zeros(shape)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = ForwardCtx::new(&mut tape, &self.params, Mode::Eval, false, false, &mut rng).with_trace();
        let mut y = x;
        for layer in &self.layers {
            y = layer.forward(&mut ctx, y)?;
        }
        let (_, _, trace) = ctx.into_parts();
        Ok(trace.unwrap_or_default())
    }

    pub fn cast<U: Element>(&self) -> ModelGraph<U> {
        ModelGraph {
            architecture: self.architecture.clone(),
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            params: self.params.cast(),
        }
    }
}
