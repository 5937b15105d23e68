use std::collections::HashMap;

use rand::RngCore;

use super::{dense, dropout, extract_patches, flatten, multi_head_attention, HeadVars, ParamStore};
use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// State threaded through one forward pass of a layer stack.
pub struct ForwardCtx<'a, T: Element> {
    pub tape: &'a mut Tape<T>,
    pub mode: Mode,
    params: &'a ParamStore<T>,
    bound: HashMap<usize, Var>,
    track_grads: bool,
    update_stats: bool,
    rng: &'a mut dyn RngCore,
    stat_updates: Vec<(usize, Vec<T>)>,
    trace: Option<Vec<LayerSummary>>,
}

impl<'a, T: Element> ForwardCtx<'a, T> {
    /// `track_grads` records trainable parameters as gradient-carrying
    /// leaves; `update_stats` makes batch-norm layers emit new running
    /// statistics (collected, not applied).
    pub fn new(
        tape: &'a mut Tape<T>,
        params: &'a ParamStore<T>,
        mode: Mode,
        track_grads: bool,
        update_stats: bool,
        rng: &'a mut dyn RngCore,
    ) -> Self {
        Self {
            tape,
            mode,
            params,
            bound: HashMap::new(),
            track_grads,
            update_stats,
            rng,
            stat_updates: Vec::new(),
            trace: None,
        }
    }

    pub(crate) fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Tape handle for a parameter, recorded once per pass.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let p = self.params.by_id(id);
        let v = if self.track_grads && p.trainable {
            self.tape.variable(p.tensor.clone())?
        } else {
            self.tape.constant(p.tensor.clone())?
        };
        self.bound.insert(id, v);
        Ok(v)
    }

    /// Uses `var` for the named parameter instead of recording the stored
    /// value. Must be called before the parameter is first read.
    pub fn bind(&mut self, name: &str, var: Var) -> Result<()> {
        let id = self.params.id(name)?;
        if self.bound.insert(id, var).is_some() {
            return Err(Error::invalid(format!("parameter {name:?} is already bound")));
        }
        Ok(())
    }

    /// Parameter-id → tape handle for every parameter used so far.
    pub fn bindings(&self) -> &HashMap<usize, Var> {
        &self.bound
    }

    pub fn into_parts(self) -> (HashMap<usize, Var>, Vec<(usize, Vec<T>)>, Option<Vec<LayerSummary>>) {
        (self.bound, self.stat_updates, self.trace)
    }

    fn record(&mut self, layer: &Layer, out: Var) {
        if self.trace.is_none() {
            return;
        }
        let shape = self.tape.shape(out)[1..].to_vec();
        let params = layer
            .param_names()
            .iter()
            .filter_map(|n| self.params.get(n).ok())
            .map(|p| p.tensor.numel())
            .sum();
        let row = LayerSummary {
            kind: layer.kind().to_string(),
            units: layer.units(),
            activation: layer.activation().map(|a| a.name().to_string()),
            output_shape: shape,
            params,
        };
        if let Some(trace) = &mut self.trace {
            trace.push(row);
        }
    }
}

/// One row of a model summary.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSummary {
    pub kind: String,
    pub units: Option<usize>,
    pub activation: Option<String>,
    /// Per-sample output shape (batch axis dropped).
    pub output_shape: Vec<usize>,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dLayer {
    pub kernel: String,
    pub bias: Option<String>,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
    pub filters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2dLayer {
    pub kernel: String,
    pub bias: Option<String>,
    pub stride: usize,
    pub pad: usize,
    pub filters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: String,
    pub bias: String,
    pub activation: Activation,
    pub units: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutLayer {
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NormKind {
    Layer,
    Batch {
        running_mean: String,
        running_var: String,
        momentum: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormLayer {
    pub kind: NormKind,
    pub gamma: String,
    pub beta: String,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub q: (String, String),
    pub k: (String, String),
    pub v: (String, String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    pub heads: Vec<HeadParams>,
    pub out: (String, String),
    pub dim: usize,
}

impl AttentionBlock {
    pub fn key_dim(&self) -> usize {
        self.dim / self.heads.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d(Conv2dLayer),
    ConvTranspose2d(ConvTranspose2dLayer),
    MaxPool2d,
    Flatten,
    /// Reshape to `[N, ..shape]`.
    Reshape(Vec<usize>),
    Dense(DenseLayer),
    Dropout(DropoutLayer),
    Norm(NormLayer),
    Activation(Activation),
    /// Maps `[-1, 1]` to `[0, 1]`.
    Rescale01,
    PatchExtract {
        patch: usize,
    },
    Attention(AttentionBlock),
    GlobalAvgPool,
    /// `x + f(x)` where `f` is the inner stack.
    Residual(Vec<Layer>),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "Conv2D",
            Layer::ConvTranspose2d(_) => "Conv2DTranspose",
            Layer::MaxPool2d => "MaxPooling2D",
            Layer::Flatten => "Flatten",
            Layer::Reshape(_) => "Reshape",
            Layer::Dense(_) => "Dense",
            Layer::Dropout(_) => "Dropout",
            Layer::Norm(NormLayer {
                kind: NormKind::Layer,
                ..
            }) => "Layer Normalization",
            Layer::Norm(_) => "BatchNormalization",
            Layer::Activation(_) => "Activation",
            Layer::Rescale01 => "Rescale",
            Layer::PatchExtract { .. } => "Patch Extractor",
            Layer::Attention(_) => "MultiHead Attention",
            Layer::GlobalAvgPool => "Global Average Pooling1D",
            Layer::Residual(_) => "Add",
        }
    }

    pub fn units(&self) -> Option<usize> {
        match self {
            Layer::Conv2d(c) => Some(c.filters),
            Layer::ConvTranspose2d(c) => Some(c.filters),
            Layer::Dense(d) => Some(d.units),
            _ => None,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self {
            Layer::Conv2d(c) => Some(c.activation),
            Layer::Dense(d) => Some(d.activation),
            Layer::Activation(a) => Some(*a),
            _ => None,
        }
        .filter(|a| *a != Activation::Identity)
    }

    /// Parameters this layer reads directly (not those of nested layers).
    pub fn param_names(&self) -> Vec<&str> {
        match self {
            Layer::Conv2d(c) => std::iter::once(c.kernel.as_str()).chain(c.bias.as_deref()).collect(),
            Layer::ConvTranspose2d(c) => std::iter::once(c.kernel.as_str()).chain(c.bias.as_deref()).collect(),
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Norm(n) => {
                let mut v = vec![n.gamma.as_str(), n.beta.as_str()];
                if let NormKind::Batch {
                    running_mean,
                    running_var,
                    ..
                } = &n.kind
                {
                    v.push(running_mean);
                    v.push(running_var);
                }
                v
            }
            Layer::Attention(a) => {
                let mut v = Vec::new();
                for h in &a.heads {
                    for (w, b) in [&h.q, &h.k, &h.v] {
                        v.push(w.as_str());
                        v.push(b.as_str());
                    }
                }
                v.push(&a.out.0);
                v.push(&a.out.1);
                v
            }
            _ => vec![],
        }
    }

    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let out = match self {
            Layer::Conv2d(c) => {
                let k = ctx.param(&c.kernel)?;
                let b = c.bias.as_deref().map(|n| ctx.param(n)).transpose()?;
                let y = ctx.tape.conv2d_padded(x, k, b, c.stride, c.pad)?;
                ctx.tape.activation(y, c.activation)?
            }
            Layer::ConvTranspose2d(c) => {
                let k = ctx.param(&c.kernel)?;
                let y = ctx.tape.conv2d_transpose(x, k, c.stride, c.pad)?;
                match c.bias.as_deref() {
                    Some(n) => {
                        let b = ctx.param(n)?;
                        ctx.tape.add_bias(y, b)?
                    }
                    None => y,
                }
            }
            Layer::MaxPool2d => ctx.tape.maxpool2d(x)?,
            Layer::Flatten => flatten(ctx.tape, x)?,
            Layer::Reshape(shape) => {
                let mut full = vec![ctx.tape.shape(x)[0]];
                full.extend(shape);
                ctx.tape.reshape(x, full)?
            }
            Layer::Dense(d) => {
                let (w, b) = (ctx.param(&d.weight)?, ctx.param(&d.bias)?);
                dense(ctx.tape, x, w, b, d.activation)?
            }
            Layer::Dropout(d) => dropout(ctx.tape, x, d.rate, ctx.mode, ctx.rng)?,
            Layer::Norm(n) => self.norm_forward(n, ctx, x)?,
            Layer::Activation(a) => ctx.tape.activation(x, *a)?,
            Layer::Rescale01 => {
                let y = ctx.tape.scale(x, 0.5)?;
                ctx.tape.add_scalar(y, 0.5)?
            }
            Layer::PatchExtract { patch } => extract_patches(ctx.tape, x, *patch)?,
            Layer::Attention(a) => {
                let mut heads = Vec::with_capacity(a.heads.len());
                for h in &a.heads {
                    heads.push(HeadVars {
                        q: (ctx.param(&h.q.0)?, ctx.param(&h.q.1)?),
                        k: (ctx.param(&h.k.0)?, ctx.param(&h.k.1)?),
                        v: (ctx.param(&h.v.0)?, ctx.param(&h.v.1)?),
                    });
                }
                let out = (ctx.param(&a.out.0)?, ctx.param(&a.out.1)?);
                multi_head_attention(ctx.tape, x, &heads, out)?.output
            }
            Layer::GlobalAvgPool => ctx.tape.mean_axis1(x)?,
            Layer::Residual(inner) => {
                let mut y = x;
                for layer in inner {
                    y = layer.forward(ctx, y)?;
                }
                ctx.tape.add(x, y)?
            }
        };
        ctx.record(self, out);
        Ok(out)
    }

    fn norm_forward<T: Element>(&self, n: &NormLayer, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.param(&n.gamma)?, ctx.param(&n.beta)?);
        match &n.kind {
            NormKind::Layer => ctx.tape.layer_norm(x, g, b, n.eps),
            NormKind::Batch {
                running_mean,
                running_var,
                momentum,
            } => {
                let mean_id = ctx.params.id(running_mean)?;
                let var_id = ctx.params.id(running_var)?;
                if ctx.mode == Mode::Eval {
                    let rm = ctx.params.by_id(mean_id).tensor.data();
                    let rv = ctx.params.by_id(var_id).tensor.data();
                    let (y, _) = ctx.tape.batch_norm(x, g, b, n.eps, Some((rm, rv)))?;
                    return Ok(y);
                }
                if ctx.tape.value(x).numel() == *ctx.tape.shape(x).last().expect("rank >= 1") {
                    return Err(Error::invalid("batch norm in train mode needs more than one value per channel"));
                }
                let (y, stats) = ctx.tape.batch_norm(x, g, b, n.eps, None)?;
                if ctx.update_stats {
                    let (mean, var) = stats.expect("batch statistics in train mode");
                    let m = T::from_f64_lossy(*momentum);
                    let blend = |old: &[T], new: &[T]| -> Vec<T> {
                        old.iter()
                            .zip(new)
                            .map(|(&o, &v)| m * o + (T::one() - m) * v)
                            .collect()
                    };
                    let new_mean = blend(ctx.params.by_id(mean_id).tensor.data(), &mean);
                    let new_var = blend(ctx.params.by_id(var_id).tensor.data(), &var);
                    ctx.stat_updates.push((mean_id, new_mean));
                    ctx.stat_updates.push((var_id, new_var));
                }
                Ok(y)
            }
        }
    }
}
