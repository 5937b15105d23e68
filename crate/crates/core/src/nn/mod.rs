//! Layer primitives on top of the tape, and the layer types models are
//! assembled from.

mod layers;
mod params;

pub use layers::{
    AttentionBlock, Conv2dLayer, ConvTranspose2dLayer, DenseLayer, DropoutLayer, ForwardCtx,
    HeadParams, Layer, LayerSummary, Mode, NormKind, NormLayer,
};
pub use params::{Param, ParamStore};

use rand::{Rng, RngCore};

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `f(x·W + b)` for `x` of shape `[N, in]` or `[N, P, in]`.
pub fn dense<T: Element>(tape: &mut Tape<T>, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (sw, sb) = (tape.shape(w).to_vec(), tape.shape(b).to_vec());
    if sw.len() != 2 || shape.len() < 2 || shape[shape.len() - 1] != sw[0] {
        return Err(Error::shape("dense", &shape, &sw));
    }
    if sb != [sw[1]] {
        return Err(Error::shape("dense bias", &sb, &[sw[1]]));
    }
    let rows = shape[..shape.len() - 1].iter().product();
    let flat = if shape.len() == 2 {
        x
    } else {
        tape.reshape(x, vec![rows, sw[0]])?
    };
    let y = tape.matmul(flat, w)?;
    let y = tape.add_bias(y, b)?;
    let y = if shape.len() == 2 {
        y
    } else {
        let mut out = shape.clone();
        *out.last_mut().expect("rank >= 2") = sw[1];
        tape.reshape(y, out)?
    };
    tape.activation(y, act)
}

/// Draws an inverted-dropout mask: each unit kept with probability
/// `1 − rate` and scaled by `1/(1 − rate)`.
pub fn dropout_mask<T: Element>(len: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<T> {
    let keep = 1.0 - rate;
    let scale = T::from_f64_lossy(1.0 / keep);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Dropout. In eval mode, or with `rate == 0`, returns `x` itself.
pub fn dropout<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let shape = tape.shape(x).to_vec();
    let mask = dropout_mask(tape.value(x).numel(), rate, rng);
    let m = tape.constant(Tensor::new(shape, mask)?)?;
    tape.mul(x, m)
}

/// Tape handles for one attention head's projections.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub q: (Var, Var),
    pub k: (Var, Var),
    pub v: (Var, Var),
}

/// Output of [`multi_head_attention`].
pub struct AttentionOut {
    pub output: Var,
    /// Per head, the `[B, P, P]` attention weights.
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product self-attention over `x: [B, P, D]`.
///
/// Each head projects to `d_k = D / heads`, attends with
/// `softmax(Q·Kᵀ/√d_k)·V`, and the concatenated heads go through the output
/// projection `(wo, bo)`.
pub fn multi_head_attention<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    heads: &[HeadVars],
    out: (Var, Var),
) -> Result<AttentionOut> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("attention input", &shape, &[0, 0, 0]));
    }
    let dim = shape[2];
    if heads.is_empty() || dim % heads.len() != 0 {
        return Err(Error::invalid(format!(
            "projection dim {dim} is not divisible by {} heads",
            heads.len()
        )));
    }
    let dk = dim / heads.len();
    let mut outputs = Vec::with_capacity(heads.len());
    let mut weights = Vec::with_capacity(heads.len());
    for h in heads {
        let q = dense(tape, x, h.q.0, h.q.1, Activation::Identity)?;
        let k = dense(tape, x, h.k.0, h.k.1, Activation::Identity)?;
        let v = dense(tape, x, h.v.0, h.v.1, Activation::Identity)?;
        if tape.shape(q)[2] != dk {
            return Err(Error::shape("attention head width", tape.shape(q), &[shape[0], shape[1], dk]));
        }
        let scores = tape.bmm(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
        let a = tape.softmax(scores)?;
        outputs.push(tape.bmm(a, v, false)?);
        weights.push(a);
    }
    let joined = if outputs.len() == 1 {
        outputs[0]
    } else {
        tape.concat_last(&outputs)?
    };
    let output = dense(tape, joined, out.0, out.1, Activation::Identity)?;
    Ok(AttentionOut { output, weights })
}

/// Flat source indices for non-overlapping `p×p` patches of an NHWC image,
/// patches in row-major order, each flattened channel-last.
pub fn patch_indices(n: usize, h: usize, w: usize, c: usize, p: usize) -> Result<Vec<usize>> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::invalid(format!(
            "patch size {p} does not divide image extent {h}×{w}"
        )));
    }
    let mut index = Vec::with_capacity(n * h * w * c);
    for b in 0..n {
        for py in 0..h / p {
            for px in 0..w / p {
                for dy in 0..p {
                    for dx in 0..p {
                        let base = ((b * h + py * p + dy) * w + px * p + dx) * c;
                        index.extend(base..base + c);
                    }
                }
            }
        }
    }
    Ok(index)
}

/// `[N, H, W, C]` → `[N, (H/P)·(W/P), P·P·C]`.
pub fn extract_patches<T: Element>(tape: &mut Tape<T>, x: Var, p: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::shape("extract_patches", &s, &[0, 0, 0, 0]));
    }
    let index = patch_indices(s[0], s[1], s[2], s[3], p)?;
    let count = (s[1] / p) * (s[2] / p);
    tape.gather(x, index, vec![s[0], count, p * p * s[3]])
}

/// Mean over the patch axis: `[N, P, D]` → `[N, D]`.
pub fn global_avg_pool<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    tape.mean_axis1(x)
}

/// `[N, ...]` → `[N, product(...)]`, preserving row-major order.
pub fn flatten<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x);
    let n = s[0];
    let rest = s[1..].iter().product();
    tape.reshape(x, vec![n, rest])
}
