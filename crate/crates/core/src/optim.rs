//! Adam and the training losses.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Element;

/// Probability clip applied before taking logs in binary cross-entropy.
pub const BCE_CLIP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub const fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Settings for the adversarial networks.
    pub const fn gan() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

/// Moment estimates and step counter for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub config: AdamConfig,
    pub step: u64,
    /// Per parameter id: `(m, v)`, allocated on first use.
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn moments(&self, id: usize) -> Option<(&[T], &[T])> {
        self.moments
            .get(id)
            .and_then(Option::as_ref)
            .map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One bias-corrected Adam update of every trainable parameter that has
    /// a gradient. Gradients are consumed.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let corr1 = T::from_f64_lossy(1.0 - c.beta1.powf(t));
        let corr2 = T::from_f64_lossy(1.0 - c.beta2.powf(t));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }

        for id in 0..params.len() {
            let p = params.by_id_mut(id);
            if !p.trainable {
                continue;
            }
            let Some(g) = p.tensor.take_grad() else { continue };
            if g.len() != p.tensor.numel() {
                return Err(Error::shape("adam_step", p.tensor.shape(), &[g.len()]));
            }
            let (m, v) = self.moments[id]
                .get_or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            if m.len() != g.len() {
                return Err(Error::shape("adam_step state", &[m.len()], &[g.len()]));
            }
            for (((theta, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi / corr1;
                let v_hat = *vi / corr2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !p.tensor.is_finite() {
                return Err(Error::NonFinite("adam_step"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLoss {
    #[default]
    Bce,
    Lsgan,
}

/// Mean binary cross-entropy with clipping.
pub fn bce_loss<T: Element>(tape: &mut Tape<T>, pred: Var, labels: &[T]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::invalid("binary cross-entropy of an empty batch"));
    }
    tape.bce(pred, labels, BCE_CLIP)
}

/// Plain-number binary cross-entropy, for evaluation passes.
pub fn bce_value(pred: &[f64], labels: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != labels.len() {
        return Err(Error::shape("bce", &[pred.len()], &[labels.len()]));
    }
    let total: f64 = pred
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Least-squares discriminator loss:
/// `0.5·mean((d_real − 1)²) + 0.5·mean(d_fake²)`.
pub fn lsgan_d_loss<T: Element>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let shifted = tape.add_scalar(d_real, -1.0)?;
    let sq = tape.square(shifted)?;
    let real = tape.mean(sq)?;
    let sq = tape.square(d_fake)?;
    let fake = tape.mean(sq)?;
    let total = tape.add(real, fake)?;
    tape.scale(total, 0.5)
}

/// Least-squares generator loss: `mean((d_fake − 1)²)`.
pub fn lsgan_g_loss<T: Element>(tape: &mut Tape<T>, d_fake: Var) -> Result<Var> {
    let shifted = tape.add_scalar(d_fake, -1.0)?;
    let sq = tape.square(shifted)?;
    tape.mean(sq)
}

/// Both least-squares losses as plain numbers.
pub fn lsgan_losses(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let mean = |xs: &[f64], f: &dyn Fn(f64) -> f64| xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64;
    let l_d = 0.5 * mean(d_real, &|x| (x - 1.0).powi(2)) + 0.5 * mean(d_fake, &|x| x * x);
    let l_g = mean(d_fake, &|x| (x - 1.0).powi(2));
    (l_d, l_g)
}
