//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every operation appends a node holding its output value, the inputs it
//! read, and whatever forward values its backward rule needs. Nodes are
//! recorded in execution order, so the tape is already topologically sorted
//! and [`Tape::backward`] is a single reverse sweep.

mod gradcheck;
pub mod kernels;

pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_shape, Element, Tensor};
use kernels::{col2im, im2col, maxpool2x2, ConvGeom};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise (or, for softmax, per-row) nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    /// Softmax over the last axis.
    Softmax,
}

impl Activation {
    pub const LEAKY_SLOPE: f64 = 0.2;

    pub fn leaky() -> Self {
        Activation::LeakyRelu(Self::LEAKY_SLOPE)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Identity => "linear",
            Activation::Relu => "ReLU",
            Activation::LeakyRelu(_) => "LeakyReLU",
            Activation::Sigmoid => "Sigmoid",
            Activation::Tanh => "Tanh",
            Activation::Softmax => "Softmax",
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        transpose_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Activation(Var, Activation),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    MeanAxis1 {
        x: Var,
        rows: usize,
        inner: usize,
    },
    ConcatLast {
        parts: Vec<(Var, usize)>,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        x: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Normalize {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        layout: NormLayout,
    },
    Bce {
        pred: Var,
        labels: Vec<T>,
        clip: T,
    },
}

/// How a normalization op groups elements into statistics.
#[derive(Clone, Copy, Debug)]
enum NormLayout {
    /// Per row over the last axis (layer norm).
    Rows { width: usize },
    /// Per channel (last axis) over all other axes, with batch statistics.
    ChannelsBatch { channels: usize },
    /// Per channel with externally supplied statistics (batch norm, eval).
    ChannelsFixed { channels: usize },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::BatchMatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Square(x)
            | Op::Activation(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x) => vec![*x],
            Op::MeanAxis1 { x, .. } | Op::Gather { x, .. } | Op::MaxPool2d { x, .. } => vec![*x],
            Op::ConcatLast { parts } => parts.iter().map(|(v, _)| *v).collect(),
            Op::Conv2d {
                x, kernel, bias, ..
            } => {
                let mut v = vec![*x, *kernel];
                v.extend(bias);
                v
            }
            Op::ConvTranspose2d { x, kernel, .. } => vec![*x, *kernel],
            Op::Normalize { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Bce { pred, .. } => vec![*pred],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation. One tape per forward/backward pass.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn c<T: Element>(v: f64) -> T {
    T::from_f64_lossy(v)
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Result<Var> {
        if !tensor.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        tensor.clear_grad();
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Result<Var> {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    /// Records a leaf that receives a gradient.
    pub fn variable(&mut self, mut tensor: Tensor<T>) -> Result<Var> {
        tensor.set_requires_grad(true);
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient populated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Hash of every piecewise-linear branch taken so far: the sign of each
    /// ReLU-family input and each max-pool winner. Two evaluations with equal
    /// signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Activation(x, Activation::Relu | Activation::LeakyRelu(_)) => {
                    for &v in self.data(*x) {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2d { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    // ----- linear algebra -------------------------------------------------

    /// `[M,K] · [K,N] → [M,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b, m, k, n })
    }

    /// Batched product over the leading axis: `[B,M,K] · [B,K,N]`, or
    /// `[B,M,K] · [B,N,K]ᵀ` when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(Error::shape("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &da[i * m * k..],
                false,
                &db[i * k * n..],
                transpose_b,
                &mut out[i * m * n..],
                false,
            );
        }
        self.push(
            "bmm",
            vec![batch, m, n],
            out,
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                transpose_b,
            },
        )
    }

    // ----- elementwise ----------------------------------------------------

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push("add", self.shape(a).to_vec(), out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", self.shape(a).to_vec(), out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul(a, b))
    }

    /// Adds a `[D]` bias to every row of a `[..., D]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::shape("add_bias", sx, sb));
        }
        let d = sb[0];
        let b = self.data(bias);
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % d])
            .collect();
        self.push("add_bias", sx.to_vec(), out, Op::AddBias { x, bias })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f: T = c(factor);
        let out = self.data(x).iter().map(|&v| v * f).collect();
        self.push("scale", self.shape(x).to_vec(), out, Op::Scale(x, f))
    }

    pub fn add_scalar(&mut self, x: Var, value: f64) -> Result<Var> {
        let s: T = c(value);
        let out = self.data(x).iter().map(|&v| v + s).collect();
        self.push("add_scalar", self.shape(x).to_vec(), out, Op::AddScalar(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| v * v).collect();
        self.push("square", self.shape(x).to_vec(), out, Op::Square(x))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let xs = self.data(x);
        let out: Vec<T> = match kind {
            Activation::Identity => return Ok(x),
            Activation::Relu => xs.iter().map(|&v| v.max(T::zero())).collect(),
            Activation::LeakyRelu(slope) => {
                let s: T = c(slope);
                xs.iter()
                    .map(|&v| if v > T::zero() { v } else { v * s })
                    .collect()
            }
            Activation::Sigmoid => xs.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Tanh => xs.iter().map(|&v| v.tanh()).collect(),
            Activation::Softmax => {
                let width = *shape.last().expect("tensors have rank >= 1");
                let mut out = Vec::with_capacity(xs.len());
                for row in xs.chunks(width) {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let start = out.len();
                    out.extend(row.iter().map(|&v| (v - max).exp()));
                    let total: T = out[start..].iter().copied().sum();
                    out[start..].iter_mut().for_each(|v| *v = *v / total);
                }
                out
            }
        };
        self.push(kind.name(), shape, out, Op::Activation(x, kind))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Softmax)
    }

    // ----- reductions and shape -------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.data(x).iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n: T = c(self.value(x).numel() as f64);
        let s: T = self.data(x).iter().copied().sum();
        self.push("mean", vec![1], vec![s / n], Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel = check_shape(&shape)?;
        if numel != self.value(x).numel() {
            return Err(Error::shape("reshape", self.shape(x), &shape));
        }
        let data = self.data(x).to_vec();
        self.push("reshape", shape, data, Op::Reshape(x))
    }

    /// Mean over axis 1 of a `[N, P, D]` tensor, giving `[N, D]`.
    pub fn mean_axis1(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::shape("mean_axis1", s, &[0, 0, 0]));
        }
        let (n, p, d) = (s[0], s[1], s[2]);
        let xs = self.data(x);
        let inv: T = c(1.0 / p as f64);
        let mut out = vec![T::zero(); n * d];
        for b in 0..n {
            for i in 0..p {
                let row = &xs[(b * p + i) * d..(b * p + i + 1) * d];
                for (o, &v) in out[b * d..(b + 1) * d].iter_mut().zip(row) {
                    *o = *o + v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        self.push(
            "mean_axis1",
            vec![n, d],
            out,
            Op::MeanAxis1 {
                x,
                rows: p,
                inner: d,
            },
        )
    }

    /// Concatenates tensors along their last axis. Leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || &s[..lead.len()] != lead {
                return Err(Error::shape("concat_last", self.shape(first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let parts = parts.iter().copied().zip(widths).collect();
        self.push("concat_last", shape, out, Op::ConcatLast { parts })
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let numel = check_shape(&shape)?;
        if numel != index.len() {
            return Err(Error::invalid("gather index length must match output shape"));
        }
        let xs = self.data(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xs.len()) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of bounds for {} elements",
                xs.len()
            )));
        }
        let out = index.iter().map(|&i| xs[i]).collect();
        self.push("gather", shape, out, Op::Gather { x, index })
    }

    // ----- convolution and pooling ----------------------------------------

    /// Valid (unpadded) cross-correlation of `[N,H,W,Cin]` input with a
    /// `[Kh,Kw,Cin,Cout]` kernel, plus a `[Cout]` bias.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        self.conv2d_padded(x, kernel, Some(bias), stride, 0)
    }

    /// Cross-correlation with symmetric zero padding and optional bias.
    pub fn conv2d_padded(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sk[2] != sx[3] {
            return Err(Error::shape("conv2d", &sx, &sk));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let geom = ConvGeom::new(sx[0], sx[1], sx[2], sx[3], sk[0], sk[1], sk[3], stride, pad)
            .ok_or_else(|| Error::shape("conv2d (kernel larger than input)", &sx, &sk))?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.cout] {
                return Err(Error::shape("conv2d bias", self.shape(b), &[geom.cout]));
            }
        }
        let cols = im2col(self.data(x), &geom);
        let rows = geom.out_rows();
        let mut out = vec![T::zero(); rows * geom.cout];
        T::gemm(
            rows,
            geom.patch_len(),
            geom.cout,
            &cols,
            false,
            self.data(kernel),
            false,
            &mut out,
            false,
        );
        if let Some(b) = bias {
            let bs = self.data(b);
            for row in out.chunks_mut(geom.cout) {
                row.iter_mut().zip(bs).for_each(|(o, &v)| *o = *o + v);
            }
        }
        self.push(
            "conv2d",
            vec![geom.n, geom.oh, geom.ow, geom.cout],
            out,
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
                cols,
            },
        )
    }

    /// Transposed convolution: `[N,H,W,Cin]` with a `[Kh,Kw,Cout,Cin]` kernel
    /// gives `[N,H',W',Cout]`, `H' = (H−1)·stride − 2·pad + Kh`. This is the
    /// adjoint of `conv2d_padded` with the same kernel, stride and padding.
    pub fn conv2d_transpose(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sk[3] != sx[3] {
            return Err(Error::shape("conv2d_transpose", &sx, &sk));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d_transpose stride must be positive"));
        }
        let extent = |input: usize, k: usize| -> Result<usize> {
            let full = (input - 1) * stride + k;
            if full <= 2 * pad {
                return Err(Error::invalid(format!(
                    "conv2d_transpose output extent {}−{} is not positive",
                    full,
                    2 * pad
                )));
            }
            Ok(full - 2 * pad)
        };
        let (oh, ow) = (extent(sx[1], sk[0])?, extent(sx[2], sk[1])?);
        // Geometry of the forward convolution this op is the adjoint of.
        let geom = ConvGeom::new(sx[0], oh, ow, sk[2], sk[0], sk[1], sx[3], stride, pad)
            .filter(|g| g.oh == sx[1] && g.ow == sx[2])
            .ok_or_else(|| Error::shape("conv2d_transpose", &sx, &sk))?;
        let rows = geom.out_rows();
        let plen = geom.patch_len();
        let mut cols = vec![T::zero(); rows * plen];
        T::gemm(
            rows,
            geom.cout,
            plen,
            self.data(x),
            false,
            self.data(kernel),
            true,
            &mut cols,
            false,
        );
        let out = col2im(&cols, &geom);
        self.push(
            "conv2d_transpose",
            vec![sx[0], oh, ow, sk[2]],
            out,
            Op::ConvTranspose2d { x, kernel, geom },
        )
    }

    /// 2×2 max pooling with stride 2; a trailing odd row/column is dropped.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[1] < 2 || s[2] < 2 {
            return Err(Error::shape("maxpool2d (spatial extent < 2)", &s, &[2, 2]));
        }
        let (out, argmax) = maxpool2x2(self.data(x), s[0], s[1], s[2], s[3]);
        self.push(
            "maxpool2d",
            vec![s[0], s[1] / 2, s[2] / 2, s[3]],
            out,
            Op::MaxPool2d { x, argmax },
        )
    }

    // ----- normalization --------------------------------------------------

    /// Normalizes each row over the last axis, then applies `γ·x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let width = *self.shape(x).last().expect("rank >= 1");
        self.check_affine("layer_norm", x, gamma, beta, width)?;
        let xs = self.data(x);
        let rows = xs.len() / width;
        let mut xhat = vec![T::zero(); xs.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xs[r * width..(r + 1) * width];
            let (mean, var) = moments(row.iter().copied());
            let inv = T::one() / (var + c(eps)).sqrt();
            for (o, &v) in xhat[r * width..(r + 1) * width].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.finish_norm("layer_norm", x, gamma, beta, xhat, inv_std, NormLayout::Rows { width })
    }

    /// Batch normalization over every axis but the last (channels).
    ///
    /// With `stats = None` batch statistics are used and returned as
    /// `(mean, biased variance)` so the caller can update running averages.
    /// With `Some((mean, var))` those fixed statistics are used instead.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        stats: Option<(&[T], &[T])>,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let channels = *self.shape(x).last().expect("rank >= 1");
        self.check_affine("batch_norm", x, gamma, beta, channels)?;
        let xs = self.data(x);
        let rows = xs.len() / channels;
        let (mean, var, batch) = match stats {
            Some((m, v)) => {
                if m.len() != channels || v.len() != channels {
                    return Err(Error::shape("batch_norm stats", &[channels], &[m.len()]));
                }
                (m.to_vec(), v.to_vec(), false)
            }
            None => {
                let mut mean = Vec::with_capacity(channels);
                let mut var = Vec::with_capacity(channels);
                for ch in 0..channels {
                    let (m, v) = moments((0..rows).map(|r| xs[r * channels + ch]));
                    mean.push(m);
                    var.push(v);
                }
                (mean, var, true)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + c(eps)).sqrt()).collect();
        let xhat = xs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = i % channels;
                (v - mean[ch]) * inv_std[ch]
            })
            .collect();
        let layout = if batch {
            NormLayout::ChannelsBatch { channels }
        } else {
            NormLayout::ChannelsFixed { channels }
        };
        let out = self.finish_norm("batch_norm", x, gamma, beta, xhat, inv_std, layout)?;
        Ok((out, batch.then_some((mean, var))))
    }

    fn check_affine(&self, op: &'static str, x: Var, gamma: Var, beta: Var, width: usize) -> Result<()> {
        for p in [gamma, beta] {
            if self.shape(p) != [width] {
                return Err(Error::shape(op, self.shape(x), self.shape(p)));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_norm(
        &mut self,
        name: &'static str,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        layout: NormLayout,
    ) -> Result<Var> {
        let (g, b) = (self.data(gamma), self.data(beta));
        let width = g.len();
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| g[i % width] * v + b[i % width])
            .collect();
        self.push(
            name,
            self.shape(x).to_vec(),
            out,
            Op::Normalize {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
            },
        )
    }

    // ----- losses ---------------------------------------------------------

    /// Mean binary cross-entropy of probabilities `pred` against 0/1
    /// `labels`, with predictions clipped to `[clip, 1 − clip]`.
    ///
    /// The gradient is evaluated at the clipped prediction and passed straight
    /// through the clip, so a saturated wrong prediction still gets pushed back.
    pub fn bce(&mut self, pred: Var, labels: &[T], clip: f64) -> Result<Var> {
        let n = self.value(pred).numel();
        if n == 0 || labels.len() != n {
            return Err(Error::shape("bce", self.shape(pred), &[labels.len()]));
        }
        let clip: T = c(clip);
        let hi = T::one() - clip;
        let mut total = T::zero();
        for (&p, &y) in self.data(pred).iter().zip(labels) {
            let p = p.max(clip).min(hi);
            total = total - (y * p.ln() + (T::one() - y) * (T::one() - p).ln());
        }
        let loss = total / c(n as f64);
        self.push(
            "bce",
            vec![1],
            vec![loss],
            Op::Bce {
                pred,
                labels: labels.to_vec(),
                clip,
            },
        )
    }

    // ----- backward -------------------------------------------------------

    /// Back-propagates from a scalar `loss`, filling the gradient slot of
    /// every node that requires a gradient and is reachable from `loss`.
    /// Gradients from multiple uses of a node add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            self.nodes[i].value.set_grad(g)?;
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, contrib: Vec<T>| accumulate(grads, v, contrib);

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if needs(a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, false, self.data(b), true, &mut da, false);
                    send(a, da);
                }
                if needs(b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, self.data(a), true, g, false, &mut db, false);
                    send(b, db);
                }
            }
            &Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                transpose_b,
            } => {
                let (av, bv) = (self.data(a), self.data(b));
                if needs(a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    for t in 0..batch {
                        let (gt, bt) = (&g[t * m * n..], &bv[t * k * n..]);
                        // dA = G · op(B)ᵀ
                        T::gemm(m, n, k, gt, false, bt, !transpose_b, &mut da[t * m * k..], false);
                    }
                    send(a, da);
                }
                if needs(b) {
                    let mut db = vec![T::zero(); batch * k * n];
                    for t in 0..batch {
                        let (gt, at) = (&g[t * m * n..], &av[t * m * k..]);
                        if transpose_b {
                            T::gemm(n, m, k, gt, true, at, false, &mut db[t * k * n..], false);
                        } else {
                            T::gemm(k, m, n, at, true, gt, false, &mut db[t * k * n..], false);
                        }
                    }
                    send(b, db);
                }
            }
            &Op::Add(a, b) => {
                if needs(a) {
                    send(a, g.to_vec());
                }
                if needs(b) {
                    send(b, g.to_vec());
                }
            }
            &Op::Sub(a, b) => {
                if needs(a) {
                    send(a, g.to_vec());
                }
                if needs(b) {
                    send(b, g.iter().map(|&v| -v).collect());
                }
            }
            &Op::Mul(a, b) => {
                if needs(a) {
                    send(a, g.iter().zip(self.data(b)).map(|(&gv, &y)| gv * y).collect());
                }
                if needs(b) {
                    send(b, g.iter().zip(self.data(a)).map(|(&gv, &x)| gv * x).collect());
                }
            }
            &Op::AddBias { x, bias } => {
                if needs(x) {
                    send(x, g.to_vec());
                }
                if needs(bias) {
                    let d = self.value(bias).numel();
                    send(bias, column_sums(g, d));
                }
            }
            &Op::Scale(x, f) => send(x, g.iter().map(|&v| v * f).collect()),
            &Op::AddScalar(x) | &Op::Reshape(x) => send(x, g.to_vec()),
            &Op::Square(x) => {
                let two: T = c(2.0);
                send(x, g.iter().zip(self.data(x)).map(|(&gv, &v)| two * v * gv).collect())
            }
            &Op::Activation(x, kind) => {
                let (xs, ys) = (self.data(x), node.value.data());
                let dx = match kind {
                    Activation::Identity => g.to_vec(),
                    Activation::Relu => g
                        .iter()
                        .zip(xs)
                        .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                        .collect(),
                    Activation::LeakyRelu(slope) => {
                        let s: T = c(slope);
                        g.iter()
                            .zip(xs)
                            .map(|(&gv, &v)| if v > T::zero() { gv } else { gv * s })
                            .collect()
                    }
                    Activation::Sigmoid => g
                        .iter()
                        .zip(ys)
                        .map(|(&gv, &y)| gv * y * (T::one() - y))
                        .collect(),
                    Activation::Tanh => g
                        .iter()
                        .zip(ys)
                        .map(|(&gv, &y)| gv * (T::one() - y * y))
                        .collect(),
                    Activation::Softmax => {
                        let width = *node.value.shape().last().expect("rank >= 1");
                        let mut dx = Vec::with_capacity(g.len());
                        for (gr, yr) in g.chunks(width).zip(ys.chunks(width)) {
                            let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                            dx.extend(gr.iter().zip(yr).map(|(&gv, &y)| y * (gv - dot)));
                        }
                        dx
                    }
                };
                send(x, dx);
            }
            &Op::Sum(x) => send(x, vec![g[0]; self.value(x).numel()]),
            &Op::Mean(x) => {
                let n = self.value(x).numel();
                send(x, vec![g[0] / c(n as f64); n]);
            }
            &Op::MeanAxis1 { x, rows, inner } => {
                let inv: T = c(1.0 / rows as f64);
                let n = g.len() / inner;
                let mut dx = Vec::with_capacity(n * rows * inner);
                for b in 0..n {
                    for _ in 0..rows {
                        dx.extend(g[b * inner..(b + 1) * inner].iter().map(|&v| v * inv));
                    }
                }
                send(x, dx);
            }
            Op::ConcatLast { parts } => {
                let total: usize = parts.iter().map(|(_, w)| w).sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for &(p, w) in parts {
                    if needs(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        send(p, dp);
                    }
                    offset += w;
                }
            }
            Op::Gather { x, index } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&i, &gv) in index.iter().zip(g) {
                    dx[i] = dx[i] + gv;
                }
                send(*x, dx);
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let (rows, plen, cout) = (geom.out_rows(), geom.patch_len(), geom.cout);
                if needs(*kernel) {
                    let mut dk = vec![T::zero(); plen * cout];
                    T::gemm(plen, rows, cout, cols, true, g, false, &mut dk, false);
                    send(*kernel, dk);
                }
                if let Some(b) = *bias {
                    if needs(b) {
                        send(b, column_sums(g, cout));
                    }
                }
                if needs(*x) {
                    let mut dcols = vec![T::zero(); rows * plen];
                    T::gemm(rows, cout, plen, g, false, self.data(*kernel), true, &mut dcols, false);
                    send(*x, col2im(&dcols, geom));
                }
            }
            Op::ConvTranspose2d { x, kernel, geom } => {
                let (rows, plen, cin) = (geom.out_rows(), geom.patch_len(), geom.cout);
                let dcols = im2col(g, geom);
                if needs(*x) {
                    let mut dx = vec![T::zero(); rows * cin];
                    T::gemm(rows, plen, cin, &dcols, false, self.data(*kernel), false, &mut dx, false);
                    send(*x, dx);
                }
                if needs(*kernel) {
                    let mut dk = vec![T::zero(); plen * cin];
                    T::gemm(plen, rows, cin, &dcols, true, self.data(*x), false, &mut dk, false);
                    send(*kernel, dk);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&i, &gv) in argmax.iter().zip(g) {
                    dx[i] = dx[i] + gv;
                }
                send(*x, dx);
            }
            Op::Normalize {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
            } => {
                let width = self.value(*gamma).numel();
                if needs(*gamma) {
                    let prod: Vec<T> = g.iter().zip(xhat).map(|(&a, &b)| a * b).collect();
                    send(*gamma, column_sums(&prod, width));
                }
                if needs(*beta) {
                    send(*beta, column_sums(g, width));
                }
                if needs(*x) {
                    let gam = self.data(*gamma);
                    let dxhat: Vec<T> = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv * gam[i % width])
                        .collect();
                    send(*x, norm_input_grad(&dxhat, xhat, inv_std, *layout));
                }
            }
            Op::Bce { pred, labels, clip } => {
                let n: T = c(labels.len() as f64);
                let hi = T::one() - *clip;
                let dp = self
                    .data(*pred)
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| {
                        let p = p.max(*clip).min(hi);
                        g[0] * (p - y) / (p * (T::one() - p)) / n
                    })
                    .collect();
                send(*pred, dp);
            }
        }
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .iter_mut()
            .zip(contrib)
            .for_each(|(e, c)| *e = *e + c),
        slot @ None => *slot = Some(contrib),
    }
}

fn column_sums<T: Element>(g: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); width];
    for row in g.chunks(width) {
        out.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
    }
    out
}

fn moments<T: Element>(values: impl Iterator<Item = T> + Clone) -> (T, T) {
    let mut n = 0usize;
    let mut sum = T::zero();
    for v in values.clone() {
        sum = sum + v;
        n += 1;
    }
    let mean = sum / c(n as f64);
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<T>() / c(n as f64);
    (mean, var)
}

/// dx for `x̂ = (x − μ)·s` given dx̂, where μ and s come from the same
/// group of `m` elements (batch statistics) or are constants (fixed).
fn norm_input_grad<T: Element>(dxhat: &[T], xhat: &[T], inv_std: &[T], layout: NormLayout) -> Vec<T> {
    match layout {
        NormLayout::Rows { width } => {
            let m: T = c(width as f64);
            let mut dx = Vec::with_capacity(dxhat.len());
            for (r, (dr, xr)) in dxhat.chunks(width).zip(xhat.chunks(width)).enumerate() {
                let s1: T = dr.iter().copied().sum();
                let s2: T = dr.iter().zip(xr).map(|(&a, &b)| a * b).sum();
                let k = inv_std[r] / m;
                dx.extend(dr.iter().zip(xr).map(|(&d, &xh)| k * (m * d - s1 - xh * s2)));
            }
            dx
        }
        NormLayout::ChannelsBatch { channels } => {
            let m: T = c((dxhat.len() / channels) as f64);
            let s1 = column_sums(dxhat, channels);
            let prod: Vec<T> = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).collect();
            let s2 = column_sums(&prod, channels);
            dxhat
                .iter()
                .zip(xhat)
                .enumerate()
                .map(|(i, (&d, &xh))| {
                    let ch = i % channels;
                    inv_std[ch] / m * (m * d - s1[ch] - xh * s2[ch])
                })
                .collect()
        }
        NormLayout::ChannelsFixed { channels } => dxhat
            .iter()
            .enumerate()
            .map(|(i, &d)| d * inv_std[i % channels])
            .collect(),
    }
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut tape = Tape::<f64>::new();
        let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.])).unwrap();
        let b = tape.constant(t(&[2, 2], &[5., 6., 7., 8.])).unwrap();
        let y = tape.matmul(eye, b).unwrap();
        assert_eq!(tape.data(y), &[5., 6., 7., 8.]);

        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.])).unwrap();
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(y), &[19., 22., 43., 50.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]).unwrap()).unwrap();
        let b = tape.constant(Tensor::zeros(vec![2, 3]).unwrap()).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn conv2d_all_ones_sums_window() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![1, 3, 3, 1], 1.0).unwrap()).unwrap();
        let k = tape.constant(Tensor::full(vec![3, 3, 1, 1], 1.0).unwrap()).unwrap();
        let b = tape.constant(Tensor::zeros(vec![1]).unwrap()).unwrap();
        let y = tape.conv2d(x, k, b, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.data(y), &[9.0]);
    }

    #[test]
    fn conv2d_output_extent_and_kernel_too_large() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 5, 5, 1]).unwrap()).unwrap();
        let k = tape.constant(Tensor::zeros(vec![3, 3, 1, 2]).unwrap()).unwrap();
        let b = tape.constant(Tensor::zeros(vec![2]).unwrap()).unwrap();
        let y = tape.conv2d(x, k, b, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 3, 2]);

        let small = tape.constant(Tensor::zeros(vec![1, 2, 2, 1]).unwrap()).unwrap();
        assert!(matches!(tape.conv2d(small, k, b, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn conv2d_one_by_one_identity() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = tape.constant(t(&[1, 2, 2, 3], &data)).unwrap();
        let eye3 = [1., 0., 0., 0., 1., 0., 0., 0., 1.];
        let k = tape.constant(t(&[1, 1, 3, 3], &eye3)).unwrap();
        let b = tape.constant(Tensor::zeros(vec![3]).unwrap()).unwrap();
        let y = tape.conv2d(x, k, b, 1).unwrap();
        assert_eq!(tape.data(y), data.as_slice());
    }

    #[test]
    fn conv_transpose_extent_and_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 8, 8, 2]).unwrap()).unwrap();
        let k = tape.constant(Tensor::zeros(vec![4, 4, 3, 2]).unwrap()).unwrap();
        let y = tape.conv2d_transpose(x, k, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 16, 16, 3]);

        let data: Vec<f64> = (0..9).map(|v| v as f64 * 0.5).collect();
        let x = tape.constant(t(&[1, 3, 3, 1], &data)).unwrap();
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0])).unwrap();
        let y = tape.conv2d_transpose(x, k, 1, 0).unwrap();
        assert_eq!(tape.data(y), data.as_slice());
    }

    #[test]
    fn conv_transpose_rejects_non_positive_extent() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 1, 1]).unwrap()).unwrap();
        let k = tape.constant(Tensor::zeros(vec![1, 1, 1, 1]).unwrap()).unwrap();
        assert!(tape.conv2d_transpose(x, k, 1, 1).is_err());
    }

    #[test]
    fn maxpool_window_max_and_floor_rule() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2, 2, 1], &[1., 2., 3., 4.])).unwrap();
        let y = tape.maxpool2d(x).unwrap();
        assert_eq!(tape.data(y), &[4.0]);

        let x = tape.constant(Tensor::full(vec![1, 5, 5, 2], 0.3).unwrap()).unwrap();
        let y = tape.maxpool2d(x).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2, 2]);
        assert!(tape.data(y).iter().all(|&v| v == 0.3));

        let x = tape.constant(Tensor::zeros(vec![1, 1, 4, 1]).unwrap()).unwrap();
        assert!(tape.maxpool2d(x).is_err());
    }

    #[test]
    fn activations_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[-1.0, 2.0])).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.data(y), &[0.0, 2.0]);
        let z = tape.constant(t(&[1], &[0.0])).unwrap();
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.data(s), &[0.5]);
        let one = tape.constant(t(&[1, 1], &[3.7])).unwrap();
        let sm = tape.softmax(one).unwrap();
        assert_eq!(tape.data(sm), &[1.0]);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut tape = Tape::<f32>::new();
        let x = tape
            .constant(Tensor::from_f64(vec![1, 3], &[1000.0, 1000.0, 999.0]).unwrap())
            .unwrap();
        let y = tape.softmax(x).unwrap();
        let total: f32 = tape.data(y).iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[2], &[1.0, 2.0])).unwrap();
        let sq = tape.square(x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), Some(&[2.0, 4.0][..]));
    }

    #[test]
    fn backward_accumulates_across_fan_out() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[2], &[1.0, 2.0])).unwrap();
        let a = tape.scale(x, 3.0).unwrap();
        let b = tape.scale(x, 5.0).unwrap();
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), Some(&[8.0, 8.0][..]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[2], &[1.0, 2.0])).unwrap();
        let k = tape.constant(t(&[2], &[3.0, 4.0])).unwrap();
        let p = tape.mul(x, k).unwrap();
        let loss = tape.sum(p).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), Some(&[3.0, 4.0][..]));
        assert_eq!(tape.grad(k), None);
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape
            .constant(Tensor::from_f64(vec![1], &[1e30]).unwrap())
            .unwrap();
        assert!(matches!(tape.square(x), Err(Error::NonFinite("square"))));
    }

    #[test]
    fn bce_reference_values() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(t(&[1, 1], &[0.5])).unwrap();
        let l = tape.bce(p, &[1.0], 1e-7).unwrap();
        assert!((tape.data(l)[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
