#![allow(dead_code)]
//! Gradient checks shared by the `gradients` tests and the acceptance run:
//! reverse-mode gradients against central finite differences (f64, h = 1e-4)
//! for every differentiable op and layer, 20 random instances each. Each case
//! panics on the first failing instance.

use acdl::autodiff::{grad_check, grad_check_with, Activation, Tape, Var};
use acdl::models::{build_cnn, build_dcgan, build_ftcnn, build_vit, ImageSpec, ModelGraph, VitConfig};
use acdl::nn::{self, HeadVars, Mode};
use acdl::optim::{bce_loss, lsgan_d_loss, lsgan_g_loss};
use acdl::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const INSTANCES: usize = 20;
/// Elements sampled per input in whole-model checks.
const SAMPLED: usize = 12;
/// Minimum finite-difference comparisons per whole-model check.
const MIN_COMPARED: usize = 100;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values in ±[0.05, 1], away from the kinks of ReLU-like functions.
fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced ≥ 0.01 apart, so max-pool windows have a clear winner.
fn distinct_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn check<F>(name: &str, seed: u64, mut make: impl FnMut(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, F))
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let (inputs, f) = make(&mut r);
        let report = grad_check(f, &inputs, TOL).unwrap();
        worst = worst.max(report.max_rel_error);
        assert!(report.passed, "{name} instance {i}: {report:?}");
        assert_eq!(report.skipped_nonsmooth, 0, "{name} instance {i}: inputs avoid kinks");
    }
    eprintln!("{name}: max rel error {worst:.2e}");
}

pub fn matmul() {
    check("matmul", 1, |r| {
        let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
        (vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[k, n])], |t: &mut Tape<f64>, v: &[Var]| {
            t.matmul(v[0], v[1])
        })
    });
}

pub fn batched_matmul_both_layouts() {
    check("bmm", 2, |r| {
        let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
        (vec![rand_tensor(r, &[b, m, k]), rand_tensor(r, &[b, k, n])], |t: &mut Tape<f64>, v: &[Var]| {
            t.bmm(v[0], v[1], false)
        })
    });
    check("bmm_transposed", 3, |r| {
        let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
        (vec![rand_tensor(r, &[b, m, k]), rand_tensor(r, &[b, n, k])], |t: &mut Tape<f64>, v: &[Var]| {
            t.bmm(v[0], v[1], true)
        })
    });
}

pub fn elementwise_binary() {
    for (name, seed) in [("add", 4u64), ("sub", 5), ("mul", 6)] {
        check(name, seed, |r| {
            let shape = [dim(r, 1, 3), dim(r, 1, 4)];
            let f = move |t: &mut Tape<f64>, v: &[Var]| match name {
                "add" => t.add(v[0], v[1]),
                "sub" => t.sub(v[0], v[1]),
                _ => t.mul(v[0], v[1]),
            };
            (vec![rand_tensor(r, &shape), rand_tensor(r, &shape)], f)
        });
    }
}

pub fn bias_scale_square_and_reductions() {
    check("add_bias", 7, |r| {
        let (n, d) = (dim(r, 1, 4), dim(r, 1, 4));
        (vec![rand_tensor(r, &[n, 2, d]), rand_tensor(r, &[d])], |t: &mut Tape<f64>, v: &[Var]| {
            t.add_bias(v[0], v[1])
        })
    });
    check("scale_add_scalar_square", 8, |r| {
        let shape = [dim(r, 1, 5)];
        (vec![rand_tensor(r, &shape)], |t: &mut Tape<f64>, v: &[Var]| {
            let a = t.scale(v[0], -1.7)?;
            let b = t.add_scalar(a, 0.3)?;
            t.square(b)
        })
    });
    check("sum_mean", 9, |r| {
        let shape = [dim(r, 1, 3), dim(r, 1, 3)];
        (vec![rand_tensor(r, &shape)], |t: &mut Tape<f64>, v: &[Var]| {
            let sq = t.square(v[0])?;
            let s = t.sum(sq)?;
            let m = t.mean(v[0])?;
            t.mul(s, m)
        })
    });
    check("reshape_mean_axis1", 10, |r| {
        let (n, p, d) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 3));
        (vec![rand_tensor(r, &[n * p * d])], move |t: &mut Tape<f64>, v: &[Var]| {
            let x = t.reshape(v[0], vec![n, p, d])?;
            let sq = t.square(x)?;
            t.mean_axis1(sq)
        })
    });
    check("concat_gather", 11, |r| {
        let (n, a, b) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
        let picks: Vec<usize> = (0..5).map(|_| r.random_range(0..n * (a + b))).collect();
        (
            vec![rand_tensor(r, &[n, a]), rand_tensor(r, &[n, b])],
            move |t: &mut Tape<f64>, v: &[Var]| {
                let c = t.concat_last(&[v[0], v[1], v[0]])?;
                t.gather(c, picks.clone(), vec![5])
            },
        )
    });
}

pub fn activations() {
    let kinds = [
        Activation::Relu,
        Activation::leaky(),
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Softmax,
    ];
    for (i, kind) in kinds.into_iter().enumerate() {
        check(kind.name(), 20 + i as u64, |r| {
            let shape = [dim(r, 1, 3), dim(r, 1, 5)];
            (vec![rand_tensor(r, &shape)], move |t: &mut Tape<f64>, v: &[Var]| {
                t.activation(v[0], kind)
            })
        });
    }
}

pub fn sigmoid_meets_tight_bound() {
    let mut r = rng(30);
    for _ in 0..INSTANCES {
        let x = rand_tensor(&mut r, &[6]);
        let rep = grad_check(|t, v| t.sigmoid(v[0]), &[x], 1e-6).unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}

pub fn conv2d_valid_and_strided() {
    check("conv2d", 40, |r| {
        let (n, cin, cout) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3));
        let (k, stride) = (dim(r, 1, 3), dim(r, 1, 2));
        let (h, w) = (dim(r, k, 6), dim(r, k, 6));
        (
            vec![
                rand_tensor(r, &[n, h, w, cin]),
                rand_tensor(r, &[k, k, cin, cout]),
                rand_tensor(r, &[cout]),
            ],
            move |t: &mut Tape<f64>, v: &[Var]| t.conv2d(v[0], v[1], v[2], stride),
        )
    });
}

pub fn conv2d_padded_without_bias() {
    check("conv2d_padded", 41, |r| {
        let (cin, cout) = (dim(r, 1, 3), dim(r, 1, 3));
        let (h, w) = (dim(r, 2, 6), dim(r, 2, 6));
        (
            vec![rand_tensor(r, &[1, h, w, cin]), rand_tensor(r, &[4, 4, cin, cout])],
            |t: &mut Tape<f64>, v: &[Var]| t.conv2d_padded(v[0], v[1], None, 2, 1),
        )
    });
}

pub fn conv2d_transpose() {
    check("conv2d_transpose", 42, |r| {
        let (n, cin, cout) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3));
        let (h, w) = (dim(r, 1, 4), dim(r, 1, 4));
        let (k, stride, pad) = [(4, 2, 1), (3, 1, 1), (2, 2, 0), (3, 2, 0)][r.random_range(0..4)];
        (
            vec![rand_tensor(r, &[n, h, w, cin]), rand_tensor(r, &[k, k, cout, cin])],
            move |t: &mut Tape<f64>, v: &[Var]| t.conv2d_transpose(v[0], v[1], stride, pad),
        )
    });
}

pub fn maxpool_distinct_values() {
    check("maxpool2d", 43, |r| {
        let shape = [dim(r, 1, 2), dim(r, 2, 5), dim(r, 2, 5), dim(r, 1, 3)];
        (vec![distinct_tensor(r, &shape)], |t: &mut Tape<f64>, v: &[Var]| t.maxpool2d(v[0]))
    });
}

pub fn normalization() {
    check("layer_norm", 50, |r| {
        let (n, d) = (dim(r, 1, 3), dim(r, 2, 6));
        (
            vec![rand_tensor(r, &[n, 2, d]), rand_tensor(r, &[d]), rand_tensor(r, &[d])],
            |t: &mut Tape<f64>, v: &[Var]| t.layer_norm(v[0], v[1], v[2], 1e-5),
        )
    });
    check("batch_norm_batch_stats", 51, |r| {
        let (n, c) = (dim(r, 2, 3), dim(r, 1, 3));
        (
            vec![rand_tensor(r, &[n, 2, 2, c]), rand_tensor(r, &[c]), rand_tensor(r, &[c])],
            |t: &mut Tape<f64>, v: &[Var]| Ok(t.batch_norm(v[0], v[1], v[2], 1e-5, None)?.0),
        )
    });
    check("batch_norm_fixed_stats", 52, |r| {
        let c = dim(r, 1, 3);
        let mean: Vec<f64> = (0..c).map(|_| r.random_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..c).map(|_| r.random_range(0.2..2.0)).collect();
        (
            vec![rand_tensor(r, &[3, c]), rand_tensor(r, &[c]), rand_tensor(r, &[c])],
            move |t: &mut Tape<f64>, v: &[Var]| Ok(t.batch_norm(v[0], v[1], v[2], 1e-5, Some((&mean, &var)))?.0),
        )
    });
}

pub fn losses() {
    check("bce", 60, |r| {
        let n = dim(r, 1, 6);
        let probs: Vec<f64> = (0..n).map(|_| r.random_range(0.05..0.95)).collect();
        let labels: Vec<f64> = (0..n).map(|_| f64::from(r.random_bool(0.5))).collect();
        (vec![Tensor::new(vec![n, 1], probs).unwrap()], move |t: &mut Tape<f64>, v: &[Var]| {
            bce_loss(t, v[0], &labels)
        })
    });
    check("lsgan", 61, |r| {
        let n = dim(r, 1, 5);
        let mut unit = || Tensor::new(vec![n, 1], (0..n).map(|_| r.random_range(0.05..0.95)).collect()).unwrap();
        (vec![unit(), unit()], |t: &mut Tape<f64>, v: &[Var]| {
            let d = lsgan_d_loss(t, v[0], v[1])?;
            let g = lsgan_g_loss(t, v[1])?;
            t.add(d, g)
        })
    });
}

pub fn dense_layer() {
    check("dense", 70, |r| {
        let (n, i, o) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4));
        let act = [Activation::Identity, Activation::Relu, Activation::Sigmoid][r.random_range(0..3)];
        (
            vec![rand_tensor(r, &[n, i]), rand_tensor(r, &[i, o]), rand_tensor(r, &[o])],
            move |t: &mut Tape<f64>, v: &[Var]| nn::dense(t, v[0], v[1], v[2], act),
        )
    });
}

pub fn dropout_with_fixed_mask() {
    check("dropout", 71, |r| {
        let shape = [dim(r, 1, 3), dim(r, 2, 6)];
        let seed = r.random();
        (vec![rand_tensor(r, &shape)], move |t: &mut Tape<f64>, v: &[Var]| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            nn::dropout(t, v[0], 0.5, Mode::Train, &mut mask_rng)
        })
    });
}

pub fn attention_block() {
    check("multi_head_attention", 72, |r| {
        let heads = dim(r, 1, 2);
        let dk = dim(r, 1, 2);
        let d = heads * dk;
        let (b, p) = (dim(r, 1, 2), dim(r, 1, 3));
        let mut inputs = vec![rand_tensor(r, &[b, p, d])];
        for _ in 0..heads {
            for _ in 0..3 {
                inputs.push(rand_tensor(r, &[d, dk]));
                inputs.push(rand_tensor(r, &[dk]));
            }
        }
        inputs.push(rand_tensor(r, &[d, d]));
        inputs.push(rand_tensor(r, &[d]));
        (inputs, move |t: &mut Tape<f64>, v: &[Var]| {
            let hv: Vec<HeadVars> = (0..heads)
                .map(|h| {
                    let o = 1 + h * 6;
                    HeadVars {
                        q: (v[o], v[o + 1]),
                        k: (v[o + 2], v[o + 3]),
                        v: (v[o + 4], v[o + 5]),
                    }
                })
                .collect();
            let n = v.len();
            Ok(nn::multi_head_attention(t, v[0], &hv, (v[n - 2], v[n - 1]))?.output)
        })
    });
}

pub fn patch_extraction_and_pooling() {
    check("extract_patches", 73, |r| {
        let p = dim(r, 1, 2);
        let shape = [dim(r, 1, 2), p * dim(r, 1, 2), p * dim(r, 1, 2), dim(r, 1, 3)];
        (vec![rand_tensor(r, &shape)], move |t: &mut Tape<f64>, v: &[Var]| {
            let x = nn::extract_patches(t, v[0], p)?;
            let sq = t.square(x)?;
            nn::global_avg_pool(t, sq)
        })
    });
}

/// Checks a whole model's gradient with respect to its input and to one
/// randomly chosen parameter, sampling a few elements of each.
fn model_check(name: &str, model: ModelGraph<f64>, batch: usize, mode: Mode, seed: u64) {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    let names: Vec<String> = model
        .params
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.name.clone())
        .collect();
    for i in 0..INSTANCES {
        let mut shape = vec![batch];
        shape.extend(&model.input_shape);
        let x = rand_tensor(&mut r, &shape);
        let pname = names[r.random_range(0..names.len())].clone();
        let param = model.params.get(&pname).unwrap().tensor.clone();
        let picks: Vec<Vec<usize>> = [x.numel(), param.numel()]
            .iter()
            .map(|&n| (0..SAMPLED.min(n)).map(|_| r.random_range(0..n)).collect())
            .collect();
        let dropout_seed: u64 = r.random();
        let m = model.clone();
        let f = move |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
            let mut drng = ChaCha8Rng::seed_from_u64(dropout_seed);
            forward_with_param(&m, t, v[0], &pname, v[1], mode, &mut drng)
        };
        let rep = grad_check_with(f, &[x, param], TOL, |i, j| picks[i].contains(&j)).unwrap();
        worst = worst.max(rep.max_rel_error);
        checked += rep.checked;
        skipped += rep.skipped_nonsmooth;
        assert!(rep.passed, "{name} instance {i}: {rep:?}");
    }
    eprintln!("{name}: max rel error {worst:.2e}, {checked} compared, {skipped} on a branch switch");
    // Wide ReLU stacks switch some unit under almost any perturbation, so
    // skips are common; require enough compared elements to be meaningful.
    assert!(checked >= MIN_COMPARED, "{name}: only {checked} compared ({skipped} skipped)");
}

/// Forward pass in which one named parameter is read from an existing tape
/// variable instead of the store.
fn forward_with_param(
    model: &ModelGraph<f64>,
    tape: &mut Tape<f64>,
    x: Var,
    name: &str,
    var: Var,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let mut ctx = nn::ForwardCtx::new(tape, &model.params, mode, false, false, rng);
    ctx.bind(name, var)?;
    let mut y = x;
    for layer in &model.layers {
        y = layer.forward(&mut ctx, y)?;
    }
    Ok(y)
}

pub fn cnn_model_gradients() {
    let m = build_cnn(ImageSpec::new(22, 22, 1), 1).unwrap().cast::<f64>();
    model_check("cnn", m, 2, Mode::Train, 80);
}

pub fn ftcnn_model_gradients() {
    let m = build_ftcnn(ImageSpec::new(46, 46, 1), 2).unwrap().cast::<f64>();
    model_check("ftcnn", m, 2, Mode::Train, 81);
}

pub fn vit_model_gradients() {
    let cfg = VitConfig {
        input: ImageSpec::new(4, 4, 1),
        patch_size: 2,
        projection_dim: 4,
        heads: 2,
        transformer_layers: 1,
        mlp_hidden: 3,
    };
    let m = build_vit(cfg, 3).unwrap().cast::<f64>();
    model_check("vit", m, 2, Mode::Train, 82);
}

pub fn dcgan_gradients() {
    let (g, d) = build_dcgan(3, ImageSpec::new(16, 16, 1), 4).unwrap();
    model_check("generator", g.cast::<f64>(), 2, Mode::Train, 83);
    model_check("discriminator", d.cast::<f64>(), 2, Mode::Train, 84);
}

/// Every case, by name.
pub const CASES: &[(&str, fn())] = &[
    ("matmul", matmul),
    ("batched_matmul_both_layouts", batched_matmul_both_layouts),
    ("elementwise_binary", elementwise_binary),
    ("bias_scale_square_and_reductions", bias_scale_square_and_reductions),
    ("activations", activations),
    ("sigmoid_meets_tight_bound", sigmoid_meets_tight_bound),
    ("conv2d_valid_and_strided", conv2d_valid_and_strided),
    ("conv2d_padded_without_bias", conv2d_padded_without_bias),
    ("conv2d_transpose", conv2d_transpose),
    ("maxpool_distinct_values", maxpool_distinct_values),
    ("normalization", normalization),
    ("losses", losses),
    ("dense_layer", dense_layer),
    ("dropout_with_fixed_mask", dropout_with_fixed_mask),
    ("attention_block", attention_block),
    ("patch_extraction_and_pooling", patch_extraction_and_pooling),
    ("cnn_model_gradients", cnn_model_gradients),
    ("ftcnn_model_gradients", ftcnn_model_gradients),
    ("vit_model_gradients", vit_model_gradients),
    ("dcgan_gradients", dcgan_gradients),
];
