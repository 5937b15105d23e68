//! Reference implementations and published values shared by the core tests
//! and the acceptance run. Everything here is computed independently of the
//! library code it checks.
#![allow(dead_code)]

use acdl::data::ClassNames;
use acdl::metrics::{basic_metrics, confusion, roc_auc, Averages, ClassMetrics, ConfusionMatrix, MetricsReport};
use acdl::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn cm(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionMatrix {
    ConfusionMatrix { tp, tn, fp, fn_ }
}

pub fn class(precision: f64, recall: f64, f1: f64, support: u64) -> ClassMetrics {
    ClassMetrics { precision, recall, f1, support, precision_undefined: false, recall_undefined: false, f1_undefined: false }
}

/// Direct six-loop cross-correlation with zero padding.
pub fn naive_conv(
    x: &[f64],
    (n, h, w, cin): (usize, usize, usize, usize),
    k: &[f64],
    (kh, kw, cout): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for o in 0..cout {
                    let mut acc = bias[o];
                    for di in 0..kh {
                        for dj in 0..kw {
                            let (r, c) = ((i * stride + di) as isize - pad as isize, (j * stride + dj) as isize - pad as isize);
                            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x[((b * h + r as usize) * w + c as usize) * cin + ci];
                                acc += xv * k[((di * kw + dj) * cin + ci) * cout + o];
                            }
                        }
                    }
                    out[((b * oh + i) * ow + j) * cout + o] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// `cases` random conv2d instances up to 2×9×9×4, compared with [`naive_conv`]
/// to 1e-6 absolute.
pub fn conv_matches_naive_loops(cases: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.random_range(1..=2);
        let h = rng.random_range(3..=9);
        let w = rng.random_range(3..=9);
        let cin = rng.random_range(1..=4);
        let cout = rng.random_range(1..=4);
        let kh = rng.random_range(1..=3.min(h));
        let kw = rng.random_range(1..=3.min(w));
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=1);
        let x = random(&mut rng, &[n, h, w, cin]);
        let k = random(&mut rng, &[kh, kw, cin, cout]);
        let b = random(&mut rng, &[cout]);
        let (expected, oh, ow) = naive_conv(x.data(), (n, h, w, cin), k.data(), (kh, kw, cout), b.data(), stride, pad);

        let mut tape = Tape::<f64>::new();
        let (xv, kv, bv) = (tape.constant(x).unwrap(), tape.constant(k).unwrap(), tape.constant(b).unwrap());
        let y = tape.conv2d_padded(xv, kv, Some(bv), stride, pad).unwrap();
        assert_eq!(tape.shape(y), &[n, oh, ow, cout], "case {case}");
        for (a, e) in tape.data(y).iter().zip(&expected) {
            assert!((a - e).abs() <= 1e-6, "case {case}: {a} vs {e}");
        }
    }
}

/// Counts each metric straight from the definition, one sample at a time.
pub fn counting_oracle(labels: &[u8], preds: &[u8]) -> [(u64, u64); 9] {
    let n = labels.len() as u64;
    let mut correct = 0;
    let mut pred_pos = 0;
    let mut pred_pos_right = 0;
    let mut actual_pos = 0;
    let mut actual_pos_found = 0;
    let mut pred_neg = 0;
    let mut pred_neg_right = 0;
    for i in 0..labels.len() {
        if labels[i] == preds[i] {
            correct += 1;
        }
        if preds[i] == 1 {
            pred_pos += 1;
            if labels[i] == 1 {
                pred_pos_right += 1;
            }
        } else {
            pred_neg += 1;
            if labels[i] == 0 {
                pred_neg_right += 1;
            }
        }
        if labels[i] == 1 {
            actual_pos += 1;
            if preds[i] == 1 {
                actual_pos_found += 1;
            }
        }
    }
    let actual_neg = n - actual_pos;
    [
        (correct, n),
        (pred_pos_right, pred_pos),
        (actual_pos_found, actual_pos),
        (pred_neg_right, pred_neg),
        (pred_neg_right, actual_neg),
        (actual_pos, 1),
        (actual_neg, 1),
        (2 * pred_pos_right, pred_pos + actual_pos),
        (2 * pred_neg_right, pred_neg + actual_neg),
    ]
}

pub fn div(r: (u64, u64)) -> f64 {
    if r.1 == 0 { 0.0 } else { r.0 as f64 / r.1 as f64 }
}


/// `sets` random label/prediction sets; every metric must equal the counting
/// oracle exactly.
pub fn metrics_match_counting_oracle(sets: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..sets {
        let n = rng.random_range(1..60);
        let bias: f64 = rng.random();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(bias))).collect();
        let preds: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let m = basic_metrics(&confusion(&labels, &preds).unwrap()).unwrap();
        let o = counting_oracle(&labels, &preds);
        assert_eq!(m.accuracy, div(o[0]));
        let pos = m.positive();
        assert_eq!(pos.precision, div(o[1]));
        assert_eq!(pos.recall, div(o[2]));
        assert_eq!(pos.f1, div(o[7]));
        assert_eq!(pos.precision_undefined, o[1].1 == 0);
        assert_eq!(pos.support, o[5].0);
        let neg = &m.per_class[0];
        assert_eq!(neg.precision, div(o[3]));
        assert_eq!(neg.recall, div(o[4]));
        assert_eq!(neg.f1, div(o[8]));
        assert_eq!(neg.support, o[6].0);
    }
}

/// P(score⁺ > score⁻) + ½·P(tie) over all positive/negative pairs.
pub fn pairwise_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// `sets` random score sets, half of them heavily tied; the swept AUC must
/// match [`pairwise_auc`] within 1e-9.
pub fn auc_matches_pairwise_oracle(sets: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..sets {
        let n = rng.random_range(2..80);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        labels[0] = 1;
        labels[1] = 0;
        // Coarse scores on some cases force many ties.
        let levels = if case % 2 == 0 { 5 } else { 1000 };
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) / f64::from(levels)).collect();
        let roc = roc_auc(&labels, &scores).unwrap();
        let oracle = pairwise_auc(&labels, &scores);
        assert!((roc.auc - oracle).abs() <= 1e-9, "case {case}: {} vs {oracle}", roc.auc);
    }
}

/// CNN rows of the published classification report.
pub fn table_cnn() -> MetricsReport {
    MetricsReport {
        model: "CNN".into(),
        class_names: ClassNames::default(),
        per_class: [class(0.82, 0.96, 0.88, 50), class(0.96, 0.81, 0.88, 50)],
        accuracy: 0.88,
        macro_avg: Averages { precision: 0.89, recall: 0.885, f1: 0.88 },
        weighted_avg: Averages { precision: 0.89, recall: 0.88, f1: 0.88 },
        confusion: cm(40, 48, 2, 10),
        roc: Vec::new(),
        auc: None,
    }
}

