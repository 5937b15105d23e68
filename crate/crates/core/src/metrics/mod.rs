//! Binary classification metrics. The positive class is label 1.

mod report;

pub use report::{build_report, render_table, roc_csv, MetricsReport, ACCURACY_NOTE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// The same counts with label 0 treated as positive.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

fn check_binary(name: &str, values: &[u8]) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(i) => Err(Error::Metrics(format!("{name}[{i}] = {} is not 0 or 1", values[i]))),
        None => Ok(()),
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::Metrics(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Metrics("no samples".into()));
    }
    check_binary("labels", labels)?;
    check_binary("predictions", predictions)?;
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fp += 1,
            _ => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Precision, recall and F1 for one class. A metric whose denominator is
/// zero is reported as 0 with its `*_undefined` flag set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl ClassMetrics {
    /// Metrics of the positive class of `cm`.
    pub fn positive(cm: &ConfusionMatrix) -> Self {
        let (precision, precision_undefined) = ratio(cm.tp, cm.tp + cm.fp);
        let (recall, recall_undefined) = ratio(cm.tp, cm.tp + cm.fn_);
        // Harmonic mean of precision and recall, from counts so that
        // equal precision and recall give exactly that value. Its
        // denominator P + R vanishes exactly when there are no true
        // positives.
        let (f1, _) = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_);
        let f1_undefined = cm.tp == 0;
        Self {
            precision,
            recall,
            f1,
            support: cm.tp + cm.fn_,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasicMetrics {
    pub accuracy: f64,
    /// Indexed by label: `[0]` treats label 0 as positive.
    pub per_class: [ClassMetrics; 2],
}

impl BasicMetrics {
    pub fn positive(&self) -> &ClassMetrics {
        &self.per_class[1]
    }
}

/// Accuracy is `(tp + tn) / total`.
pub fn basic_metrics(cm: &ConfusionMatrix) -> Result<BasicMetrics> {
    if cm.total() == 0 {
        return Err(Error::Metrics("empty confusion matrix".into()));
    }
    Ok(BasicMetrics {
        accuracy: (cm.tp + cm.tn) as f64 / cm.total() as f64,
        per_class: [ClassMetrics::positive(&cm.swapped()), ClassMetrics::positive(cm)],
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `(macro, weighted)` averages. With zero total support the weighted
/// average falls back to the macro one.
pub fn averages(per_class: &[ClassMetrics]) -> Result<(Averages, Averages)> {
    if per_class.is_empty() {
        return Err(Error::Metrics("averages of zero classes".into()));
    }
    let n = per_class.len() as f64;
    let mut macro_avg = Averages::default();
    let mut weighted = Averages::default();
    let total: u64 = per_class.iter().map(|c| c.support).sum();
    for c in per_class {
        macro_avg.precision += c.precision / n;
        macro_avg.recall += c.recall / n;
        macro_avg.f1 += c.f1 / n;
        let w = c.support as f64;
        weighted.precision += c.precision * w;
        weighted.recall += c.recall * w;
        weighted.f1 += c.f1 * w;
    }
    if total == 0 {
        return Ok((macro_avg, macro_avg));
    }
    let t = total as f64;
    weighted.precision /= t;
    weighted.recall /= t;
    weighted.f1 /= t;
    Ok((macro_avg, weighted))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are predicted positive. The first point uses
    /// `+inf`, written as the string `"inf"` in JSON.
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else if *v > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Text("-inf".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve over the unique scores in descending order, starting at
/// `(0, 0)` and ending at `(1, 1)`, with trapezoidal AUC.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<Roc> {
    if labels.len() != scores.len() {
        return Err(Error::Metrics(format!("{} labels but {} scores", labels.len(), scores.len())));
    }
    check_binary("labels", labels)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Metrics(format!("score {i} is not finite")));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metrics("ROC needs at least one positive and one negative label".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("starts non-empty");
        let p = RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(Roc { points, auc })
}
