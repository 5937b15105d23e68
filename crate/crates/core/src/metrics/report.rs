use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{averages, basic_metrics, confusion, roc_auc, Averages, ClassMetrics, ConfusionMatrix, RocPoint};
use crate::data::ClassNames;
use crate::error::Result;

/// Footer printed under every rendered table.
pub const ACCURACY_NOTE: &str = "Note: accuracy = (TP + TN) / (TP + TN + FP + FN). \
A numerator of TP alone would cap a perfect classifier at the positive share of the data.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub class_names: ClassNames,
    /// Indexed by label.
    pub per_class: [ClassMetrics; 2],
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub confusion: ConfusionMatrix,
    /// Empty when the labels hold a single class.
    pub roc: Vec<RocPoint>,
    pub auc: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn build_report(model: &str, labels: &[u8], predictions: &[u8], scores: &[f64]) -> Result<MetricsReport> {
    let cm = confusion(labels, predictions)?;
    let basic = basic_metrics(&cm)?;
    let (macro_avg, weighted_avg) = averages(&basic.per_class)?;
    let single_class = labels.iter().all(|&y| y == labels[0]);
    let (roc, auc) = if single_class {
        (Vec::new(), None)
    } else {
        let r = roc_auc(labels, scores)?;
        (r.points, Some(r.auc))
    };
    Ok(MetricsReport {
        model: model.to_string(),
        class_names: ClassNames::default(),
        per_class: basic.per_class,
        accuracy: basic.accuracy,
        macro_avg,
        weighted_avg,
        confusion: cm,
        roc,
        auc,
    })
}

/// Two decimals, halves rounded up. The small offset keeps values such as
/// 0.815, stored just below the half, rounding the way they read.
fn cell(v: f64) -> String {
    format!("{:.2}", ((v * 100.0) + 0.5 + 1e-9).floor() / 100.0)
}

const COLS: [(&str, usize); 5] = [("Model", 12), ("Class", 14), ("Precision", 11), ("Recall", 8), ("F1-Score", 8)];

fn row(out: &mut String, cells: [&str; 5]) {
    let mut line = String::new();
    for (c, (_, w)) in cells.iter().zip(COLS) {
        let _ = write!(line, "{c:<w$}");
    }
    out.push_str(line.trim_end());
    out.push('\n');
}

/// Fixed-width table with one block of rows per model: each class, then the
/// weighted average. Accuracy and macro averages follow each table, then the
/// accuracy note.
pub fn render_table(reports: &[&MetricsReport]) -> String {
    let mut out = String::new();
    row(&mut out, COLS.map(|(h, _)| h));
    for r in reports {
        for label in 0..2 {
            let m = &r.per_class[label];
            let name = if label == 0 { r.model.as_str() } else { "" };
            row(&mut out, [name, display_class(r, label), &cell(m.precision), &cell(m.recall), &cell(m.f1)]);
        }
        let w = &r.weighted_avg;
        row(&mut out, ["", "Weighted Avg", &cell(w.precision), &cell(w.recall), &cell(w.f1)]);
    }
    out.push('\n');
    for r in reports {
        let m = &r.macro_avg;
        let _ = writeln!(
            out,
            "{}: accuracy {}  macro avg precision {} recall {} f1 {}{}",
            r.model,
            cell(r.accuracy),
            cell(m.precision),
            cell(m.recall),
            cell(m.f1),
            r.auc.map(|a| format!("  auc {}", cell(a))).unwrap_or_default()
        );
        let flagged: Vec<String> = (0..2)
            .flat_map(|l| {
                let c = &r.per_class[l];
                let name = display_class(r, l);
                [
                    (c.precision_undefined, "precision"),
                    (c.recall_undefined, "recall"),
                    (c.f1_undefined, "f1"),
                ]
                .into_iter()
                .filter(|(u, _)| *u)
                .map(move |(_, m)| format!("{name} {m}"))
            })
            .collect();
        if !flagged.is_empty() {
            let _ = writeln!(out, "{}: undefined (zero denominator, shown as 0): {}", r.model, flagged.join(", "));
        }
    }
    out.push('\n');
    out.push_str(ACCURACY_NOTE);
    out.push('\n');
    out
}

/// The negative class reads "No Accident" in reports, whatever its
/// directory name.
fn display_class(r: &MetricsReport, label: usize) -> &str {
    match (label, r.class_names.name(label)) {
        (0, "Non Accident") => "No Accident",
        (_, name) => name,
    }
}

/// `threshold,fpr,tpr`, one row per ROC point.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        let t = if p.threshold.is_infinite() {
            if p.threshold > 0.0 { "inf".to_string() } else { "-inf".to_string() }
        } else {
            format!("{}", p.threshold)
        };
        let _ = writeln!(out, "{t},{},{}", p.fpr, p.tpr);
    }
    out
}
