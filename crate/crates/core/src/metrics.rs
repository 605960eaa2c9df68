//! Multilabel precision, recall and ROC AUC with micro and macro averaging.
//!
//! Zero-division conventions:
//! - a label with no predicted positives has precision 0 (and stays in the macro mean);
//! - a label with no actual positives is left out of the macro recall mean;
//! - a label lacking either class is left out of the macro AUC mean;
//! - micro AUC pools every (sample, label) pair into one ranking problem and
//!   is an error when the pool holds a single class.

use std::fmt;

use crate::error::{LdamError, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    Micro,
    Macro,
}

fn check_shapes(scores: &[Vec<f64>], y: &[Vec<u8>]) -> Result<usize> {
    if scores.len() != y.len() {
        return Err(LdamError::Dimension(format!("{} score rows for {} label rows", scores.len(), y.len())));
    }
    let n_labels = y.first().map_or(0, Vec::len);
    for (s, t) in scores.iter().zip(y) {
        if s.len() != n_labels || t.len() != n_labels {
            return Err(LdamError::Dimension("ragged score or label rows".into()));
        }
    }
    Ok(n_labels)
}

/// Per-label confusion counts; a prediction is positive iff `score ≥ threshold`.
pub fn confusion_counts(scores: &[Vec<f64>], y: &[Vec<u8>], threshold: f64) -> Result<Vec<Confusion>> {
    let n_labels = check_shapes(scores, y)?;
    let mut counts = vec![Confusion::default(); n_labels];
    for (s_row, y_row) in scores.iter().zip(y) {
        for (j, c) in counts.iter_mut().enumerate() {
            match (s_row[j] >= threshold, y_row[j] == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(counts)
}

/// `(precision, recall)` under the given averaging.
pub fn precision_recall(counts: &[Confusion], averaging: Averaging) -> (f64, f64) {
    match averaging {
        Averaging::Micro => {
            let tp: usize = counts.iter().map(|c| c.tp).sum();
            let fp: usize = counts.iter().map(|c| c.fp).sum();
            let fn_: usize = counts.iter().map(|c| c.fn_).sum();
            (ratio(tp, tp + fp), ratio(tp, tp + fn_))
        }
        Averaging::Macro => {
            let precision = mean(counts.iter().map(Confusion::precision)).unwrap_or(0.0);
            let recall = mean(counts.iter().filter(|c| c.support() > 0).map(Confusion::recall)).unwrap_or(0.0);
            (precision, recall)
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mann–Whitney AUC with midranks for tied scores.
pub fn binary_auc(scores: &[f64], y: &[u8]) -> Result<f64> {
    if scores.len() != y.len() {
        return Err(LdamError::Dimension("scores and labels differ in length".into()));
    }
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(LdamError::Metric("ROC AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let midrank = (i + 1 + j) as f64 / 2.0;
        pos_rank_sum += midrank * order[i..j].iter().filter(|&&k| y[k] == 1).count() as f64;
        i = j;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Per-label AUCs; `None` for labels lacking a class.
pub fn per_label_auc(scores: &[Vec<f64>], y: &[Vec<u8>]) -> Result<Vec<Option<f64>>> {
    let n_labels = check_shapes(scores, y)?;
    Ok((0..n_labels)
        .map(|j| {
            let s: Vec<f64> = scores.iter().map(|r| r[j]).collect();
            let t: Vec<u8> = y.iter().map(|r| r[j]).collect();
            binary_auc(&s, &t).ok()
        })
        .collect())
}

pub fn roc_auc(scores: &[Vec<f64>], y: &[Vec<u8>], averaging: Averaging) -> Result<f64> {
    check_shapes(scores, y)?;
    match averaging {
        Averaging::Micro => {
            let s: Vec<f64> = scores.iter().flatten().copied().collect();
            let t: Vec<u8> = y.iter().flatten().copied().collect();
            binary_auc(&s, &t)
        }
        Averaging::Macro => mean(per_label_auc(scores, y)?.into_iter().flatten())
            .ok_or_else(|| LdamError::Metric("no label has both classes".into())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub micro_precision: f64,
    pub macro_precision: f64,
    pub micro_recall: f64,
    pub macro_recall: f64,
    pub micro_auc: f64,
    pub macro_auc: f64,
    pub per_label: Vec<LabelMetrics>,
}

impl MetricsReport {
    pub fn compute(scores: &[Vec<f64>], y: &[Vec<u8>], threshold: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(LdamError::Empty("no predictions to score".into()));
        }
        let counts = confusion_counts(scores, y, threshold)?;
        let (micro_precision, micro_recall) = precision_recall(&counts, Averaging::Micro);
        let (macro_precision, macro_recall) = precision_recall(&counts, Averaging::Macro);
        let aucs = per_label_auc(scores, y)?;
        let per_label = counts
            .iter()
            .zip(&aucs)
            .map(|(c, auc)| LabelMetrics {
                precision: c.precision(),
                recall: c.recall(),
                auc: *auc,
                support: c.support(),
            })
            .collect();
        Ok(Self {
            micro_precision,
            macro_precision,
            micro_recall,
            macro_recall,
            micro_auc: roc_auc(scores, y, Averaging::Micro)?,
            macro_auc: roc_auc(scores, y, Averaging::Macro)?,
            per_label,
        })
    }

    /// `averaging,precision,recall,roc_auc` with one row per averaging.
    pub fn to_csv(&self) -> String {
        format!(
            "averaging,precision,recall,roc_auc\nmicro,{},{},{}\nmacro,{},{},{}\n",
            self.micro_precision,
            self.micro_recall,
            self.micro_auc,
            self.macro_precision,
            self.macro_recall,
            self.macro_auc
        )
    }

    pub fn per_label_csv(&self, label_names: &[String]) -> String {
        let mut out = String::from("label,precision,recall,roc_auc,support\n");
        for (name, m) in label_names.iter().zip(&self.per_label) {
            let auc = m.auc.map_or(String::new(), |a| a.to_string());
            out.push_str(&format!(
                "\"{}\",{},{},{},{}\n",
                name.replace('"', "\"\""),
                m.precision,
                m.recall,
                auc,
                m.support
            ));
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let headers =
            ["Micro Precision", "Macro Precision", "Micro Recall", "Macro Recall", "Micro ROC AUC", "Macro ROC AUC"];
        let values = [
            self.micro_precision,
            self.macro_precision,
            self.micro_recall,
            self.macro_recall,
            self.micro_auc,
            self.macro_auc,
        ];
        writeln!(f, "| {} |", headers.join(" | "))?;
        writeln!(f, "|{}|", headers.iter().map(|h| "-".repeat(h.len() + 2)).collect::<Vec<_>>().join("|"))?;
        let cells: Vec<String> = headers.iter().zip(values).map(|(h, v)| format!("{v:>w$.4}", w = h.len())).collect();
        writeln!(f, "| {} |", cells.join(" | "))
    }
}
