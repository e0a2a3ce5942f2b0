//! Confusion matrices, per-class rates, support-weighted reports and fold
//! aggregation. Class 1 (nodule) is the positive class of a [`ConfusionMatrix`].

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0} predictions for {1} labels")]
    Length(usize, usize),
    #[error("label {0} is not binary")]
    Label(u8),
    #[error("empty confusion matrix")]
    Empty,
    #[error("no reports to aggregate")]
    NoReports,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

pub const CLASS_NAMES: [&str; 2] = ["non-nodule", "nodule"];
pub const METRIC_NAMES: [&str; 5] = ["accuracy", "precision", "sensitivity", "f1", "specificity"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Samples whose true class is `class`.
    pub fn support(&self, class: u8) -> u64 {
        if class == 1 {
            self.tp + self.fn_
        } else {
            self.tn + self.fp
        }
    }

    /// The same matrix with `class` treated as positive.
    pub fn oriented(&self, class: u8) -> Self {
        if class == 1 {
            *self
        } else {
            Self { tp: self.tn, tn: self.tp, fp: self.fn_, fn_: self.fp }
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { tp: self.tp + o.tp, tn: self.tn + o.tn, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

pub fn confusion_matrix(pred: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(MetricsError::Length(pred.len(), truth.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            _ => return Err(MetricsError::Label(p.max(t))),
        }
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub specificity: f64,
    /// Some rate had a zero denominator and was set to 0.
    pub degenerate: bool,
}

impl ClassMetrics {
    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.sensitivity, self.f1, self.specificity]
    }
}

fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

/// The five rates for `class`, with TP/TN/FP/FN relabelled so that `class` is positive.
pub fn class_metrics(cm: &ConfusionMatrix, class: u8) -> ClassMetrics {
    let c = cm.oriented(class);
    let (tp, tn, fp, fneg) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let mut degenerate = false;
    let accuracy = ratio(tp + tn, tp + tn + fp + fneg, &mut degenerate);
    let precision = ratio(tp, tp + fp, &mut degenerate);
    let sensitivity = ratio(tp, tp + fneg, &mut degenerate);
    let f1 = ratio(2.0 * precision * sensitivity, precision + sensitivity, &mut degenerate);
    let specificity = ratio(tn, tn + fp, &mut degenerate);
    ClassMetrics { accuracy, precision, sensitivity, f1, specificity, degenerate }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub fold: Option<usize>,
    pub cm: ConfusionMatrix,
    /// Indexed by class: `[non-nodule, nodule]`.
    pub per_class: [ClassMetrics; 2],
    pub support: [u64; 2],
    pub weighted: ClassMetrics,
    pub overall_accuracy: f64,
    /// Only one class present.
    pub single_class: bool,
}

pub fn weighted_report(cm: &ConfusionMatrix, fold: Option<usize>) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let per_class = [class_metrics(cm, 0), class_metrics(cm, 1)];
    let support = [cm.support(0), cm.support(1)];
    let w = |f: fn(&ClassMetrics) -> f64| {
        (support[0] as f64 * f(&per_class[0]) + support[1] as f64 * f(&per_class[1])) / total as f64
    };
    let weighted = ClassMetrics {
        accuracy: w(|m| m.accuracy),
        precision: w(|m| m.precision),
        sensitivity: w(|m| m.sensitivity),
        f1: w(|m| m.f1),
        specificity: w(|m| m.specificity),
        degenerate: per_class[0].degenerate || per_class[1].degenerate,
    };
    Ok(MetricReport {
        fold,
        cm: *cm,
        per_class,
        support,
        weighted,
        overall_accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        single_class: support[0] == 0 || support[1] == 0,
    })
}

/// `(metric, class, value)` triples in a fixed order: overall accuracy, then
/// each metric for nodule, non-nodule and weighted.
pub fn report_entries(r: &MetricReport) -> Vec<(&'static str, &'static str, f64)> {
    let mut out = vec![("accuracy", "overall", r.overall_accuracy)];
    for (class, m) in [("nodule", &r.per_class[1]), ("non-nodule", &r.per_class[0]), ("weighted", &r.weighted)] {
        for (name, v) in METRIC_NAMES.iter().zip(m.values()) {
            out.push((name, class, v));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateEntry {
    pub metric: &'static str,
    pub class: &'static str,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn aggregate_folds(reports: &[MetricReport]) -> Result<Vec<AggregateEntry>> {
    let first = reports.first().ok_or(MetricsError::NoReports)?;
    let all: Vec<Vec<(&str, &str, f64)>> = reports.iter().map(report_entries).collect();
    let n = reports.len() as f64;
    Ok(report_entries(first)
        .iter()
        .enumerate()
        .map(|(k, &(metric, class, _))| {
            // offset by the first fold so identical folds give exactly zero spread
            let x0 = all[0][k].2;
            let mean = x0 + all.iter().map(|e| e[k].2 - x0).sum::<f64>() / n;
            let var = all.iter().map(|e| (e[k].2 - mean).powi(2)).sum::<f64>() / n;
            AggregateEntry { metric, class, mean, std: var.sqrt() }
        })
        .collect())
}

fn fold_label(fold: Option<usize>) -> String {
    fold.map_or_else(|| "all".to_string(), |f| f.to_string())
}

/// `metric,class,value,fold` rows for each report.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from("metric,class,value,fold\n");
    for r in reports {
        for (metric, class, v) in report_entries(r) {
            let _ = writeln!(s, "{metric},{class},{v},{}", fold_label(r.fold));
        }
    }
    s
}

/// Aligned text table of one report; both class orientations are printed.
pub fn report_to_text(r: &MetricReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "fold {}  tp={} tn={} fp={} fn={}", fold_label(r.fold), r.cm.tp, r.cm.tn, r.cm.fp, r.cm.fn_);
    let _ = writeln!(s, "{:<12}{:>10}{:>11}{:>12}{:>9}{:>12}{:>9}", "class", "accuracy", "precision", "sensitivity", "f1", "specificity", "support");
    let rows = [("nodule", &r.per_class[1], r.support[1]), ("non-nodule", &r.per_class[0], r.support[0]), ("weighted", &r.weighted, r.cm.total())];
    for (name, m, n) in rows {
        let _ = writeln!(
            s,
            "{:<12}{:>10.4}{:>11.4}{:>12.4}{:>9.4}{:>12.4}{:>9}",
            name, m.accuracy, m.precision, m.sensitivity, m.f1, m.specificity, n
        );
    }
    let _ = writeln!(s, "overall accuracy {:.4}", r.overall_accuracy);
    if r.single_class {
        let _ = writeln!(s, "warning: only one class present");
    } else if r.weighted.degenerate {
        let _ = writeln!(s, "warning: a rate had a zero denominator and was reported as 0");
    }
    s
}

pub fn aggregate_to_text(entries: &[AggregateEntry]) -> String {
    let mut s = format!("{:<12}{:<12}{:>10}{:>10}\n", "metric", "class", "mean", "std");
    for e in entries {
        let _ = writeln!(s, "{:<12}{:<12}{:>10.4}{:>10.4}", e.metric, e.class, e.mean, e.std);
    }
    s
}
