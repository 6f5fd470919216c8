use crate::error::{Error, Result};

/// Classification quality over a set of labeled predictions.
///
/// `confusion[t][p]` counts samples with true class `t` predicted as `p`.
/// Per-class entries are `None` where undefined: accuracy for a class with no
/// ground-truth samples, IoU for a class absent from both truth and
/// prediction. The mean IoU averages only the defined entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub confusion: Vec<Vec<u64>>,
    pub seconds: f64,
}

impl MetricsReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.confusion.len()).map(|c| self.confusion[c][c]).sum()
    }
}

pub fn compute_metrics(pred: &[u32], truth: &[u32], classes: usize) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p as usize >= classes || t as usize >= classes {
            return Err(Error::InvalidArgument(format!(
                "label pair ({t}, {p}) out of range for {classes} classes"
            )));
        }
        confusion[t as usize][p as usize] += 1;
    }
    let total = pred.len() as u64;
    let trace: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let mut per_class_accuracy = Vec::with_capacity(classes);
    let mut iou = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = confusion[c][c];
        let truth_c: u64 = confusion[c].iter().sum();
        let pred_c: u64 = confusion.iter().map(|row| row[c]).sum();
        let fn_ = truth_c - tp;
        let fp = pred_c - tp;
        per_class_accuracy.push((truth_c > 0).then(|| tp as f64 / truth_c as f64));
        let denom = tp + fp + fn_;
        iou.push((denom > 0).then(|| tp as f64 / denom as f64));
    }
    let defined: Vec<f64> = iou.iter().flatten().copied().collect();
    let mean_iou = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(MetricsReport {
        accuracy: trace as f64 / total as f64,
        per_class_accuracy,
        iou,
        mean_iou,
        confusion,
        seconds: 0.0,
    })
}
