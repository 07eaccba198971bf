//! Thresholding reconstruction errors, classification metrics and error
//! histograms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ThresholdMethod {
    /// `q`-th percentile (0..=100) of normal-row errors, linear interpolation.
    Percentile { q: f64 },
    Fixed { value: f64 },
}

impl Default for ThresholdMethod {
    fn default() -> Self {
        ThresholdMethod::Percentile { q: 95.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel<T> {
    pub threshold: T,
    pub method: ThresholdMethod,
    pub calibration_size: usize,
}

/// Linear-interpolation percentile of already sorted values.
fn percentile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn calibrate_threshold<T: Scalar>(
    errors: &[T],
    labels: &[Label],
    method: ThresholdMethod,
) -> Result<ThresholdModel<T>> {
    if errors.len() != labels.len() {
        return Err(Error::Dimension { expected: errors.len(), found: labels.len() });
    }
    let mut normal: Vec<T> = errors
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Label::Normal)
        .map(|(e, _)| *e)
        .collect();
    if normal.is_empty() {
        return Err(Error::InvalidArgument("threshold calibration needs normal-labeled rows".into()));
    }
    if normal.iter().any(|e| !e.is_finite()) {
        return Err(Error::Numeric("non-finite reconstruction error".into()));
    }
    let threshold = match method {
        ThresholdMethod::Percentile { q } => {
            if !(0.0..=100.0).contains(&q) {
                return Err(Error::InvalidArgument(format!("percentile {q} outside [0, 100]")));
            }
            normal.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            percentile_sorted(&normal, q)
        }
        ThresholdMethod::Fixed { value } => {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!("fixed threshold {value} must be >= 0")));
            }
            T::of(value)
        }
    };
    Ok(ThresholdModel { threshold, method, calibration_size: normal.len() })
}

/// Errors strictly above the threshold are attacks.
pub fn classify<T: Scalar>(errors: &[T], t: &ThresholdModel<T>) -> Vec<Label> {
    errors
        .iter()
        .map(|e| if *e > t.threshold { Label::Attack } else { Label::Normal })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    fn from_counts(hit: usize, false_alarm: usize, miss: usize) -> Self {
        let precision = ratio(hit, hit + false_alarm);
        let recall = ratio(hit, hit + miss);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub false_positive_rate: f64,
    pub normal: ClassMetrics,
    pub attack: ClassMetrics,
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Binary metrics with attack as the positive class; macro values are the
/// unweighted mean over {normal, attack}.
pub fn evaluate(pred: &[Label], truth: &[Label]) -> Result<EvaluationReport> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension { expected: truth.len(), found: pred.len() });
    }
    let mut c = Confusion::default();
    for (p, t) in pred.iter().zip(truth) {
        match (t, p) {
            (Label::Attack, Label::Attack) => c.tp += 1,
            (Label::Normal, Label::Attack) => c.fp += 1,
            (Label::Normal, Label::Normal) => c.tn += 1,
            (Label::Attack, Label::Normal) => c.fn_ += 1,
        }
    }
    let attack = ClassMetrics::from_counts(c.tp, c.fp, c.fn_);
    let normal = ClassMetrics::from_counts(c.tn, c.fn_, c.fp);
    let macro_avg = ClassMetrics {
        precision: (attack.precision + normal.precision) / 2.0,
        recall: (attack.recall + normal.recall) / 2.0,
        f1: (attack.f1 + normal.f1) / 2.0,
    };
    Ok(EvaluationReport {
        rows: c.total(),
        confusion: c,
        accuracy: ratio(c.tp + c.tn, c.total()),
        false_positive_rate: ratio(c.fp, c.fp + c.tn),
        normal,
        attack,
        macro_avg,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin<T> {
    pub lo: T,
    pub hi: T,
    pub count_normal: usize,
    pub count_attack: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram<T> {
    pub bins: Vec<HistogramBin<T>>,
    pub bin_count: usize,
}

impl<T: Scalar> ErrorHistogram<T> {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count_normal,count_attack\n");
        for b in &self.bins {
            let _ = writeln!(s, "{},{},{},{}", b.lo, b.hi, b.count_normal, b.count_attack);
        }
        s
    }
}

/// Equal-width bins over `[0, max error]`, counts split by true label. The
/// maximum lands in the last bin.
pub fn export_error_histogram<T: Scalar>(
    errors: &[T],
    truth: &[Label],
    bin_count: usize,
) -> Result<ErrorHistogram<T>> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("histogram of no errors".into()));
    }
    if errors.len() != truth.len() {
        return Err(Error::Dimension { expected: errors.len(), found: truth.len() });
    }
    if bin_count == 0 {
        return Err(Error::InvalidArgument("bin_count must be positive".into()));
    }
    if errors.iter().any(|e| !e.is_finite() || *e < T::zero()) {
        return Err(Error::Numeric("errors must be finite and non-negative".into()));
    }
    let max = errors.iter().copied().fold(T::zero(), T::max);
    let width = max / T::of_usize(bin_count);
    let mut bins: Vec<HistogramBin<T>> = (0..bin_count)
        .map(|k| HistogramBin {
            lo: width * T::of_usize(k),
            hi: if k + 1 == bin_count { max } else { width * T::of_usize(k + 1) },
            count_normal: 0,
            count_attack: 0,
        })
        .collect();
    for (e, l) in errors.iter().zip(truth) {
        let k = if width > T::zero() {
            (*e / width).to_usize().unwrap_or(bin_count).min(bin_count - 1)
        } else {
            bin_count - 1
        };
        match l {
            Label::Normal => bins[k].count_normal += 1,
            Label::Attack => bins[k].count_attack += 1,
        }
    }
    Ok(ErrorHistogram { bins, bin_count })
}
