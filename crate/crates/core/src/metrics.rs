//! Per-attribute accuracy and F1, sample-mean Jaccard and ROC curves.

use serde::Serialize;
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("no samples to evaluate")]
    Empty,
    #[error("labels contain a single class; ROC is undefined")]
    SingleClass,
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

pub fn confusion(pred: &[bool], truth: &[bool]) -> Result<Confusion, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        c.add(p, t);
    }
    Ok(c)
}

fn ratio<T: Scalar>(num: usize, den: usize) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::of_usize(num) / T::of_usize(den)
    }
}

/// `(accuracy, f1)`; any zero denominator in precision, recall or F1 gives 0.
pub fn accuracy_f1<T: Scalar>(c: &Confusion) -> (T, T) {
    let acc = ratio(c.tp + c.tn, c.total());
    let precision: T = ratio(c.tp, c.tp + c.fp);
    let recall: T = ratio(c.tp, c.tp + c.fn_);
    let denom = precision + recall;
    let f1 = if denom == T::zero() {
        T::zero()
    } else {
        T::of(2.0) * precision * recall / denom
    };
    (acc, f1)
}

/// Mean over samples of `|A & B| / |A | B|`, an empty/empty sample scoring 1.
pub fn jaccard<T: Scalar, S: AsRef<[bool]>>(pred: &[S], truth: &[S]) -> Result<T, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = T::zero();
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = (p.as_ref(), t.as_ref());
        if p.len() != t.len() {
            return Err(MetricError::LengthMismatch(p.len(), t.len()));
        }
        let inter = p.iter().zip(t).filter(|(a, b)| **a && **b).count();
        let union = p.iter().zip(t).filter(|(a, b)| **a || **b).count();
        total += if union == 0 { T::one() } else { ratio(inter, union) };
    }
    Ok(total / T::of_usize(pred.len()))
}

/// ROC points from thresholds swept over the distinct scores, descending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve<T> {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(T, T)>,
    /// Threshold reached at each point; the anchor has `+inf`.
    pub thresholds: Vec<T>,
    pub auc: T,
}

/// A sample counts as positive at threshold `s` when its score is `>= s`.
pub fn roc_curve<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<RocCurve<T>, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = vec![(T::zero(), T::zero())];
    let mut thresholds = vec![T::infinity()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((ratio(fp, neg), ratio(tp, pos)));
        thresholds.push(s);
    }
    let half = T::of(0.5);
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * half)
        .sum();
    Ok(RocCurve {
        points,
        thresholds,
        auc,
    })
}

/// Scores for one attribute across all samples.
#[derive(Debug, Clone, Serialize)]
pub struct AttributeScore {
    pub name: String,
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: Confusion,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub samples: usize,
    pub attributes: Vec<AttributeScore>,
    pub average_accuracy: f64,
    pub average_f1: f64,
    pub jaccard: f64,
}

impl MetricReport {
    /// Builds the report from predicted and true bits, one row per sample.
    /// With `scores`, also computes a per-attribute AUC (skipped for
    /// attributes whose labels are single-class).
    pub fn build<S: AsRef<[bool]>>(
        names: &[&str],
        pred: &[S],
        truth: &[S],
        scores: Option<&[Vec<f64>]>,
    ) -> Result<Self, MetricError> {
        if pred.len() != truth.len() {
            return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
        }
        if pred.is_empty() {
            return Err(MetricError::Empty);
        }
        for row in pred.iter().chain(truth) {
            if row.as_ref().len() != names.len() {
                return Err(MetricError::LengthMismatch(row.as_ref().len(), names.len()));
            }
        }
        let mut attributes = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let p: Vec<bool> = pred.iter().map(|r| r.as_ref()[j]).collect();
            let t: Vec<bool> = truth.iter().map(|r| r.as_ref()[j]).collect();
            let c = confusion(&p, &t)?;
            let (accuracy, f1) = accuracy_f1::<f64>(&c);
            let auc = match scores {
                Some(s) => {
                    let col: Vec<f64> = s.iter().map(|r| r[j]).collect();
                    match roc_curve(&col, &t) {
                        Ok(r) => Some(r.auc),
                        Err(MetricError::SingleClass) => None,
                        Err(e) => return Err(e),
                    }
                }
                None => None,
            };
            attributes.push(AttributeScore {
                name: name.to_string(),
                accuracy,
                f1,
                confusion: c,
                auc,
            });
        }
        let n = names.len().max(1) as f64;
        Ok(Self {
            samples: pred.len(),
            average_accuracy: attributes.iter().map(|a| a.accuracy).sum::<f64>() / n,
            average_f1: attributes.iter().map(|a| a.f1).sum::<f64>() / n,
            jaccard: jaccard(pred, truth)?,
            attributes,
        })
    }
}
