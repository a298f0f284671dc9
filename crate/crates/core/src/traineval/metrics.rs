//! Saliency metrics on `[0, 1]` predictions against binary masks.
//!
//! Thresholded measures use `β² = 0.3`. The threshold sweep for max-F is the
//! grid `k/256, k = 0..=255`, a pixel counting as positive when
//! `pred ≥ t`. AUC is the exact ROC area over all distinct prediction
//! values, with the trapezoid rule.

use crate::error::{contract_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const BETA2: f64 = 0.3;
pub const FIXED_THRESHOLD: f64 = 0.5;
pub const GRID: usize = 256;

/// Precision is 1 when nothing is predicted positive, recall is 1 when the
/// target has no positives, and F is 0 when both vanish.
pub fn f_beta(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if precision == 0.0 && recall == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * precision * recall / (BETA2 * precision + recall)
    }
}

fn check<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(contract_err!(
            "prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        ));
    }
    Ok(())
}

fn positive<T: Real>(v: T) -> bool {
    v > T::lit(0.5)
}

pub fn mae<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check(pred, target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p.as_f64() - t.as_f64()).abs())
        .sum();
    Ok(sum / pred.numel() as f64)
}

pub fn fmeasure_at<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, threshold: f64) -> Result<f64> {
    check(pred, target)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, &t) in pred.data().iter().zip(target.data()) {
        match (p.as_f64() >= threshold, positive(t)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f_beta(tp, fp, fn_))
}

pub fn fmeasure<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    fmeasure_at(pred, target, FIXED_THRESHOLD)
}

/// Max F over the threshold grid, via per-bin counts.
pub fn max_fmeasure<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check(pred, target)?;
    let mut pos = [0usize; GRID];
    let mut neg = [0usize; GRID];
    for (p, &t) in pred.data().iter().zip(target.data()) {
        let bin = ((p.as_f64() * GRID as f64).floor().max(0.0) as usize).min(GRID - 1);
        if positive(t) {
            pos[bin] += 1;
        } else {
            neg[bin] += 1;
        }
    }
    let total_pos: usize = pos.iter().sum();
    let (mut tp, mut fp) = (0, 0);
    let mut best = 0.0f64;
    for k in (0..GRID).rev() {
        tp += pos[k];
        fp += neg[k];
        best = best.max(f_beta(tp, fp, total_pos - tp));
    }
    Ok(best)
}

/// ROC area; `None` when the target is all positive or all negative.
pub fn auc<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Option<f64>> {
    check(pred, target)?;
    let mut pairs: Vec<(f64, bool)> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, &t)| (p.as_f64(), positive(t)))
        .collect();
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_fpr, mut prev_tpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let fpr = fp as f64 / n_neg as f64;
        let tpr = tp as f64 / n_pos as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    Ok(Some(area))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMetrics {
    pub mae: f64,
    pub fmeasure: f64,
    pub max_f: f64,
    pub auc: Option<f64>,
}

impl SampleMetrics {
    pub fn compute<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Self> {
        Ok(Self {
            mae: mae(pred, target)?,
            fmeasure: fmeasure(pred, target)?,
            max_f: max_fmeasure(pred, target)?,
            auc: auc(pred, target)?,
        })
    }
}

/// Per-sample metrics and their means. The mean AUC skips samples whose
/// AUC is undefined and is `None` if all of them are.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub fmeasure: f64,
    pub max_f: f64,
    pub auc: Option<f64>,
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn from_samples(per_sample: Vec<SampleMetrics>) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(contract_err!("cannot summarize metrics over zero samples"));
        }
        let n = per_sample.len() as f64;
        let mean = |f: fn(&SampleMetrics) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
        let aucs: Vec<f64> = per_sample.iter().filter_map(|s| s.auc).collect();
        Ok(Self {
            mae: mean(|s| s.mae),
            fmeasure: mean(|s| s.fmeasure),
            max_f: mean(|s| s.max_f),
            auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            per_sample,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let m = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let s = SampleMetrics::compute(&m, &m).unwrap();
        assert_eq!(s.mae, 0.0);
        assert_eq!(s.fmeasure, 1.0);
        assert_eq!(s.max_f, 1.0);
        assert_eq!(s.auc, Some(1.0));
    }

    #[test]
    fn inverted_prediction_has_zero_auc() {
        let m = t(&[1, 4], &[1.0, 1.0, 0.0, 0.0]);
        let p = t(&[1, 4], &[0.1, 0.2, 0.8, 0.9]);
        assert_eq!(auc(&p, &m).unwrap(), Some(0.0));
    }

    #[test]
    fn constant_prediction_auc_is_half() {
        let m = t(&[1, 4], &[1.0, 0.0, 0.0, 1.0]);
        let p = t(&[1, 4], &[0.3; 4]);
        assert_eq!(auc(&p, &m).unwrap(), Some(0.5));
    }

    #[test]
    fn degenerate_cases() {
        let empty = t(&[1, 3], &[0.0; 3]);
        let full = t(&[1, 3], &[1.0; 3]);
        assert_eq!(auc(&empty, &empty).unwrap(), None);
        assert_eq!(auc(&full, &full).unwrap(), None);
        // nothing predicted, nothing present: P = R = 1
        assert_eq!(fmeasure(&empty, &empty).unwrap(), 1.0);
        // nothing predicted, something present: P = 1, R = 0
        assert!((fmeasure(&empty, &full).unwrap() - 0.0).abs() < 1e-15);
        assert_eq!(f_beta(0, 3, 0), 0.0);
        assert_eq!(f_beta(0, 0, 0), 1.0);
    }

    #[test]
    fn threshold_half_is_inclusive() {
        let m = t(&[1, 2], &[1.0, 0.0]);
        let p = t(&[1, 2], &[0.5, 0.499]);
        assert_eq!(fmeasure(&p, &m).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_error() {
        assert!(mae(&t(&[1, 2], &[0.0; 2]), &t(&[2, 1], &[0.0; 2])).is_err());
    }

    #[test]
    fn report_means_skip_undefined_auc() {
        let a = SampleMetrics { mae: 0.2, fmeasure: 0.5, max_f: 0.6, auc: Some(0.8) };
        let b = SampleMetrics { mae: 0.4, fmeasure: 0.7, max_f: 0.8, auc: None };
        let r = MetricReport::from_samples(vec![a, b]).unwrap();
        assert!((r.mae - 0.3).abs() < 1e-15);
        assert_eq!(r.auc, Some(0.8));
        assert!(MetricReport::from_samples(vec![]).is_err());
    }
}
