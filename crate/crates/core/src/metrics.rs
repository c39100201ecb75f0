//! Pixel-level quality metrics: accuracy, precision, recall, F1 and IoU.
//!
//! Zero denominators resolve to 0 while the union of prediction and ground
//! truth is non-empty. When both are empty (`tp + fp + fn == 0`) every metric
//! is 1.
//!
//! Dataset-level "mIoU" is the positive-class IoU of the globally summed
//! confusion counts ([`aggregate_global`]). A per-image mean is available as a
//! diagnostic ([`aggregate_per_image_mean`]).

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty sequence")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            tp: self.tp + rhs.tp,
            tn: self.tn + rhs.tn,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// The five metrics as ratios in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(rename = "miou")]
    pub iou: f64,
    /// Absent for per-image means, which have no single confusion table.
    #[serde(rename = "counts", default, skip_serializing_if = "Option::is_none")]
    pub source_counts: Option<ConfusionCounts>,
}

impl MetricReport {
    /// Values in table order (accuracy, precision, recall, F1, mIoU) as
    /// percentages.
    pub fn percentages(&self) -> [f64; 5] {
        [
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.iou,
        ]
        .map(|v| v * 100.0)
    }

    /// Percentages formatted with two decimals, slash separated.
    pub fn percent_line(&self) -> String {
        self.percentages()
            .iter()
            .map(|v| format!("{v:.2}"))
            .collect::<Vec<_>>()
            .join("/")
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(c: ConfusionCounts) -> MetricReport {
    if c.tp + c.fp + c.fn_ == 0 {
        return MetricReport {
            accuracy: 1.0,
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            iou: 1.0,
            source_counts: Some(c),
        };
    }
    let accuracy = ratio(c.tp + c.tn, c.total());
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let iou = ratio(c.tp, c.tp + c.fp + c.fn_);
    MetricReport {
        accuracy,
        precision,
        recall,
        f1,
        iou,
        source_counts: Some(c),
    }
}

/// Sums the counts of every image, then evaluates the metrics once.
pub fn aggregate_global<'a, I>(counts: I) -> Result<MetricReport, MetricsError>
where
    I: IntoIterator<Item = &'a ConfusionCounts>,
{
    let mut iter = counts.into_iter().peekable();
    if iter.peek().is_none() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(compute_metrics(iter.copied().sum()))
}

pub fn aggregate_per_image_mean(reports: &[MetricReport]) -> Result<MetricReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        accuracy: mean(|r| r.accuracy),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        iou: mean(|r| r.iou),
        source_counts: None,
    })
}

/// IoU implied by an F1 score under a single confusion table:
/// `F1 = 2·IoU/(1+IoU)` inverts to `IoU = F1/(2−F1)`.
pub fn iou_from_f1(f1: f64) -> f64 {
    f1 / (2.0 - f1)
}

pub fn f1_from_iou(iou: f64) -> f64 {
    2.0 * iou / (1.0 + iou)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn ten_pixel_case() {
        let r = compute_metrics(ConfusionCounts::new(3, 5, 1, 1));
        assert!(close(r.accuracy, 0.8));
        assert!(close(r.precision, 0.75));
        assert!(close(r.recall, 0.75));
        assert!(close(r.f1, 0.75));
        assert!(close(r.iou, 0.6));
        assert_eq!(r.percent_line(), "80.00/75.00/75.00/75.00/60.00");
    }

    #[test]
    fn perfect_prediction() {
        let r = compute_metrics(ConfusionCounts::new(7, 3, 0, 0));
        assert_eq!(r.percentages(), [100.0; 5]);
    }

    #[test]
    fn zero_tp_is_all_zero() {
        let r = compute_metrics(ConfusionCounts::new(0, 4, 2, 3));
        assert_eq!((r.precision, r.recall, r.f1, r.iou), (0.0, 0.0, 0.0, 0.0));
        assert!(close(r.accuracy, 4.0 / 9.0));
        // fp only: precision denominator non-zero, recall denominator zero
        let r = compute_metrics(ConfusionCounts::new(0, 4, 2, 0));
        assert_eq!((r.precision, r.recall, r.f1, r.iou), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn both_empty_is_all_one() {
        let r = compute_metrics(ConfusionCounts::new(0, 9, 0, 0));
        assert_eq!(r.percentages(), [100.0; 5]);
        let r = compute_metrics(ConfusionCounts::default());
        assert_eq!(r.percentages(), [100.0; 5]);
    }

    #[test]
    fn global_aggregation() {
        let one = [ConfusionCounts::new(3, 5, 1, 1)];
        assert_eq!(
            aggregate_global(&one).unwrap(),
            compute_metrics(ConfusionCounts::new(3, 5, 1, 1))
        );

        let perfect = [
            ConfusionCounts::new(5, 5, 0, 0),
            ConfusionCounts::new(2, 8, 0, 0),
        ];
        assert_eq!(
            aggregate_global(&perfect).unwrap().percentages(),
            [100.0; 5]
        );

        let two = [
            ConfusionCounts::new(3, 5, 1, 1),
            ConfusionCounts::new(1, 7, 1, 1),
        ];
        let r = aggregate_global(&two).unwrap();
        assert_eq!(r.source_counts, Some(ConfusionCounts::new(4, 12, 2, 2)));
        assert!(close(r.accuracy, 0.8));
        assert!(close(r.precision, 2.0 / 3.0));
        assert!(close(r.recall, 2.0 / 3.0));
        assert!(close(r.f1, 2.0 / 3.0));
        assert!(close(r.iou, 0.5));

        assert_eq!(aggregate_global(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn per_image_mean() {
        let base = compute_metrics(ConfusionCounts::new(3, 5, 1, 1));
        let m = aggregate_per_image_mean(&[base, base]).unwrap();
        assert!(close(m.iou, base.iou) && close(m.f1, base.f1));
        assert_eq!(m.source_counts, None);

        let with_iou = |iou| MetricReport { iou, ..base };
        let m = aggregate_per_image_mean(&[with_iou(1.0), with_iou(0.0)]).unwrap();
        assert!(close(m.iou, 0.5));
        let m = aggregate_per_image_mean(&[with_iou(0.6), with_iou(0.5), with_iou(0.4)]).unwrap();
        assert!(close(m.iou, 0.5));

        assert_eq!(aggregate_per_image_mean(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn json_shape() {
        let r = compute_metrics(ConfusionCounts::new(3, 5, 1, 1));
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        assert_eq!(v["miou"], 0.6);
        assert_eq!(v["counts"]["fn"], 1);
        let mean = aggregate_per_image_mean(&[r]).unwrap();
        let v = serde_json::to_value(mean).unwrap();
        assert!(v.get("counts").is_none());
    }
}
