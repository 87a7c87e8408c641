//! Confusion counts and the derived classification metrics. "fake" (1) is
//! the positive class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no samples to score")]
    EmptyInput,
    #[error("value {0} at index {1} is not a binary label")]
    NotBinary(u8, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
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
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&p, &l)) in predictions.iter().zip(labels).enumerate() {
        match (p, l) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            (v, _) if v > 1 => return Err(MetricsError::NotBinary(v, i)),
            (_, v) => return Err(MetricsError::NotBinary(v, i)),
        }
    }
    Ok(cm)
}

/// Metric values; `None` marks a zero denominator and serializes as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// 2·P·R / (P + R).
    pub f1_standard: Option<f64>,
    /// P·R / (P + R), the form without the factor of two.
    pub f1_halved: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let harmonic = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(p * r / (p + r)),
        _ => None,
    };
    Metrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        f1_standard: harmonic.map(|h| 2.0 * h),
        f1_halved: harmonic,
    }
}

/// CSV cell for a metric: the value, or `undefined`.
pub fn format_metric(m: Option<f64>) -> String {
    m.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixture_counts() {
        let p = [1, 1, 1, 0, 0, 0, 0, 1, 0, 0];
        let l = [1, 1, 0, 1, 0, 0, 0, 1, 1, 0];
        assert_eq!(
            confusion(&p, &l).unwrap(),
            ConfusionMatrix {
                tp: 3,
                tn: 4,
                fp: 1,
                fn_: 2
            }
        );
    }

    #[test]
    fn fixture_metrics() {
        let m = metrics_from_confusion(&ConfusionMatrix {
            tp: 3,
            tn: 4,
            fp: 1,
            fn_: 2,
        });
        assert_eq!(m.accuracy, Some(0.7));
        assert_eq!(m.precision, Some(0.75));
        assert_eq!(m.recall, Some(0.6));
        assert!((m.f1_standard.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1_halved.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn edge_cases() {
        let all_miss = confusion(&[0; 5], &[1; 5]).unwrap();
        assert_eq!((all_miss.tp, all_miss.fn_), (0, 5));
        let m = metrics_from_confusion(&all_miss);
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1_standard, None);

        let perfect = confusion(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!((perfect.fp, perfect.fn_), (0, 0));
        assert_eq!(metrics_from_confusion(&perfect).accuracy, Some(1.0));

        assert_eq!(
            confusion(&[1], &[1, 0]),
            Err(MetricsError::LengthMismatch {
                predictions: 1,
                labels: 2
            })
        );
        assert_eq!(confusion(&[], &[]), Err(MetricsError::EmptyInput));
        assert_eq!(confusion(&[2], &[1]), Err(MetricsError::NotBinary(2, 0)));
        assert_eq!(format_metric(None), "undefined");
    }

    #[test]
    fn undefined_serializes_as_null() {
        let m = metrics_from_confusion(&ConfusionMatrix {
            tp: 0,
            tn: 3,
            fp: 0,
            fn_: 0,
        });
        let v = serde_json::to_value(m).unwrap();
        assert!(v["precision"].is_null());
        assert_eq!(v["accuracy"], 1.0);
    }

    proptest! {
        #[test]
        fn identities(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            let cm = ConfusionMatrix { tp, tn, fp, fn_ };
            prop_assume!(cm.total() > 0);
            let m = metrics_from_confusion(&cm);
            prop_assert_eq!(m.accuracy, Some((tp + tn) as f64 / cm.total() as f64));
            for v in [m.accuracy, m.precision, m.recall, m.f1_standard, m.f1_halved].into_iter().flatten() {
                prop_assert!(v.is_finite() && (0.0..=1.0).contains(&v));
            }
            if let (Some(s), Some(p)) = (m.f1_standard, m.f1_halved) {
                prop_assert_eq!(s, 2.0 * p);
            }
        }
    }
}
