//! Confusion-matrix metrics in the layout of the detection table
//! (accuracy, then sensitivity/precision/F1 for each class) and the
//! single-segment inference latency benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::numeric::tensor::FeatureMap;
use crate::scalar::Scalar;
use crate::signal::Label;

fn na<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("n/a"),
    }
}

/// Per-class metrics in percent; `None` when the denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    #[serde(serialize_with = "na")]
    pub sensitivity: Option<f64>,
    #[serde(serialize_with = "na")]
    pub precision: Option<f64>,
    #[serde(serialize_with = "na")]
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Class counted as positive in `tp`/`fp`/`tn`/`fn`.
    pub positive: Label,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub total: usize,
    pub accuracy: f64,
    pub healthy: ClassMetrics,
    pub faulty: ClassMetrics,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Harmonic mean of sensitivity and precision (both in percent).
pub fn f1_score(sensitivity: f64, precision: f64) -> f64 {
    if sensitivity + precision == 0.0 {
        0.0
    } else {
        2.0 * sensitivity * precision / (sensitivity + precision)
    }
}

fn class_metrics(hit: usize, missed: usize, false_alarm: usize) -> ClassMetrics {
    let sensitivity = pct(hit, hit + missed);
    let precision = pct(hit, hit + false_alarm);
    let f1 = sensitivity.zip(precision).map(|(s, p)| f1_score(s, p));
    ClassMetrics {
        sensitivity,
        precision,
        f1,
    }
}

/// Metrics with faulty as the positive class.
pub fn compute_metrics(predictions: &[Label], labels: &[Label]) -> Result<MetricsReport> {
    compute_metrics_with_positive(predictions, labels, Label::Faulty)
}

pub fn compute_metrics_with_positive(
    predictions: &[Label],
    labels: &[Label],
    positive: Label,
) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "compute_metrics",
            format!("{} predictions", labels.len()),
            predictions.len(),
        ));
    }
    if labels.is_empty() {
        return Err(Error::Empty("compute_metrics"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == positive, l == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = labels.len();
    let pos = class_metrics(tp, fn_, fp);
    let neg = class_metrics(tn, fp, fn_);
    let (healthy, faulty) = match positive {
        Label::Faulty => (neg, pos),
        Label::Healthy => (pos, neg),
    };
    Ok(MetricsReport {
        positive,
        tp,
        fp,
        tn,
        fn_,
        total,
        accuracy: 100.0 * (tp + tn) as f64 / total as f64,
        healthy,
        faulty,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

/// One row of the detection table.
#[derive(Clone, Debug)]
pub struct TableRow<'a> {
    pub train_data: &'a str,
    pub test_data: &'a str,
    pub report: &'a MetricsReport,
}

/// Fixed-width table: train/test data, accuracy, then sensitivity,
/// precision and F1 for healthy and faulty.
pub fn format_table(rows: &[TableRow<'_>]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<10} {:>9} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}",
        "", "", "", "Healthy", "", "", "Faulty", "", ""
    );
    let _ = writeln!(
        s,
        "{:<10} {:<10} {:>9} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}",
        "Train", "Test", "Acc (%)", "Sens (%)", "Prec (%)", "F1 (%)", "Sens (%)", "Prec (%)", "F1 (%)"
    );
    for r in rows {
        let m = r.report;
        let _ = writeln!(
            s,
            "{:<10} {:<10} {:>9.2} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}",
            r.train_data,
            r.test_data,
            m.accuracy,
            cell(m.healthy.sensitivity),
            cell(m.healthy.precision),
            cell(m.healthy.f1),
            cell(m.faulty.sensitivity),
            cell(m.faulty.precision),
            cell(m.faulty.f1),
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub repetitions: usize,
    pub warmup: usize,
    pub segment_samples: usize,
    pub segment_seconds: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// `1000 * segment_seconds / median_ms`.
    pub real_time_factor: f64,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("benchmark serialises")
    }
}

pub const MIN_REPETITIONS: usize = 10;

/// Median wall-clock of single-segment forward passes on the calling thread.
pub fn benchmark_inference<T: Scalar, M: Model<T>>(
    model: &M,
    segment: &[T],
    sample_rate_hz: f64,
    repetitions: usize,
    warmup: usize,
) -> Result<BenchmarkReport> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::InvalidArgument(format!(
            "benchmark needs at least {MIN_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    let x = FeatureMap::from_signal(segment)?;
    for _ in 0..warmup {
        std::hint::black_box(model.forward(&x)?);
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        std::hint::black_box(model.forward(std::hint::black_box(&x))?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median_ms = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    let segment_seconds = segment.len() as f64 / sample_rate_hz;
    Ok(BenchmarkReport {
        repetitions,
        warmup,
        segment_samples: segment.len(),
        segment_seconds,
        median_ms,
        min_ms: times[0],
        max_ms: times[n - 1],
        real_time_factor: 1000.0 * segment_seconds / median_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Faulty as F, Healthy as H};

    #[test]
    fn table_spot_value() {
        assert!((f1_score(100.0, 99.12) - 99.56).abs() < 0.005);
    }

    #[test]
    fn small_confusion_example() {
        let m = compute_metrics(&[F, F, H, H], &[F, H, H, H]).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (1, 1, 2, 0));
        assert_eq!(m.accuracy, 75.0);
        assert_eq!(m.faulty.sensitivity, Some(100.0));
        assert_eq!(m.faulty.precision, Some(50.0));
    }

    #[test]
    fn zero_support_is_undefined() {
        let m = compute_metrics(&[H, H], &[H, H]).unwrap();
        assert_eq!(m.faulty.sensitivity, None);
        assert_eq!(m.faulty.precision, None);
        assert_eq!(m.healthy.f1, Some(100.0));
        assert!(m.to_json().contains("\"n/a\""));
        assert!(format_table(&[TableRow {
            train_data: "RA",
            test_data: "RA",
            report: &m
        }])
        .contains("n/a"));
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(compute_metrics(&[], &[]), Err(Error::Empty(_))));
        assert!(compute_metrics(&[H], &[H, F]).is_err());
    }

    #[test]
    fn too_few_repetitions_rejected() {
        use crate::models::{OpUNet, OpUNetConfig};
        let net = OpUNet::<f32>::zeros(OpUNetConfig::default().with_segment_length(64)).unwrap();
        assert!(benchmark_inference(&net, &[0.0; 64], 64.0, 9, 0).is_err());
        let r = benchmark_inference(&net, &[0.0; 64], 64.0, 10, 1).unwrap();
        assert!(r.median_ms > 0.0 && r.real_time_factor > 0.0);
    }
}
