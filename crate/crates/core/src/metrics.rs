//! Pixel-level segmentation metrics derived from confusion counts.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// 1 where `pred >= threshold`, else 0. Ties count as foreground.
pub fn binarize<T: Scalar>(pred: &Tensor<T>, threshold: f64) -> Tensor<T> {
    let th = T::of(threshold);
    pred.map(|p| if p >= th { T::one() } else { T::zero() })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

/// Tallies binary prediction against binary ground truth. Values are read as
/// foreground when greater than 0.5.
pub fn confusion<T: Scalar>(pred_bin: &Tensor<T>, target_bin: &Tensor<T>) -> Result<ConfusionCounts> {
    pred_bin.expect_same_shape(target_bin)?;
    let half = T::of(0.5);
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred_bin.data().iter().zip(target_bin.data()) {
        match (p > half, g > half) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Metrics of one image (or of pooled counts). A value whose denominator is
/// zero is reported as 0 and listed in `degenerate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub degenerate: Vec<&'static str>,
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::invalid("metrics need at least one pixel"));
    }
    let mut degenerate = Vec::new();
    let mut ratio = |num: u64, den: u64, name: &'static str| {
        if den == 0 {
            degenerate.push(name);
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let sensitivity = ratio(c.tp, c.tp + c.fn_, "sensitivity");
    let specificity = ratio(c.tn, c.tn + c.fp, "specificity");
    let precision = ratio(c.tp, c.tp + c.fp, "precision");
    let jaccard = ratio(c.tp, c.tp + c.fp + c.fn_, "jaccard");
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, "f1");
    let accuracy = (c.tp + c.tn) as f64 / total as f64;
    Ok(Metrics {
        sensitivity,
        specificity,
        accuracy,
        precision,
        f1,
        jaccard,
        degenerate,
    })
}

impl Metrics {
    fn values(&self) -> [f64; 6] {
        [
            self.sensitivity,
            self.specificity,
            self.accuracy,
            self.precision,
            self.f1,
            self.jaccard,
        ]
    }
}

pub const CSV_HEADER: &str = "image,se,sp,acc,precision,f1,jaccard";

/// How per-image results combine into one summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Arithmetic mean of per-image metrics.
    #[default]
    PerImageMean,
    /// Metrics of the summed confusion counts.
    Pooled,
}

/// Per-image metrics plus their aggregate.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub images: Vec<(String, ConfusionCounts, Metrics)>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, counts: ConfusionCounts) -> Result<()> {
        let m = metrics(&counts)?;
        self.images.push((name.into(), counts, m));
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn aggregate(&self, mode: Aggregation) -> Result<Metrics> {
        if self.images.is_empty() {
            return Err(Error::invalid("cannot aggregate an empty report"));
        }
        match mode {
            Aggregation::Pooled => {
                let mut total = ConfusionCounts::default();
                for (_, c, _) in &self.images {
                    total += *c;
                }
                metrics(&total)
            }
            Aggregation::PerImageMean => {
                let n = self.images.len() as f64;
                let mut sums = [0.0; 6];
                for (_, _, m) in &self.images {
                    for (s, v) in sums.iter_mut().zip(m.values()) {
                        *s += v;
                    }
                }
                let [se, sp, acc, prec, f1, jac] = sums.map(|s| s / n);
                Ok(Metrics {
                    sensitivity: se,
                    specificity: sp,
                    accuracy: acc,
                    precision: prec,
                    f1,
                    jaccard: jac,
                    degenerate: Vec::new(),
                })
            }
        }
    }

    /// One header line, one row per image and a final `mean` row.
    pub fn to_csv(&self, mode: Aggregation) -> Result<String> {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (name, _, m) in &self.images {
            push_row(&mut out, name, m);
        }
        let agg = self.aggregate(mode)?;
        push_row(
            &mut out,
            match mode {
                Aggregation::PerImageMean => "mean",
                Aggregation::Pooled => "pooled",
            },
            &agg,
        );
        Ok(out)
    }

    /// Flat `key=value` block of the aggregate.
    pub fn summary(&self, mode: Aggregation) -> Result<String> {
        let m = self.aggregate(mode)?;
        let mut out = String::new();
        let _ = writeln!(out, "images={}", self.images.len());
        let _ = writeln!(
            out,
            "aggregation={}",
            match mode {
                Aggregation::PerImageMean => "per_image_mean",
                Aggregation::Pooled => "pooled",
            }
        );
        for (k, v) in ["se", "sp", "acc", "precision", "f1", "jaccard"]
            .iter()
            .zip(m.values())
        {
            let _ = writeln!(out, "{k}={v:.6}");
        }
        Ok(out)
    }
}

/// RGB `[1, 3, H, W]` map of a binary prediction against binary ground truth:
/// green for TP, red for FN, blue for FP and black for TN.
pub fn error_map<T: Scalar>(pred_bin: &Tensor<T>, target_bin: &Tensor<T>) -> Result<Tensor<T>> {
    pred_bin.expect_same_shape(target_bin)?;
    let [n, c, h, w] = pred_bin.dims4()?;
    if n != 1 || c != 1 {
        return Err(Error::invalid(format!(
            "error map needs a single-channel item, got shape {:?}",
            pred_bin.shape()
        )));
    }
    let half = T::of(0.5);
    let (p, g) = (pred_bin.data(), target_bin.data());
    Ok(Tensor::from_fn(&[1, 3, h, w], |i| {
        let (ch, px) = (i / (h * w), i % (h * w));
        let lit = match (p[px] > half, g[px] > half) {
            (true, true) => ch == 1,
            (false, true) => ch == 0,
            (true, false) => ch == 2,
            (false, false) => false,
        };
        if lit {
            T::one()
        } else {
            T::zero()
        }
    }))
}

fn push_row(out: &mut String, name: &str, m: &Metrics) {
    out.push_str(name);
    for v in m.values() {
        let _ = write!(out, ",{v:.6}");
    }
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_tie_rule() {
        let p = Tensor::<f32>::full(&[1, 1, 2, 2], 0.5);
        assert!(binarize(&p, 0.5).data().iter().all(|&v| v == 1.0));
        let p = Tensor::<f32>::full(&[1, 1, 2, 2], 0.49);
        assert!(binarize(&p, 0.5).data().iter().all(|&v| v == 0.0));
        let p = Tensor::<f32>::from_fn(&[1, 1, 2, 2], |i| i as f32 * 0.2);
        assert!(binarize(&p, 0.0).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn confusion_extremes() {
        let g = Tensor::<f32>::from_fn(&[1, 1, 3, 3], |i| (i % 2) as f32);
        let c = confusion(&g, &g).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let inv = g.map(|v| 1.0 - v);
        let c = confusion(&inv, &g).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert!(confusion(&g, &Tensor::zeros(&[1, 1, 3, 2])).is_err());
    }

    #[test]
    fn metrics_hand_values() {
        let c = ConfusionCounts {
            tp: 50,
            fp: 10,
            fn_: 10,
            tn: 930,
        };
        let m = metrics(&c).unwrap();
        assert!((m.sensitivity - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.precision - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.f1 - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.jaccard - 50.0 / 70.0).abs() < 1e-12);
        assert!((m.accuracy - 0.98).abs() < 1e-12);
        assert!((m.jaccard - m.f1 / (2.0 - m.f1)).abs() < 1e-12);
        assert!(m.degenerate.is_empty());
    }

    #[test]
    fn metrics_all_background() {
        let m = metrics(&ConfusionCounts {
            tn: 100,
            ..Default::default()
        })
        .unwrap();
        assert_eq!((m.accuracy, m.specificity), (1.0, 1.0));
        for name in ["sensitivity", "precision", "f1"] {
            assert!(m.degenerate.contains(&name), "{name} not flagged");
        }
        assert!(metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn report_mean_and_csv() {
        let mut r = MetricReport::new();
        r.push("a", ConfusionCounts { tp: 5, fp: 5, tn: 10, fn_: 0 }).unwrap();
        r.push("b", ConfusionCounts { tp: 0, fp: 0, tn: 10, fn_: 10 }).unwrap();
        let agg = r.aggregate(Aggregation::PerImageMean).unwrap();
        assert!((agg.sensitivity - 0.5).abs() < 1e-12);
        let pooled = r.aggregate(Aggregation::Pooled).unwrap();
        assert!((pooled.sensitivity - 5.0 / 15.0).abs() < 1e-12);
        let csv = r.to_csv(Aggregation::PerImageMean).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("mean,0.500000,"));
        assert!(r.summary(Aggregation::PerImageMean).unwrap().contains("se=0.500000"));
    }
}
