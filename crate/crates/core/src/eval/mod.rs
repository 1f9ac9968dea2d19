//! Imbalanced-classification metrics: confusion counts, accuracy,
//! precision/recall, F-measure, threshold curves and the weight sweep.

mod sweep;

pub use sweep::{
    default_weight_grid, monte_carlo_sweep, run_seed, sweep_with, RunMetrics, RunRecord,
    SweepData, SweepReport, Table, WeightSummary, variant_table,
};

use crate::error::{Error, Result};

/// Number of points of the default threshold grid.
pub const GRID_POINTS: usize = 101;

/// `0.00, 0.01, …, 1.00`.
pub fn threshold_grid() -> Vec<f64> {
    (0..GRID_POINTS).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn predicted_positives(&self) -> usize {
        self.tp + self.fp
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Contract(format!("score {s} outside [0, 1]")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {l} is not binary")));
    }
    Ok(())
}

/// Predicts flooded iff `score > phi`.
pub fn confusion_at(scores: &[f64], labels: &[u8], phi: f64) -> Result<ConfusionMatrix> {
    check_inputs(scores, labels)?;
    Ok(tally(scores, labels, phi))
}

fn tally(scores: &[f64], labels: &[u8], phi: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > phi, l == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    cm
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::UndefinedMetric("accuracy of an empty confusion matrix"));
    }
    Ok((cm.tp + cm.tn) as f64 / cm.total() as f64)
}

/// `(precision, recall)`, each 0 when its denominator is 0.
pub fn precision_recall(cm: &ConfusionMatrix) -> (f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    (
        ratio(cm.tp, cm.predicted_positives()),
        ratio(cm.tp, cm.positives()),
    )
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<CurvePoint>,
    pub area: f64,
    /// Precision of a classifier that flags everything: positives / total.
    pub baseline_precision: f64,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("threshold grid"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::Contract(
            "thresholds must be strictly increasing within [0, 1]".into(),
        ));
    }
    Ok(())
}

fn curve_points(scores: &[f64], labels: &[u8], grid: &[f64]) -> Result<Vec<(CurvePoint, ConfusionMatrix)>> {
    check_inputs(scores, labels)?;
    check_grid(grid)?;
    if !labels.contains(&1) {
        return Err(Error::NoPositives);
    }
    // One sort, then each threshold is a partition point.
    let mut order: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pos_above = vec![0usize; order.len() + 1];
    for i in (0..order.len()).rev() {
        pos_above[i] = pos_above[i + 1] + order[i].1 as usize;
    }
    let positives = pos_above[0];
    let negatives = order.len() - positives;
    Ok(grid
        .iter()
        .map(|&phi| {
            let first_above = order.partition_point(|&(s, _)| s <= phi);
            let tp = pos_above[first_above];
            let fp = (order.len() - first_above) - tp;
            let cm = ConfusionMatrix {
                tp,
                fp,
                fn_: positives - tp,
                tn: negatives - fp,
            };
            let (precision, recall) = precision_recall(&cm);
            (
                CurvePoint {
                    threshold: phi,
                    precision,
                    recall,
                    tp,
                    fp,
                },
                cm,
            )
        })
        .collect())
}

/// Precision/recall at each grid threshold plus the area under the curve.
///
/// Area: thresholds that predict no positives are left out (their zero
/// precision is a convention, not a measurement). Remaining points are
/// grouped by recall, precision averaged within a group, and integrated
/// with the trapezoid rule over recall. The curve is extended flat from
/// its lowest recall down to recall 0.
pub fn pr_curve(scores: &[f64], labels: &[u8], grid: &[f64]) -> Result<PrCurve> {
    let pts = curve_points(scores, labels, grid)?;
    let positives = pts[0].1.positives();
    let points: Vec<CurvePoint> = pts.into_iter().map(|(p, _)| p).collect();
    Ok(PrCurve {
        area: pr_area(&points, positives),
        points,
        baseline_precision: positives as f64 / scores.len() as f64,
    })
}

fn pr_area(points: &[CurvePoint], positives: usize) -> f64 {
    // (tp, precision sum, count), keyed by tp so equal recalls compare exactly.
    let mut groups: Vec<(usize, f64, usize)> = Vec::new();
    let mut measured: Vec<&CurvePoint> = points.iter().filter(|p| p.tp + p.fp > 0).collect();
    measured.sort_by_key(|p| p.tp);
    for p in measured {
        match groups.last_mut() {
            Some(g) if g.0 == p.tp => {
                g.1 += p.precision;
                g.2 += 1;
            }
            _ => groups.push((p.tp, p.precision, 1)),
        }
    }
    let Some(first) = groups.first() else {
        return 0.0;
    };
    let recall = |tp: usize| tp as f64 / positives as f64;
    let mean = |g: &(usize, f64, usize)| g.1 / g.2 as f64;
    let mut area = recall(first.0) * mean(first);
    for w in groups.windows(2) {
        area += (recall(w[1].0) - recall(w[0].0)) * (mean(&w[0]) + mean(&w[1])) / 2.0;
    }
    area
}

#[derive(Debug, Clone, PartialEq)]
pub struct FCurve {
    /// `(φ, F)` per grid threshold.
    pub points: Vec<(f64, f64)>,
    /// Smallest threshold reaching the maximum F.
    pub critical_threshold: f64,
    pub max_f: f64,
    /// Trapezoid area of F over the grid.
    pub area: f64,
}

pub fn f_curve_and_critical(scores: &[f64], labels: &[u8], grid: &[f64]) -> Result<FCurve> {
    let pts = curve_points(scores, labels, grid)?;
    Ok(f_curve_from(&pts.iter().map(|(p, _)| *p).collect::<Vec<_>>()))
}

fn f_curve_from(points: &[CurvePoint]) -> FCurve {
    let f: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.threshold, f_measure(p.precision, p.recall)))
        .collect();
    let mut best = f[0];
    for &pt in &f[1..] {
        if pt.1 > best.1 {
            best = pt;
        }
    }
    let area = f
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    FCurve {
        points: f,
        critical_threshold: best.0,
        max_f: best.1,
        area,
    }
}

/// Every threshold metric of one score set, from a single pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdMetrics {
    pub pr: PrCurve,
    pub f: FCurve,
    /// Best accuracy over the grid.
    pub max_accuracy: f64,
    /// Confusion counts at `φ = 0.5`.
    pub at_half: ConfusionMatrix,
}

pub fn threshold_metrics(scores: &[f64], labels: &[u8], grid: &[f64]) -> Result<ThresholdMetrics> {
    let pts = curve_points(scores, labels, grid)?;
    let positives = pts[0].1.positives();
    let max_accuracy = pts
        .iter()
        .map(|(_, cm)| accuracy(cm))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let points: Vec<CurvePoint> = pts.into_iter().map(|(p, _)| p).collect();
    let f = f_curve_from(&points);
    let pr = PrCurve {
        area: pr_area(&points, positives),
        points,
        baseline_precision: positives as f64 / scores.len() as f64,
    };
    Ok(ThresholdMetrics {
        pr,
        f,
        max_accuracy,
        at_half: tally(scores, labels, 0.5),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion_at(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 0, fn_: 0, tn: 1 });
        let cm = confusion_at(&[1.0, 0.3, 1.0], &[1, 0, 0], 1.0).unwrap();
        assert_eq!((cm.tp, cm.fp), (0, 0));
        assert!(confusion_at(&[0.5], &[1, 0], 0.5).is_err());
        assert!(confusion_at(&[1.5], &[1], 0.5).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let perfect = ConfusionMatrix { tp: 50, fp: 0, fn_: 0, tn: 50 };
        assert_eq!(accuracy(&perfect).unwrap(), 1.0);
        let cm = ConfusionMatrix { tp: 1, fp: 2, fn_: 1, tn: 96 };
        assert!((accuracy(&cm).unwrap() - 0.97).abs() < 1e-15);
        assert!(matches!(
            accuracy(&ConfusionMatrix::default()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn precision_recall_and_f() {
        let cm = ConfusionMatrix { tp: 8, fp: 2, fn_: 2, tn: 0 };
        assert_eq!(precision_recall(&cm), (0.8, 0.8));
        assert_eq!(precision_recall(&ConfusionMatrix { tp: 0, fp: 0, fn_: 3, tn: 1 }).0, 0.0);
        assert_eq!(f_measure(0.5, 0.5), 0.5);
        assert_eq!(f_measure(1.0, 0.0), 0.0);
        assert!((f_measure(0.6, 0.8) - 0.6857).abs() < 1e-4);
    }

    #[test]
    fn perfect_scores() {
        let scores = [1.0, 1.0, 0.0, 0.0, 0.0];
        let labels = [1, 1, 0, 0, 0];
        let grid = threshold_grid();
        let pr = pr_curve(&scores, &labels, &grid).unwrap();
        assert!((pr.area - 1.0).abs() < 1e-9);
        assert!((pr.baseline_precision - 0.4).abs() < 1e-15);
        let f = f_curve_and_critical(&scores, &labels, &grid).unwrap();
        assert_eq!(f.max_f, 1.0);
        assert_eq!(f.critical_threshold, 0.0);
    }

    #[test]
    fn constant_scores_give_no_skill_area() {
        let scores = vec![0.5; 10];
        let labels = [1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let pr = pr_curve(&scores, &labels, &threshold_grid()).unwrap();
        for p in &pr.points {
            if p.threshold < 0.5 {
                assert_eq!(p.precision, 0.5);
            }
        }
        assert!((pr.area - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_positives_is_an_error() {
        assert!(matches!(
            pr_curve(&[0.2, 0.4], &[0, 0], &threshold_grid()),
            Err(Error::NoPositives)
        ));
    }

    #[test]
    fn bad_grid_is_rejected() {
        assert!(pr_curve(&[0.2], &[1], &[0.5, 0.5]).is_err());
        assert!(pr_curve(&[0.2], &[1], &[]).is_err());
    }
}
