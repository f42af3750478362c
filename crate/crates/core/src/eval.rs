//! ROC and precision-recall curves, AUC, curve averaging and histograms.
//!
//! Outliers are the positive class throughout, and every score is read as
//! higher = more outlying.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{NusaError, Result};

pub const DEFAULT_GRID_SIZE: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    pub is_outlier_truth: bool,
}

impl ScoredSample {
    pub fn new(score: f64, is_outlier_truth: bool) -> Self {
        ScoredSample {
            score,
            is_outlier_truth,
        }
    }
}

/// Labels `inliers` as negatives and `outliers` as positives, in that order.
pub fn scored_samples(inliers: &[f64], outliers: &[f64]) -> Vec<ScoredSample> {
    inliers
        .iter()
        .map(|&s| ScoredSample::new(s, false))
        .chain(outliers.iter().map(|&s| ScoredSample::new(s, true)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Roc,
    PrecisionRecall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub kind: CurveKind,
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    /// `x,y` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in &self.points {
            writeln!(out, "{x},{y}").unwrap();
        }
        out
    }
}

/// Min-max scaling to [0, 1]. Constant input maps to 0.5 everywhere.
pub fn normalize_scores(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(NusaError::invalid("cannot normalize an empty score list"));
    }
    check_finite(scores)?;
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(vec![0.5; scores.len()]);
    }
    Ok(scores.iter().map(|s| (s - lo) / (hi - lo)).collect())
}

/// `1 − s` elementwise.
pub fn invert_scores(scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|s| 1.0 - s).collect()
}

fn check_finite(scores: &[f64]) -> Result<()> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(NusaError::invalid(format!(
            "score {i} is not finite: {}",
            scores[i]
        )));
    }
    Ok(())
}

/// Cumulative (true positives, false positives) per threshold step.
type Steps = Vec<(usize, usize)>;

/// Cumulative (true positives, false positives) after each distinct
/// threshold, sweeping scores from high to low. Tied scores form one step.
fn threshold_steps(samples: &[ScoredSample]) -> Result<(Steps, usize, usize)> {
    let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
    check_finite(&scores)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let n_pos = samples.iter().filter(|s| s.is_outlier_truth).count();
    let n_neg = samples.len() - n_pos;
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].is_outlier_truth {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((tp, fp));
    }
    Ok((steps, n_pos, n_neg))
}

/// (false-positive rate, true-positive rate) from (0,0) to (1,1).
pub fn roc_curve(samples: &[ScoredSample]) -> Result<Curve> {
    let (steps, n_pos, n_neg) = threshold_steps(samples)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(NusaError::UndefinedMetric(format!(
            "ROC needs both classes, got {n_pos} outliers and {n_neg} inliers"
        )));
    }
    let mut points = vec![(0.0, 0.0)];
    points.extend(
        steps
            .iter()
            .map(|&(tp, fp)| (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64)),
    );
    Ok(Curve {
        kind: CurveKind::Roc,
        points,
    })
}

/// (recall, precision), starting at (0, 1) for an empty prediction set.
pub fn pr_curve(samples: &[ScoredSample]) -> Result<Curve> {
    let (steps, n_pos, _) = threshold_steps(samples)?;
    if n_pos == 0 {
        return Err(NusaError::UndefinedMetric(
            "precision-recall needs at least one outlier".into(),
        ));
    }
    let mut points = vec![(0.0, 1.0)];
    points.extend(
        steps
            .iter()
            .map(|&(tp, fp)| (tp as f64 / n_pos as f64, tp as f64 / (tp + fp) as f64)),
    );
    Ok(Curve {
        kind: CurveKind::PrecisionRecall,
        points,
    })
}

/// Trapezoidal area under the curve. For ROC this equals the Mann-Whitney
/// statistic with ties counted as 1/2.
pub fn auc(curve: &Curve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Value of a curve at `x`. ROC curves are interpolated linearly, taking the
/// highest point of a vertical run; PR curves carry the last point with
/// abscissa ≤ `x`.
fn sample_curve(curve: &Curve, x: f64) -> f64 {
    let pts = &curve.points;
    let j = match pts.iter().rposition(|p| p.0 <= x) {
        Some(j) => j,
        None => return pts[0].1,
    };
    match curve.kind {
        CurveKind::PrecisionRecall => pts[j].1,
        CurveKind::Roc => {
            if j + 1 == pts.len() {
                return pts[j].1;
            }
            let (x0, y0) = pts[j];
            let (x1, y1) = pts[j + 1];
            y0 + (x - x0) * (y1 - y0) / (x1 - x0)
        }
    }
}

/// Resamples each curve onto `grid_size` evenly spaced x-values in [0, 1] and
/// averages y per grid point. Averaged ROC curves are pinned to (0,0) and
/// (1,1).
pub fn average_curves(curves: &[Curve], grid_size: usize) -> Result<Curve> {
    let first = curves
        .first()
        .ok_or_else(|| NusaError::invalid("no curves to average"))?;
    if grid_size < 2 {
        return Err(NusaError::invalid(format!(
            "grid_size must be at least 2, got {grid_size}"
        )));
    }
    if curves.iter().any(|c| c.kind != first.kind) {
        return Err(NusaError::invalid(
            "cannot average curves of different kinds",
        ));
    }
    if curves.iter().any(|c| c.points.is_empty()) {
        return Err(NusaError::invalid("cannot average an empty curve"));
    }
    let points = (0..grid_size)
        .map(|i| {
            let x = i as f64 / (grid_size - 1) as f64;
            let y = match first.kind {
                CurveKind::Roc if i == 0 => 0.0,
                CurveKind::Roc if i + 1 == grid_size => 1.0,
                _ => curves.iter().map(|c| sample_curve(c, x)).sum::<f64>() / curves.len() as f64,
            };
            (x, y)
        })
        .collect();
    Ok(Curve {
        kind: first.kind,
        points,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bin_left,bin_right,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{},{c}", self.edges[i], self.edges[i + 1]).unwrap();
        }
        out
    }
}

/// Equal-width bins over `range`; the last bin includes its right edge and
/// values outside the range are counted in the nearest edge bin.
pub fn histogram(scores: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram> {
    if bins == 0 {
        return Err(NusaError::invalid("histogram needs at least one bin"));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(NusaError::invalid(format!(
            "invalid histogram range [{lo}, {hi}]"
        )));
    }
    check_finite(scores)?;
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &s in scores {
        let idx = ((s - lo) / (hi - lo) * bins as f64).floor();
        counts[(idx.max(0.0) as usize).min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Per-method summary written to metrics JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub method: String,
    pub auc: f64,
    pub pr_auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn method_metrics(
    method: &str,
    samples: &[ScoredSample],
) -> Result<(MethodMetrics, Curve, Curve)> {
    let roc = roc_curve(samples)?;
    let pr = pr_curve(samples)?;
    let n_pos = samples.iter().filter(|s| s.is_outlier_truth).count();
    let metrics = MethodMetrics {
        method: method.to_string(),
        auc: auc(&roc),
        pr_auc: auc(&pr),
        n_pos,
        n_neg: samples.len() - n_pos,
    };
    Ok((metrics, roc, pr))
}
