//! Precision-recall analysis for the nonempty (positive) class.
//!
//! Everything here uses one decision rule, [`is_nonempty`]: an image is
//! predicted nonempty iff its score is at least the threshold. Candidate
//! thresholds are the distinct observed scores, so the largest threshold
//! that reaches a recall target is always one of them.
//!
//! Confusion counts are exact integers; ratios are computed from them in
//! double precision.

use serde::{Deserialize, Serialize};

use crate::scorestore::EvalSet;

pub const DEFAULT_TARGET_RECALL: f64 = 0.96;

/// Default TNR drop, in absolute terms, above which a run counts as degraded.
pub const DEFAULT_TNR_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("evaluation set has no positive (nonempty) items")]
    NoPositives,
    #[error("evaluation set has no negative (empty) items")]
    NoNegatives,
    #[error("target recall {0} outside (0, 1]")]
    BadTarget(f64),
}

/// The decision rule shared by metrics and the filtering pipeline.
#[inline]
pub fn is_nonempty(score: f64, threshold: f64) -> bool {
    score >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub tnr: f64,
}

/// `num / den`, with an empty denominator read as 1.0 (nothing to get wrong).
pub(crate) fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl OperatingPoint {
    pub fn from_counts(threshold: f64, tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        OperatingPoint {
            threshold,
            tp,
            fp,
            tn,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            tnr: ratio(tn, tn + fp),
        }
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Strictly decreasing thresholds, starting with the `+inf` sentinel.
    pub points: Vec<OperatingPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub point: OperatingPoint,
    pub target_recall: f64,
    pub achieved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub run_a: String,
    pub run_b: String,
    pub target_recall: f64,
    pub point_a: OperatingPoint,
    pub point_b: OperatingPoint,
    /// `b - a`.
    pub precision_delta: f64,
    /// `b - a`.
    pub tnr_delta: f64,
    pub tnr_margin: f64,
    pub degraded: bool,
}

/// Cumulative counts after admitting every score at or above each distinct
/// threshold, highest threshold first. Excludes the sentinel.
fn sweep(e: &EvalSet) -> (Vec<(f64, u64, u64)>, u64, u64) {
    let mut scored: Vec<(f64, bool)> = e
        .items
        .iter()
        .map(|i| (i.nonempty_score, i.label.is_positive()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = scored.iter().filter(|s| s.1).count() as u64;
    let total_neg = scored.len() as u64 - total_pos;

    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, &(score, positive)) in scored.iter().enumerate() {
        if positive {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = scored.get(i + 1).is_none_or(|next| next.0 != score);
        if last_of_group {
            out.push((score, tp, fp));
        }
    }
    (out, total_pos, total_neg)
}

fn point_from_sweep(threshold: f64, tp: u64, fp: u64, pos: u64, neg: u64) -> OperatingPoint {
    OperatingPoint::from_counts(threshold, tp, fp, neg - fp, pos - tp)
}

pub fn pr_curve(e: &EvalSet) -> Result<PrCurve, MetricsError> {
    let (groups, pos, neg) = sweep(e);
    if pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    if neg == 0 {
        return Err(MetricsError::NoNegatives);
    }
    let mut points = Vec::with_capacity(groups.len() + 1);
    points.push(point_from_sweep(f64::INFINITY, 0, 0, pos, neg));
    points.extend(
        groups
            .into_iter()
            .map(|(t, tp, fp)| point_from_sweep(t, tp, fp, pos, neg)),
    );
    Ok(PrCurve { points })
}

pub fn metrics_at(e: &EvalSet, threshold: f64) -> OperatingPoint {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for item in &e.items {
        match (item.label.is_positive(), is_nonempty(item.nonempty_score, threshold)) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    OperatingPoint::from_counts(threshold, tp, fp, tn, fn_)
}

/// Picks the largest observed score whose recall meets `target_recall`.
pub fn calibrate_threshold(e: &EvalSet, target_recall: f64) -> Result<CalibrationResult, MetricsError> {
    if !(target_recall > 0.0 && target_recall <= 1.0) {
        return Err(MetricsError::BadTarget(target_recall));
    }
    let (groups, pos, neg) = sweep(e);
    if pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let hit = groups
        .iter()
        .find(|&&(_, tp, _)| ratio(tp, pos) >= target_recall);
    let (&(threshold, tp, fp), achieved) = match hit {
        Some(g) => (g, true),
        // Unreachable with the >= rule: the lowest score admits everything.
        None => (groups.last().expect("non-empty"), false),
    };
    Ok(CalibrationResult {
        threshold,
        point: point_from_sweep(threshold, tp, fp, pos, neg),
        target_recall,
        achieved,
    })
}

/// Trapezoidal area under the precision-recall curve, integrating over
/// recall between consecutive curve points (sentinel included).
pub fn pr_auc(e: &EvalSet) -> Result<f64, MetricsError> {
    Ok(curve_auc(&pr_curve(e)?))
}

pub fn curve_auc(curve: &PrCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareConfig {
    pub target_recall: f64,
    pub tnr_margin: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            target_recall: DEFAULT_TARGET_RECALL,
            tnr_margin: DEFAULT_TNR_MARGIN,
        }
    }
}

/// Calibrates both runs independently and reports how `b` moved relative
/// to `a`. `b` is degraded when its TNR falls more than the margin below `a`'s.
pub fn compare_runs(
    run_a: &str,
    a: &EvalSet,
    run_b: &str,
    b: &EvalSet,
    config: CompareConfig,
) -> Result<DeltaReport, MetricsError> {
    let ca = calibrate_threshold(a, config.target_recall)?;
    let cb = calibrate_threshold(b, config.target_recall)?;
    let tnr_delta = cb.point.tnr - ca.point.tnr;
    Ok(DeltaReport {
        run_a: run_a.to_string(),
        run_b: run_b.to_string(),
        target_recall: config.target_recall,
        point_a: ca.point,
        point_b: cb.point,
        precision_delta: cb.point.precision - ca.point.precision,
        tnr_delta,
        tnr_margin: config.tnr_margin,
        degraded: -tnr_delta > config.tnr_margin,
    })
}
