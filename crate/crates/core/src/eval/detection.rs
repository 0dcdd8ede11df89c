//! COCO-style detection evaluation.
//!
//! Matching is greedy per (frame, category): predictions in descending score
//! order each claim the unmatched ground-truth box with the highest IoU at or
//! above the threshold. Precision is the right-to-left maximum envelope of the
//! PR curve, sampled at evenly spaced recall points.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::CowId;
use crate::timesync::FrameIndex;
use crate::tracks::{iou, BBox};

#[derive(Debug, Error, PartialEq)]
pub enum DetectionEvalError {
    #[error("no ground truth boxes to evaluate against")]
    EmptyGroundTruth,
    #[error("IoU threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("need at least 2 recall points, got {0}")]
    BadRecallPoints(usize),
    #[error("detection score {0} outside [0, 1]")]
    BadScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame: FrameIndex,
    pub bbox: BBox,
    pub category: CowId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: FrameIndex,
    pub bbox: BBox,
    pub category: CowId,
    pub score: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<(), DetectionEvalError> {
        if (0.0..=1.0).contains(&self.score) {
            Ok(())
        } else {
            Err(DetectionEvalError::BadScore(self.score))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Indices refer to the `gt` and `pred` slices passed in.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MatchResult {
    pub matches: Vec<Match>,
    /// Unmatched predictions.
    pub false_positives: Vec<usize>,
    /// Unmatched ground truth.
    pub false_negatives: Vec<usize>,
}

type GroupKey = (FrameIndex, CowId);

struct Groups {
    gt: BTreeMap<GroupKey, Vec<usize>>,
    pred: BTreeMap<GroupKey, Vec<usize>>,
}

fn group(gt: &[GroundTruth], pred: &[Detection]) -> Groups {
    let mut g: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, b) in gt.iter().enumerate() {
        g.entry((b.frame, b.category)).or_default().push(i);
    }
    let mut p: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, d) in pred.iter().enumerate() {
        p.entry((d.frame, d.category)).or_default().push(i);
    }
    for idx in p.values_mut() {
        // descending score, input order among equal scores
        idx.sort_by(|&a, &b| pred[b].score.total_cmp(&pred[a].score).then(a.cmp(&b)));
    }
    Groups { gt: g, pred: p }
}

/// Greedy matching of one group. `preds` must already be in score order.
/// Returns, per prediction, the matched gt index.
fn match_group(gt: &[GroundTruth], pred: &[Detection], gts: &[usize], preds: &[usize], threshold: f64) -> Vec<Option<(usize, f64)>> {
    let threshold = threshold.min(1.0 - 1e-10);
    let mut taken = vec![false; gts.len()];
    preds
        .iter()
        .map(|&p| {
            let mut best: Option<(usize, f64)> = None;
            for (k, &g) in gts.iter().enumerate() {
                if taken[k] {
                    continue;
                }
                let v = iou(&pred[p].bbox, &gt[g].bbox);
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            best.map(|(k, v)| {
                taken[k] = true;
                (gts[k], v)
            })
        })
        .collect()
}

/// Match predictions to ground truth at one IoU threshold.
pub fn match_detections(gt: &[GroundTruth], pred: &[Detection], iou_threshold: f64) -> MatchResult {
    let groups = group(gt, pred);
    let mut result = MatchResult::default();
    let mut gt_matched = vec![false; gt.len()];
    for (key, preds) in &groups.pred {
        let gts = groups.gt.get(key).map(Vec::as_slice).unwrap_or(&[]);
        for (&p, m) in preds.iter().zip(match_group(gt, pred, gts, preds, iou_threshold)) {
            match m {
                Some((g, v)) => {
                    gt_matched[g] = true;
                    result.matches.push(Match { pred: p, gt: g, iou: v });
                }
                None => result.false_positives.push(p),
            }
        }
    }
    result.false_negatives = (0..gt.len()).filter(|&g| !gt_matched[g]).collect();
    result.matches.sort_by_key(|m| m.pred);
    result.false_positives.sort_unstable();
    result
}

/// COCO IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    linspace(0.5, 0.95, 10)
}

/// Evenly spaced points with numpy's `linspace` rounding (last point exact).
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (stop - start) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|k| k as f64 * step + start).collect();
    v[n - 1] = stop;
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApParams {
    pub iou_thresholds: Vec<f64>,
    pub recall_points: usize,
    /// Highest-scoring predictions kept per (frame, category).
    pub max_dets: usize,
}

impl Default for ApParams {
    fn default() -> Self {
        ApParams { iou_thresholds: coco_iou_thresholds(), recall_points: 101, max_dets: 100 }
    }
}

impl ApParams {
    /// AP at a single IoU threshold, e.g. AP@0.5.
    pub fn single(threshold: f64) -> Self {
        ApParams { iou_thresholds: vec![threshold], ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), DetectionEvalError> {
        if self.recall_points < 2 {
            return Err(DetectionEvalError::BadRecallPoints(self.recall_points));
        }
        match self.iou_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            Some(t) => Err(DetectionEvalError::BadThreshold(*t)),
            None if self.iou_thresholds.is_empty() => Err(DetectionEvalError::BadThreshold(f64::NAN)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub category: CowId,
    pub num_gt: usize,
    pub ap: f64,
    pub ar: f64,
    /// AP at each IoU threshold.
    pub ap_per_threshold: Vec<f64>,
    /// Final recall at each IoU threshold.
    pub recall_per_threshold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub iou_thresholds: Vec<f64>,
    pub per_class: Vec<ClassMetrics>,
    /// Mean AP over classes present in the ground truth.
    pub ap: f64,
    /// Mean AR over classes present in the ground truth.
    pub ar: f64,
}

/// AP and final recall of one class at one threshold.
fn class_ap(
    gt: &[GroundTruth],
    pred: &[Detection],
    groups: &Groups,
    category: CowId,
    num_gt: usize,
    threshold: f64,
    params: &ApParams,
) -> (f64, f64) {
    // (score, frame, input index, is_tp)
    let mut scored: Vec<(f64, FrameIndex, usize, bool)> = Vec::new();
    for (key, preds) in groups.pred.iter().filter(|(k, _)| k.1 == category) {
        let preds = &preds[..preds.len().min(params.max_dets)];
        let gts = groups.gt.get(key).map(Vec::as_slice).unwrap_or(&[]);
        for (&p, m) in preds.iter().zip(match_group(gt, pred, gts, preds, threshold)) {
            scored.push((pred[p].score, key.0, p, m.is_some()));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut precision = Vec::with_capacity(scored.len());
    let mut recall = Vec::with_capacity(scored.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, _, _, hit) in &scored {
        if hit { tp += 1 } else { fp += 1 }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let points = linspace(0.0, 1.0, params.recall_points);
    let sum: f64 = points
        .iter()
        .map(|&r| {
            let idx = recall.partition_point(|&v| v < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    (sum / points.len() as f64, recall.last().copied().unwrap_or(0.0))
}

/// COCO-style AP and AR averaged over IoU thresholds and classes.
pub fn average_precision(gt: &[GroundTruth], pred: &[Detection], params: &ApParams) -> Result<DetectionReport, DetectionEvalError> {
    params.validate()?;
    if gt.is_empty() {
        return Err(DetectionEvalError::EmptyGroundTruth);
    }
    for d in pred {
        d.validate()?;
    }
    let groups = group(gt, pred);
    let mut num_gt: BTreeMap<CowId, usize> = BTreeMap::new();
    for g in gt {
        *num_gt.entry(g.category).or_insert(0) += 1;
    }
    let categories: BTreeSet<CowId> = num_gt.keys().copied().collect();

    let per_class: Vec<ClassMetrics> = categories
        .iter()
        .map(|&cat| {
            let n = num_gt[&cat];
            let (aps, recalls): (Vec<f64>, Vec<f64>) = params
                .iou_thresholds
                .iter()
                .map(|&t| class_ap(gt, pred, &groups, cat, n, t, params))
                .unzip();
            ClassMetrics {
                category: cat,
                num_gt: n,
                ap: mean(&aps),
                ar: mean(&recalls),
                ap_per_threshold: aps,
                recall_per_threshold: recalls,
            }
        })
        .collect();
    let ap = mean(&per_class.iter().map(|c| c.ap).collect::<Vec<_>>());
    let ar = mean(&per_class.iter().map(|c| c.ar).collect::<Vec<_>>());
    Ok(DetectionReport { iou_thresholds: params.iou_thresholds.clone(), per_class, ap, ar })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl DetectionReport {
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<10} {:>6} {:>8} {:>8}\n", "category", "gt", "AP", "AR");
        for c in &self.per_class {
            out.push_str(&format!("{:<10} {:>6} {:>8.4} {:>8.4}\n", format!("cow_{}", c.category), c.num_gt, c.ap, c.ar));
        }
        out.push_str(&format!("{:<10} {:>6} {:>8.4} {:>8.4}\n", "mean", "", self.ap, self.ar));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn gt(frame: u64, b: BBox, cat: u32) -> GroundTruth {
        GroundTruth { frame, bbox: b, category: CowId(cat) }
    }

    fn det(frame: u64, b: BBox, cat: u32, score: f64) -> Detection {
        Detection { frame, bbox: b, category: CowId(cat), score }
    }

    #[test]
    fn perfect_match() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let r = match_detections(&[gt(0, b, 1)], &[det(0, b, 1, 0.9)], 0.5);
        assert_eq!(r.matches, vec![Match { pred: 0, gt: 0, iou: 1.0 }]);
        assert!(r.false_positives.is_empty() && r.false_negatives.is_empty());
    }

    #[test]
    fn higher_score_wins() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        // both overlap enough (IoU 0.74 and 1)
        let preds = [det(0, bx(1.0, 0.0, 10.0, 9.0), 1, 0.6), det(0, b, 1, 0.8)];
        let r = match_detections(&[gt(0, b, 1)], &preds, 0.5);
        assert_eq!(r.matches.len(), 1);
        assert_eq!(r.matches[0].pred, 1);
        assert_eq!(r.false_positives, vec![0]);
    }

    #[test]
    fn below_threshold_is_fp_and_fn() {
        // IoU = 40 / 160 = 0.25
        let r = match_detections(&[gt(0, bx(0.0, 0.0, 10.0, 10.0), 1)], &[det(0, bx(6.0, 0.0, 10.0, 10.0), 1, 0.9)], 0.5);
        assert!(r.matches.is_empty());
        assert_eq!(r.false_positives, vec![0]);
        assert_eq!(r.false_negatives, vec![0]);
    }

    #[test]
    fn category_and_frame_must_agree() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let r = match_detections(&[gt(0, b, 1)], &[det(0, b, 2, 0.9), det(1, b, 1, 0.9)], 0.5);
        assert!(r.matches.is_empty());
        assert_eq!(r.false_positives.len(), 2);
    }

    #[test]
    fn highest_iou_claimed_then_lowest_index() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(2.0, 0.0, 10.0, 10.0);
        let r = match_detections(&[gt(0, a, 1), gt(0, b, 1)], &[det(0, b, 1, 0.9)], 0.5);
        assert_eq!(r.matches[0].gt, 1);
        let r = match_detections(&[gt(0, a, 1), gt(0, a, 1)], &[det(0, a, 1, 0.9)], 0.5);
        assert_eq!(r.matches[0].gt, 0);
    }

    #[test]
    fn perfect_detector() {
        let gts: Vec<_> = (0..5).map(|f| gt(f, bx(f as f64, 0.0, 10.0, 10.0), 1 + (f % 2) as u32)).collect();
        let preds: Vec<_> = gts.iter().map(|g| det(g.frame, g.bbox, g.category.0, 1.0)).collect();
        let r = average_precision(&gts, &preds, &ApParams::default()).unwrap();
        assert_eq!(r.ap, 1.0);
        assert_eq!(r.ar, 1.0);
        assert_eq!(r.per_class.len(), 2);
    }

    #[test]
    fn no_predictions() {
        let r = average_precision(&[gt(0, bx(0.0, 0.0, 1.0, 1.0), 1)], &[], &ApParams::default()).unwrap();
        assert_eq!((r.ap, r.ar), (0.0, 0.0));
    }

    #[test]
    fn hand_traced_staircase() {
        // two GT on separate frames; predictions: TP (0.9), FP (0.8), TP (0.7)
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let gts = [gt(0, a, 1), gt(1, a, 1)];
        let preds = [det(0, a, 1, 0.9), det(2, a, 1, 0.8), det(1, a, 1, 0.7)];
        let r = average_precision(&gts, &preds, &ApParams::single(0.5)).unwrap();
        // precision 1, 1/2, 2/3 -> envelope 1, 2/3, 2/3; recall 1/2, 1/2, 1
        // 51 points with r <= 0.5 take 1.0, 50 points take 2/3
        let expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((r.ap - expected).abs() < 1e-12);
        assert_eq!(r.ar, 1.0);
    }

    #[test]
    fn classes_without_gt_are_excluded() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let r = average_precision(&[gt(0, a, 1)], &[det(0, a, 1, 0.9), det(0, a, 7, 0.9)], &ApParams::default()).unwrap();
        assert_eq!(r.per_class.len(), 1);
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn max_dets_truncates_per_frame() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let preds = [det(0, bx(50.0, 50.0, 5.0, 5.0), 1, 0.9), det(0, a, 1, 0.5)];
        let params = ApParams { max_dets: 1, ..ApParams::single(0.5) };
        let r = average_precision(&[gt(0, a, 1)], &preds, &params).unwrap();
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(average_precision(&[], &[], &ApParams::default()), Err(DetectionEvalError::EmptyGroundTruth));
        let g = [gt(0, bx(0.0, 0.0, 1.0, 1.0), 1)];
        assert!(average_precision(&g, &[], &ApParams::single(0.0)).is_err());
        assert!(average_precision(&g, &[det(0, g[0].bbox, 1, 1.5)], &ApParams::default()).is_err());
    }

    #[test]
    fn coco_thresholds() {
        let t = coco_iou_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
        assert!((t[3] - 0.65).abs() < 1e-15);
    }
}
