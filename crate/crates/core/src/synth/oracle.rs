//! Brute-force reference metrics for small instances.
//!
//! AP is built directly from its definition: for every cutoff k of the
//! score-ranked predictions, matching is redone from scratch on the top k
//! alone, and interpolated precision at recall r is the best precision of
//! any cutoff reaching r. Nothing is shared with `eval::detection` except the
//! input types.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::eval::detection::{ApParams, Detection, GroundTruth};
use crate::label::CowId;
use crate::tracks::BBox;

/// Largest groups the oracle accepts.
pub const MAX_GT_PER_GROUP: usize = 5;
pub const MAX_PRED_PER_GROUP: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("frame {frame}, category {category}: {gt} ground truth and {pred} predictions exceed the oracle limits")]
    TooLarge { frame: u64, category: CowId, gt: usize, pred: usize },
    #[error("no ground truth")]
    EmptyGroundTruth,
    #[error("bad parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleMetrics {
    pub ap: f64,
    pub ar: f64,
    /// (category, AP, AR)
    pub per_class: Vec<(CowId, f64, f64)>,
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let left = if a.x > b.x { a.x } else { b.x };
    let top = if a.y > b.y { a.y } else { b.y };
    let right = if a.x + a.w < b.x + b.w { a.x + a.w } else { b.x + b.w };
    let bottom = if a.y + a.h < b.y + b.h { a.y + a.h } else { b.y + b.h };
    if right <= left || bottom <= top {
        return 0.0;
    }
    let inter = (right - left) * (bottom - top);
    let v = inter / (a.w * a.h + b.w * b.h - inter);
    v.min(1.0)
}

/// True positives among `chosen` (prediction indices), matching each frame
/// independently in (score desc, index asc) order.
fn true_positives(gt: &[&GroundTruth], pred: &[&Detection], chosen: &[usize], threshold: f64) -> usize {
    let mut frames: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for &p in chosen {
        frames.entry(pred[p].frame).or_default().push(p);
    }
    let mut tp = 0;
    for (frame, mut ps) in frames {
        ps.sort_by(|&a, &b| pred[b].score.partial_cmp(&pred[a].score).unwrap().then(a.cmp(&b)));
        let gts: Vec<&GroundTruth> = gt.iter().copied().filter(|g| g.frame == frame).collect();
        let mut used = vec![false; gts.len()];
        for p in ps {
            let mut pick: Option<usize> = None;
            let mut pick_iou = -1.0;
            for (k, g) in gts.iter().enumerate() {
                let v = overlap(&pred[p].bbox, &g.bbox);
                if !used[k] && v >= threshold && v > pick_iou {
                    pick = Some(k);
                    pick_iou = v;
                }
            }
            if let Some(k) = pick {
                used[k] = true;
                tp += 1;
            }
        }
    }
    tp
}

fn recall_grid(n: usize) -> Vec<f64> {
    let step = 1.0 / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { 1.0 } else { i as f64 * step }).collect()
}

/// Exhaustive AP/AR with the same definition as the evaluator, for groups of
/// at most 5 ground-truth boxes and 8 predictions per (frame, category).
pub fn oracle_metrics(gt: &[GroundTruth], pred: &[Detection], params: &ApParams) -> Result<OracleMetrics, OracleError> {
    if gt.is_empty() {
        return Err(OracleError::EmptyGroundTruth);
    }
    if params.recall_points < 2 || params.iou_thresholds.is_empty() {
        return Err(OracleError::BadParams("need thresholds and at least 2 recall points".into()));
    }
    let mut sizes: BTreeMap<(u64, CowId), (usize, usize)> = BTreeMap::new();
    for g in gt {
        sizes.entry((g.frame, g.category)).or_default().0 += 1;
    }
    for p in pred {
        sizes.entry((p.frame, p.category)).or_default().1 += 1;
    }
    if let Some((&(frame, category), &(g, p))) = sizes.iter().find(|(_, (g, p))| *g > MAX_GT_PER_GROUP || *p > MAX_PRED_PER_GROUP) {
        return Err(OracleError::TooLarge { frame, category, gt: g, pred: p });
    }

    let grid = recall_grid(params.recall_points);
    let categories: BTreeSet<CowId> = gt.iter().map(|g| g.category).collect();
    let mut per_class = Vec::new();
    for &cat in &categories {
        let cgt: Vec<&GroundTruth> = gt.iter().filter(|g| g.category == cat).collect();
        let mut cpred: Vec<&Detection> = pred.iter().filter(|p| p.category == cat).collect();
        // keep the max_dets best per frame
        let mut per_frame: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, p) in cpred.iter().enumerate() {
            per_frame.entry(p.frame).or_default().push(i);
        }
        let mut keep = vec![false; cpred.len()];
        for ids in per_frame.values_mut() {
            ids.sort_by(|&a, &b| cpred[b].score.partial_cmp(&cpred[a].score).unwrap().then(a.cmp(&b)));
            for &i in ids.iter().take(params.max_dets) {
                keep[i] = true;
            }
        }
        cpred = cpred.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect();

        let mut ranked: Vec<usize> = (0..cpred.len()).collect();
        ranked.sort_by(|&a, &b| {
            cpred[b].score.partial_cmp(&cpred[a].score).unwrap().then(cpred[a].frame.cmp(&cpred[b].frame)).then(a.cmp(&b))
        });

        let n = cgt.len() as f64;
        let (mut ap_sum, mut ar_sum) = (0.0, 0.0);
        for &t in &params.iou_thresholds {
            let t = if t > 1.0 - 1e-10 { 1.0 - 1e-10 } else { t };
            // (precision, recall) at every cutoff
            let curve: Vec<(f64, f64)> = (1..=ranked.len())
                .map(|k| {
                    let tp = true_positives(&cgt, &cpred, &ranked[..k], t) as f64;
                    (tp / k as f64, tp / n)
                })
                .collect();
            let ap: f64 = grid
                .iter()
                .map(|&r| curve.iter().filter(|(_, rec)| *rec >= r).map(|(p, _)| *p).fold(0.0, f64::max))
                .sum::<f64>()
                / grid.len() as f64;
            ap_sum += ap;
            ar_sum += curve.last().map_or(0.0, |c| c.1);
        }
        let k = params.iou_thresholds.len() as f64;
        per_class.push((cat, ap_sum / k, ar_sum / k));
    }
    let c = per_class.len() as f64;
    Ok(OracleMetrics {
        ap: per_class.iter().map(|x| x.1).sum::<f64>() / c,
        ar: per_class.iter().map(|x| x.2).sum::<f64>() / c,
        per_class,
    })
}

/// Per-label (correct, total) and overall accuracy of (truth, prediction) pairs.
pub fn oracle_accuracy<S: AsRef<str>>(pairs: &[(S, S)]) -> (BTreeMap<String, (u64, u64)>, Option<f64>) {
    let mut per: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut correct = 0;
    for (truth, pred) in pairs {
        let e = per.entry(truth.as_ref().to_string()).or_default();
        e.1 += 1;
        if truth.as_ref() == pred.as_ref() {
            e.0 += 1;
            correct += 1;
        }
    }
    let overall = (!pairs.is_empty()).then(|| correct as f64 / pairs.len() as f64);
    (per, overall)
}

/// A random small detection instance within the oracle limits: up to 3
/// frames and 3 categories, near-duplicate and stray predictions, and
/// scores drawn from a coarse grid so ties occur.
pub fn random_instance(seed: u64) -> (Vec<GroundTruth>, Vec<Detection>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(1..=3u64);
    let cats = rng.random_range(1..=3u32);
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    let rand_box = |rng: &mut ChaCha8Rng| {
        let w = rng.random_range(4..=40) as f64;
        let h = rng.random_range(4..=40) as f64;
        BBox { x: rng.random_range(0..=60) as f64, y: rng.random_range(0..=60) as f64, w, h }
    };
    for frame in 0..frames {
        for cat in 1..=cats {
            let category = CowId(cat);
            let n_gt = rng.random_range(0..=MAX_GT_PER_GROUP);
            let boxes: Vec<BBox> = (0..n_gt).map(|_| rand_box(&mut rng)).collect();
            gt.extend(boxes.iter().map(|&bbox| GroundTruth { frame, bbox, category }));
            for _ in 0..rng.random_range(0..=MAX_PRED_PER_GROUP) {
                let bbox = match boxes.len() {
                    n if n > 0 && rng.random_bool(0.7) => {
                        let b = boxes[rng.random_range(0..n)];
                        let d = |rng: &mut ChaCha8Rng| rng.random_range(-4..=4) as f64;
                        BBox { x: b.x + d(&mut rng), y: b.y + d(&mut rng), w: (b.w + d(&mut rng)).max(1.0), h: (b.h + d(&mut rng)).max(1.0) }
                    }
                    _ => rand_box(&mut rng),
                };
                let score = if rng.random_bool(0.5) { rng.random_range(0..=4) as f64 / 4.0 } else { rng.random::<f64>() };
                pred.push(Detection { frame, bbox, category, score });
            }
        }
    }
    if gt.is_empty() {
        gt.push(GroundTruth { frame: 0, bbox: rand_box(&mut rng), category: CowId(1) });
    }
    (gt, pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox { x, y, w, h }
    }

    #[test]
    fn perfect_and_empty() {
        let gt = vec![GroundTruth { frame: 0, bbox: bx(0.0, 0.0, 10.0, 10.0), category: CowId(1) }];
        let pred = vec![Detection { frame: 0, bbox: bx(0.0, 0.0, 10.0, 10.0), category: CowId(1), score: 0.9 }];
        let m = oracle_metrics(&gt, &pred, &ApParams::default()).unwrap();
        assert_eq!((m.ap, m.ar), (1.0, 1.0));
        let m = oracle_metrics(&gt, &[], &ApParams::default()).unwrap();
        assert_eq!((m.ap, m.ar), (0.0, 0.0));
    }

    #[test]
    fn hand_traced_staircase() {
        // 2 gt; ranked hits: TP, FP, TP -> precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
        let g = |x| GroundTruth { frame: 0, bbox: bx(x, 0.0, 10.0, 10.0), category: CowId(1) };
        let p = |x, s| Detection { frame: 0, bbox: bx(x, 0.0, 10.0, 10.0), category: CowId(1), score: s };
        let gt = vec![g(0.0), g(100.0)];
        let pred = vec![p(0.0, 0.9), p(50.0, 0.8), p(100.0, 0.7)];
        let m = oracle_metrics(&gt, &pred, &ApParams::single(0.5)).unwrap();
        assert!((m.ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
        assert_eq!(m.ar, 1.0);
    }

    #[test]
    fn limits_enforced() {
        let gt: Vec<_> = (0..6).map(|i| GroundTruth { frame: 0, bbox: bx(i as f64, 0.0, 1.0, 1.0), category: CowId(1) }).collect();
        assert!(matches!(oracle_metrics(&gt, &[], &ApParams::default()), Err(OracleError::TooLarge { .. })));
        assert_eq!(oracle_metrics(&[], &[], &ApParams::default()), Err(OracleError::EmptyGroundTruth));
    }

    #[test]
    fn random_instances_stay_within_limits() {
        for seed in 0..200 {
            let (gt, pred) = random_instance(seed);
            assert!(oracle_metrics(&gt, &pred, &ApParams::default()).is_ok());
        }
    }

    #[test]
    fn accuracy_counts() {
        let (per, overall) = oracle_accuracy(&[("a", "a"), ("a", "b"), ("b", "b")]);
        assert_eq!(per["a"], (1, 2));
        assert_eq!(per["b"], (1, 1));
        assert!((overall.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }
}
