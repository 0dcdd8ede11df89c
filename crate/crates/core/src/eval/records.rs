//! Line-delimited record formats.
//!
//! * detections: JSON Lines, `{"frame":12,"bbox":[x,y,w,h],"category":3,"score":0.97}`
//! * clip scores: JSON Lines, `{"clip_id":"...","scores":{"Drinking":0.9,"Grazing":0.05,"Other":0.05}}`
//! * clip labels: CSV with header `clip_id,label`

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::coco::CocoDocument;
use crate::eval::classification::argmax;
use crate::eval::detection::{Detection, GroundTruth};
use crate::label::{ActionLabel, CowId, LabelSet};
use crate::tracks::BBox;

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("clip {clip_id:?}: {reason}")]
    Scores { clip_id: String, reason: String },
    #[error("clip {0:?} listed twice")]
    DuplicateClip(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetectionRecord {
    frame: u64,
    bbox: [f64; 4],
    category: u32,
    score: f64,
}

fn jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<(usize, T)>, RecordError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| RecordError::Line { line: i + 1, reason: e.to_string() })
        })
        .collect()
}

pub fn read_detections(text: &str) -> Result<Vec<Detection>, RecordError> {
    jsonl::<DetectionRecord>(text)?
        .into_iter()
        .map(|(line, r)| {
            let err = |reason: String| RecordError::Line { line, reason };
            let bbox = BBox::from_xywh(r.bbox).map_err(|e| err(e.to_string()))?;
            if r.category == 0 {
                return Err(err("category must be a positive cow id".into()));
            }
            let d = Detection { frame: r.frame, bbox, category: CowId(r.category), score: r.score };
            d.validate().map_err(|e| err(e.to_string()))?;
            Ok(d)
        })
        .collect()
}

pub fn write_detections(dets: &[Detection]) -> String {
    dets.iter()
        .map(|d| {
            let r = DetectionRecord { frame: d.frame, bbox: d.bbox.to_xywh(), category: d.category.get(), score: d.score };
            serde_json::to_string(&r).expect("detection serializes") + "\n"
        })
        .collect()
}

/// Ground-truth boxes of a COCO document, keyed by frame index.
pub fn ground_truth_from_coco(doc: &CocoDocument) -> Result<Vec<GroundTruth>, RecordError> {
    let frames: BTreeMap<u64, u64> = doc.images.iter().filter_map(|i| i.frame_index().map(|f| (i.id, f))).collect();
    doc.annotations
        .iter()
        .map(|a| {
            let err = |reason: String| RecordError::Line { line: a.id as usize, reason: format!("annotation {}: {reason}", a.id) };
            let frame = *frames.get(&a.image_id).ok_or_else(|| err(format!("unknown image {}", a.image_id)))?;
            let category = u32::try_from(a.category_id).ok().filter(|c| *c > 0).ok_or_else(|| err("bad category".into()))?;
            let bbox = BBox::from_xywh(a.bbox).map_err(|e| err(e.to_string()))?;
            Ok(GroundTruth { frame, bbox, category: CowId(category) })
        })
        .collect()
}

/// Per-label scores for one clip or window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScore {
    pub clip_id: String,
    pub scores: BTreeMap<String, f64>,
}

impl ActionScore {
    /// Scores must be finite and name only known labels. Labels missing from
    /// the record score 0. With `normalized`, scores must sum to 1 within 1e-6.
    pub fn validate(&self, labels: &LabelSet, normalized: bool) -> Result<(), RecordError> {
        let err = |reason: String| RecordError::Scores { clip_id: self.clip_id.clone(), reason };
        if self.scores.is_empty() {
            return Err(err("no scores".into()));
        }
        for (label, s) in &self.scores {
            if labels.index_of(label).is_none() {
                return Err(err(format!("unknown label {label:?}")));
            }
            if !s.is_finite() {
                return Err(err(format!("score for {label} is not finite")));
            }
        }
        if normalized {
            let sum: f64 = self.scores.values().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(err(format!("scores sum to {sum}, expected 1")));
            }
        }
        Ok(())
    }

    /// Scores in label-set order.
    pub fn vector(&self, labels: &LabelSet) -> Vec<f64> {
        labels.labels().iter().map(|l| self.scores.get(l.as_str()).copied().unwrap_or(0.0)).collect()
    }

    /// Highest-scoring label; ties go to the earlier label in the set.
    pub fn best(&self, labels: &LabelSet) -> (ActionLabel, f64) {
        let v = self.vector(labels);
        let i = argmax(&v).expect("label set is non-empty");
        (labels.labels()[i].clone(), v[i])
    }
}

pub fn read_action_scores(text: &str) -> Result<Vec<ActionScore>, RecordError> {
    let rows = jsonl::<ActionScore>(text)?;
    let mut seen = BTreeSet::new();
    rows.into_iter()
        .map(|(_, r)| {
            if !seen.insert(r.clip_id.clone()) {
                return Err(RecordError::DuplicateClip(r.clip_id));
            }
            Ok(r)
        })
        .collect()
}

pub fn write_action_scores(scores: &[ActionScore]) -> String {
    scores.iter().map(|s| serde_json::to_string(s).expect("scores serialize") + "\n").collect()
}

/// Read `clip_id,label` CSV rows in file order.
pub fn read_clip_labels(text: &str) -> Result<Vec<(String, String)>, RecordError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| RecordError::Line { line: 1, reason: e.to_string() })?;
    if headers.iter().collect::<Vec<_>>() != ["clip_id", "label"] {
        return Err(RecordError::Line { line: 1, reason: "expected header clip_id,label".into() });
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| RecordError::Line { line: i + 2, reason: e.to_string() })?;
        if rec.len() != 2 {
            return Err(RecordError::Line { line: i + 2, reason: format!("expected 2 fields, found {}", rec.len()) });
        }
        if !seen.insert(rec[0].to_string()) {
            return Err(RecordError::DuplicateClip(rec[0].to_string()));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

pub fn write_clip_labels<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["clip_id", "label"]).expect("in-memory write");
    for (id, label) in rows {
        w.write_record([id, label]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detections_round_trip() {
        let d = vec![Detection { frame: 4, bbox: BBox::new(1.5, 2.0, 3.0, 4.0).unwrap(), category: CowId(2), score: 0.25 }];
        let text = write_detections(&d);
        assert_eq!(read_detections(&text).unwrap(), d);
        assert!(read_detections("{\"frame\":1,\"bbox\":[0,0,0,1],\"category\":1,\"score\":0.5}").is_err());
        assert!(read_detections("{\"frame\":1,\"bbox\":[0,0,1,1],\"category\":1,\"score\":2}").is_err());
        assert!(matches!(read_detections("\nnot json"), Err(RecordError::Line { line: 2, .. })));
    }

    #[test]
    fn score_validation_and_argmax() {
        let labels = LabelSet::default();
        let s = ActionScore {
            clip_id: "c".into(),
            scores: [("Drinking".to_string(), 0.4), ("Grazing".to_string(), 0.4), ("Other".to_string(), 0.2)].into(),
        };
        s.validate(&labels, true).unwrap();
        assert_eq!(s.best(&labels), (ActionLabel::new("Drinking"), 0.4));
        let mut bad = s.clone();
        bad.scores.insert("Other".into(), 0.3);
        assert!(bad.validate(&labels, true).is_err());
        assert!(bad.validate(&labels, false).is_ok());
        bad.scores.insert("Sleeping".into(), 0.0);
        assert!(bad.validate(&labels, false).is_err());
        let mut nan = s;
        nan.scores.insert("Other".into(), f64::NAN);
        assert!(nan.validate(&labels, false).is_err());
    }

    #[test]
    fn clip_labels() {
        let text = write_clip_labels([("a", "Drinking"), ("b,1", "Other")]);
        assert_eq!(read_clip_labels(&text).unwrap(), vec![("a".into(), "Drinking".into()), ("b,1".into(), "Other".into())]);
        assert!(read_clip_labels("id,label\na,b\n").is_err());
        assert!(matches!(read_clip_labels("clip_id,label\na,b\na,c\n"), Err(RecordError::DuplicateClip(_))));
    }

    #[test]
    fn duplicate_score_records() {
        let text = "{\"clip_id\":\"a\",\"scores\":{\"Other\":1}}\n{\"clip_id\":\"a\",\"scores\":{\"Other\":1}}\n";
        assert!(matches!(read_action_scores(text), Err(RecordError::DuplicateClip(_))));
    }
}
