//! COCO object-detection documents for identification ground truth.
//!
//! Category ids are cow ids (`cow_<id>`), so a detector trained on the export
//! identifies as it detects. Image records carry an extra `frame` field; when
//! it is absent (e.g. a CVAT export) the frame index is `id - 1`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::CowId;
use crate::timesync::FrameIndex;
use crate::tracks::{BBox, Track, TrackError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<FrameIndex>,
}

impl CocoImage {
    pub fn frame_index(&self) -> Option<FrameIndex> {
        self.frame.or_else(|| self.id.checked_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercategory: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CocoDocument {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Error, PartialEq)]
pub enum CocoError {
    #[error("track for cow {cow_id} references frame {frame}, which has no metadata")]
    MissingFrame { cow_id: CowId, frame: FrameIndex },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("annotation {annotation} references missing {kind} {id}")]
    DanglingReference { annotation: u64, kind: &'static str, id: u64 },
    #[error("annotation {annotation}: bbox {bbox:?} is empty or outside image {image} ({width}x{height})")]
    BadBox { annotation: u64, image: u64, bbox: [f64; 4], width: u32, height: u32 },
    #[error("image {0} has no usable frame index")]
    NoFrameIndex(u64),
    #[error("category id {0} is not a valid cow id")]
    BadCategory(u64),
    #[error("cow {cow_id} has two boxes on frame {frame}")]
    DuplicateBox { cow_id: CowId, frame: FrameIndex },
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error("invalid COCO JSON: {0}")]
    Json(String),
}

/// Size and file name of one video frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

/// Outcome of [`export_coco`] besides the document itself.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CocoExportReport {
    /// Boxes cut back to the image bounds.
    pub clamped: usize,
    /// Boxes entirely outside their image, left out.
    pub dropped: usize,
}

const EPS: f64 = 1e-9;

impl CocoDocument {
    pub fn from_json(text: &str) -> Result<Self, CocoError> {
        serde_json::from_str(text).map_err(|e| CocoError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("COCO document serializes")
    }

    /// Check id uniqueness, reference integrity and box bounds.
    pub fn validate(&self) -> Result<(), CocoError> {
        let mut images = BTreeMap::new();
        for img in &self.images {
            if images.insert(img.id, img).is_some() {
                return Err(CocoError::DuplicateId { kind: "image", id: img.id });
            }
        }
        let mut cats = BTreeSet::new();
        for c in &self.categories {
            if !cats.insert(c.id) {
                return Err(CocoError::DuplicateId { kind: "category", id: c.id });
            }
        }
        let mut anns = BTreeSet::new();
        for a in &self.annotations {
            if !anns.insert(a.id) {
                return Err(CocoError::DuplicateId { kind: "annotation", id: a.id });
            }
            let img = images
                .get(&a.image_id)
                .ok_or(CocoError::DanglingReference { annotation: a.id, kind: "image", id: a.image_id })?;
            if !cats.contains(&a.category_id) {
                return Err(CocoError::DanglingReference { annotation: a.id, kind: "category", id: a.category_id });
            }
            let [x, y, w, h] = a.bbox;
            let inside = [x, y, w, h].iter().all(|v| v.is_finite())
                && w > 0.0
                && h > 0.0
                && x >= -EPS
                && y >= -EPS
                && x + w <= img.width as f64 + EPS
                && y + h <= img.height as f64 + EPS;
            if !inside {
                return Err(CocoError::BadBox {
                    annotation: a.id,
                    image: img.id,
                    bbox: a.bbox,
                    width: img.width,
                    height: img.height,
                });
            }
        }
        Ok(())
    }
}

/// Export dense (keyframe + interpolated) boxes of every track.
///
/// Every frame with metadata becomes an image (`id = frame + 1`); every frame
/// of every track span becomes an annotation, clamped to the image bounds.
pub fn export_coco(
    tracks: &[Track],
    frames: &BTreeMap<FrameIndex, FrameMeta>,
) -> Result<(CocoDocument, CocoExportReport), CocoError> {
    build_document(tracks, frames, Track::densify_all)
}

/// Export only the keyframes of every track, as an annotation tool would.
pub fn export_keyframes(
    tracks: &[Track],
    frames: &BTreeMap<FrameIndex, FrameMeta>,
) -> Result<(CocoDocument, CocoExportReport), CocoError> {
    build_document(tracks, frames, |t| t.keyframes().to_vec())
}

fn build_document(
    tracks: &[Track],
    frames: &BTreeMap<FrameIndex, FrameMeta>,
    boxes_of: impl Fn(&Track) -> Vec<(FrameIndex, BBox)>,
) -> Result<(CocoDocument, CocoExportReport), CocoError> {
    let mut doc = CocoDocument {
        images: frames
            .iter()
            .map(|(&frame, meta)| CocoImage {
                id: frame + 1,
                file_name: meta.file_name.clone(),
                width: meta.width,
                height: meta.height,
                frame: Some(frame),
            })
            .collect(),
        ..Default::default()
    };
    let cows: BTreeSet<CowId> = tracks.iter().map(|t| t.cow_id).collect();
    doc.categories = cows
        .iter()
        .map(|c| CocoCategory { id: c.get() as u64, name: format!("cow_{c}"), supercategory: Some("cow".into()) })
        .collect();

    let mut boxes: Vec<(FrameIndex, CowId, BBox)> = Vec::new();
    for t in tracks {
        for (frame, b) in boxes_of(t) {
            if !frames.contains_key(&frame) {
                return Err(CocoError::MissingFrame { cow_id: t.cow_id, frame });
            }
            boxes.push((frame, t.cow_id, b));
        }
    }
    boxes.sort_by_key(|(f, c, _)| (*f, *c));

    let mut report = CocoExportReport::default();
    for (frame, cow, b) in boxes {
        let meta = &frames[&frame];
        let Some(clamped) = b.clamp_to(meta.width as f64, meta.height as f64) else {
            report.dropped += 1;
            continue;
        };
        if clamped != b {
            report.clamped += 1;
        }
        doc.annotations.push(CocoAnnotation {
            id: doc.annotations.len() as u64 + 1,
            image_id: frame + 1,
            category_id: cow.get() as u64,
            bbox: clamped.to_xywh(),
            area: clamped.area(),
            iscrowd: 0,
        });
    }
    doc.validate()?;
    Ok((doc, report))
}

/// Rebuild per-cow tracks from a COCO document.
///
/// Each annotated frame becomes a keyframe, so dense exports simply turn
/// interpolation into lookup.
pub fn tracks_from_coco(doc: &CocoDocument) -> Result<Vec<Track>, CocoError> {
    let frame_of: BTreeMap<u64, FrameIndex> = doc
        .images
        .iter()
        .map(|img| img.frame_index().map(|f| (img.id, f)).ok_or(CocoError::NoFrameIndex(img.id)))
        .collect::<Result<_, _>>()?;
    let mut per_cow: BTreeMap<CowId, BTreeMap<FrameIndex, BBox>> = BTreeMap::new();
    for a in &doc.annotations {
        let frame = *frame_of
            .get(&a.image_id)
            .ok_or(CocoError::DanglingReference { annotation: a.id, kind: "image", id: a.image_id })?;
        let cow = u32::try_from(a.category_id)
            .ok()
            .filter(|&c| c > 0)
            .map(CowId)
            .ok_or(CocoError::BadCategory(a.category_id))?;
        let b = BBox::from_xywh(a.bbox)?;
        if per_cow.entry(cow).or_default().insert(frame, b).is_some() {
            return Err(CocoError::DuplicateBox { cow_id: cow, frame });
        }
    }
    per_cow
        .into_iter()
        .map(|(cow, boxes)| Track::new(cow, boxes.into_iter().collect()).map_err(CocoError::from))
        .collect()
}

/// Frame metadata for `frames` with a uniform size and `frame_%06d.jpg` names.
pub fn uniform_frames(frames: impl IntoIterator<Item = FrameIndex>, width: u32, height: u32) -> BTreeMap<FrameIndex, FrameMeta> {
    frames
        .into_iter()
        .map(|f| (f, FrameMeta { file_name: format!("frame_{f:06}.jpg"), width, height }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn one_track_stride_nine() {
        let t = Track::new(CowId(3), vec![(0, bx(0.0, 0.0, 10.0, 10.0)), (9, bx(90.0, 0.0, 10.0, 10.0))]).unwrap();
        let (doc, report) = export_coco(&[t], &uniform_frames(0..20, 640, 480)).unwrap();
        assert_eq!(doc.annotations.len(), 10);
        assert_eq!(doc.categories.len(), 1);
        assert_eq!(doc.categories[0].name, "cow_3");
        assert_eq!(doc.images.len(), 20);
        assert_eq!(report, CocoExportReport::default());
        assert_eq!(doc.annotations[4].bbox, [40.0, 0.0, 10.0, 10.0]);
        assert_eq!(doc.annotations[4].area, 100.0);
    }

    #[test]
    fn empty_export_is_valid() {
        let (doc, _) = export_coco(&[], &uniform_frames(0..3, 10, 10)).unwrap();
        assert!(doc.annotations.is_empty());
        doc.validate().unwrap();
    }

    #[test]
    fn eight_cows_eight_categories() {
        let tracks: Vec<Track> =
            (1..=8).map(|c| Track::new(CowId(c), vec![(0, bx(c as f64, 0.0, 5.0, 5.0))]).unwrap()).collect();
        let (doc, _) = export_coco(&tracks, &uniform_frames(0..1, 100, 100)).unwrap();
        let names: Vec<_> = doc.categories.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, (1..=8).map(|c| format!("cow_{c}")).collect::<Vec<_>>());
        assert_eq!(doc.categories.iter().map(|c| c.id).collect::<Vec<_>>(), (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn missing_frame_metadata() {
        let t = Track::new(CowId(1), vec![(0, bx(0.0, 0.0, 1.0, 1.0)), (5, bx(0.0, 0.0, 1.0, 1.0))]).unwrap();
        assert_eq!(
            export_coco(&[t], &uniform_frames(0..3, 10, 10)).unwrap_err(),
            CocoError::MissingFrame { cow_id: CowId(1), frame: 3 }
        );
    }

    #[test]
    fn clamps_and_drops() {
        let t = Track::new(CowId(1), vec![(0, bx(-5.0, 0.0, 10.0, 10.0)), (1, bx(50.0, 50.0, 5.0, 5.0))]).unwrap();
        let (doc, report) = export_coco(&[t], &uniform_frames(0..2, 20, 20)).unwrap();
        assert_eq!(report, CocoExportReport { clamped: 1, dropped: 1 });
        assert_eq!(doc.annotations.len(), 1);
        assert_eq!(doc.annotations[0].bbox, [0.0, 0.0, 5.0, 10.0]);
    }

    #[test]
    fn reingest_round_trip_through_json() {
        let t = Track::new(CowId(2), vec![(3, bx(0.1, 0.2, 10.3, 7.7)), (12, bx(33.3, 1.0, 9.1, 8.8))]).unwrap();
        let (doc, _) = export_coco(std::slice::from_ref(&t), &uniform_frames(0..20, 640, 480)).unwrap();
        let back = tracks_from_coco(&CocoDocument::from_json(&doc.to_json()).unwrap()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].keyframes(), t.densify_all().as_slice());
    }

    #[test]
    fn cvat_style_ids_and_errors() {
        let doc = CocoDocument {
            images: vec![CocoImage { id: 1, file_name: "frame_000000.PNG".into(), width: 10, height: 10, frame: None }],
            annotations: vec![CocoAnnotation { id: 1, image_id: 1, category_id: 4, bbox: [1.0, 1.0, 2.0, 2.0], area: 4.0, iscrowd: 0 }],
            categories: vec![CocoCategory { id: 4, name: "cow_4".into(), supercategory: None }],
        };
        doc.validate().unwrap();
        let tracks = tracks_from_coco(&doc).unwrap();
        assert_eq!(tracks[0].first_frame(), 0);

        let mut dup = doc.clone();
        dup.annotations.push(CocoAnnotation { id: 2, ..dup.annotations[0].clone() });
        assert_eq!(tracks_from_coco(&dup).unwrap_err(), CocoError::DuplicateBox { cow_id: CowId(4), frame: 0 });

        let mut dangling = doc.clone();
        dangling.annotations[0].category_id = 9;
        assert!(matches!(dangling.validate(), Err(CocoError::DanglingReference { kind: "category", .. })));

        let mut outside = doc.clone();
        outside.annotations[0].bbox = [9.0, 9.0, 2.0, 2.0];
        assert!(matches!(outside.validate(), Err(CocoError::BadBox { .. })));

        let mut dup_img = doc;
        dup_img.images.push(dup_img.images[0].clone());
        assert!(matches!(dup_img.validate(), Err(CocoError::DuplicateId { kind: "image", .. })));
    }
}
