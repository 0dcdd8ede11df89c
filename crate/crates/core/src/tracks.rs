//! Keyframe box tracks and linear interpolation between keyframes.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::CowId;
use crate::timesync::FrameIndex;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("invalid box ({x}, {y}, {w}, {h}): width and height must be finite and positive")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("track for cow {0} has no keyframes")]
    NoKeyframes(CowId),
    #[error("track for cow {cow_id}: keyframe {frame} does not follow {previous}")]
    Unordered { cow_id: CowId, frame: FrameIndex, previous: FrameIndex },
    #[error("frame {frame} outside track span [{first}, {last}] for cow {cow_id}")]
    OutOfSpan { cow_id: CowId, frame: FrameIndex, first: FrameIndex, last: FrameIndex },
}

/// Axis-aligned box in pixels: top-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, TrackError> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if finite && self.w > 0.0 && self.h > 0.0 {
            Ok(())
        } else {
            Err(TrackError::InvalidBox { x: self.x, y: self.y, w: self.w, h: self.h })
        }
    }

    pub fn from_xywh(v: [f64; 4]) -> Result<Self, TrackError> {
        BBox::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_xywh(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersection with `[0, width] x [0, height]`, or `None` if empty.
    /// Boxes already inside come back bit-for-bit unchanged.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        if self.x >= 0.0 && self.y >= 0.0 && self.right() <= width && self.bottom() <= height {
            return Some(*self);
        }
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        (x1 > x0 && y1 > y0).then_some(BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
    }

    /// Intersection over union; 0 for disjoint boxes.
    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

/// Intersection area over union area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One cow's annotated boxes on strictly increasing keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrack")]
pub struct Track {
    pub cow_id: CowId,
    keyframes: Vec<(FrameIndex, BBox)>,
}

#[derive(Deserialize)]
struct RawTrack {
    cow_id: CowId,
    keyframes: Vec<(FrameIndex, BBox)>,
}

impl TryFrom<RawTrack> for Track {
    type Error = TrackError;

    fn try_from(raw: RawTrack) -> Result<Self, Self::Error> {
        Track::new(raw.cow_id, raw.keyframes)
    }
}

impl Track {
    pub fn new(cow_id: CowId, keyframes: Vec<(FrameIndex, BBox)>) -> Result<Self, TrackError> {
        if keyframes.is_empty() {
            return Err(TrackError::NoKeyframes(cow_id));
        }
        for (i, (frame, b)) in keyframes.iter().enumerate() {
            b.validate()?;
            if i > 0 && *frame <= keyframes[i - 1].0 {
                return Err(TrackError::Unordered { cow_id, frame: *frame, previous: keyframes[i - 1].0 });
            }
        }
        Ok(Track { cow_id, keyframes })
    }

    pub fn keyframes(&self) -> &[(FrameIndex, BBox)] {
        &self.keyframes
    }

    pub fn first_frame(&self) -> FrameIndex {
        self.keyframes[0].0
    }

    pub fn last_frame(&self) -> FrameIndex {
        self.keyframes[self.keyframes.len() - 1].0
    }

    pub fn span(&self) -> RangeInclusive<FrameIndex> {
        self.first_frame()..=self.last_frame()
    }

    pub fn covers(&self, frame: FrameIndex) -> bool {
        self.span().contains(&frame)
    }

    /// Box at `frame`, linear in each of x, y, w, h between the bracketing
    /// keyframes. No extrapolation past the first or last keyframe.
    pub fn interpolate(&self, frame: FrameIndex) -> Result<BBox, TrackError> {
        if !self.covers(frame) {
            return Err(TrackError::OutOfSpan {
                cow_id: self.cow_id,
                frame,
                first: self.first_frame(),
                last: self.last_frame(),
            });
        }
        let i = match self.keyframes.binary_search_by_key(&frame, |k| k.0) {
            Ok(i) => return Ok(self.keyframes[i].1),
            Err(i) => i,
        };
        let (f0, a) = self.keyframes[i - 1];
        let (f1, b) = self.keyframes[i];
        let step = (frame - f0) as f64;
        let span = (f1 - f0) as f64;
        // (delta * step) / span keeps integer-grid data exact
        let lerp = |p: f64, q: f64| p + (q - p) * step / span;
        Ok(BBox { x: lerp(a.x, b.x), y: lerp(a.y, b.y), w: lerp(a.w, b.w), h: lerp(a.h, b.h) })
    }

    /// One box per frame of `range`; empty when `range` is empty.
    pub fn densify(&self, range: RangeInclusive<FrameIndex>) -> Result<Vec<(FrameIndex, BBox)>, TrackError> {
        if range.is_empty() {
            return Ok(Vec::new());
        }
        for end in [*range.start(), *range.end()] {
            self.interpolate(end)?;
        }
        range.map(|f| self.interpolate(f).map(|b| (f, b))).collect()
    }

    /// Every frame of the keyframe span.
    pub fn densify_all(&self) -> Vec<(FrameIndex, BBox)> {
        self.densify(self.span()).expect("span is always covered")
    }
}
