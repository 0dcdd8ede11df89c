//! Temporal and spatial geometry of action clips.
//!
//! Temporal: segment doubling around an annotated interval, and tiling of an
//! interval into fixed-length windows. Spatial: the rectangle-to-square crop
//! and the output-pixel to source-pixel map with zero padding outside the
//! source frame. Pixel resampling itself is left to the external extractor.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{ActionLabel, CowId};
use crate::timesync::{FrameIndex, FrameRate};
use crate::tracks::{BBox, Track};
use crate::vtt::{BehaviourCue, Timecode};

pub const DEFAULT_OUT_SIZE: u32 = 256;

#[derive(Debug, Error, PartialEq)]
pub enum ClipError {
    #[error("interval start {start} is not before end {end}")]
    EmptyInterval { start: Timecode, end: Timecode },
    #[error("window and stride must be positive (window {window_ms} ms, stride {stride_ms} ms)")]
    BadTiling { window_ms: u64, stride_ms: u64 },
    #[error("window of {0} ms holds no frames at the configured frame rate")]
    EmptyWindow(u64),
    #[error("output size must be positive")]
    ZeroOutSize,
    #[error("{} cue(s) reference cows without a track: {}", .0.len(), describe_missing(.0))]
    UnknownCow(Vec<(usize, CowId)>),
}

fn describe_missing(missing: &[(usize, CowId)]) -> String {
    missing
        .iter()
        .map(|(i, c)| format!("cue #{i} (cow {c})"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: Timecode,
    pub end: Timecode,
}

impl TimeInterval {
    pub fn new(start: Timecode, end: Timecode) -> Result<Self, ClipError> {
        if start >= end {
            return Err(ClipError::EmptyInterval { start, end });
        }
        Ok(TimeInterval { start, end })
    }

    pub fn duration_ms(&self) -> u64 {
        self.end.0 - self.start.0
    }
}

/// Double an interval about its centre, then clamp it to `[0, video_len]`.
///
/// With an odd millisecond sum the doubled ends fall on half milliseconds;
/// they are widened outward so the centre is still exact.
pub fn double_segment(seg: TimeInterval, video_len: Timecode) -> TimeInterval {
    let (s, e) = (seg.start.0 as i128, seg.end.0 as i128);
    let lo = (3 * s - e).div_euclid(2);
    let hi = -(-(3 * e - s)).div_euclid(2);
    let clamp = |v: i128| v.clamp(0, video_len.0 as i128) as u64;
    TimeInterval { start: Timecode(clamp(lo)), end: Timecode(clamp(hi)) }
}

/// Square box with side `max(w, h)` and the same centre.
pub fn square_box(b: &BBox) -> BBox {
    let side = b.w.max(b.h);
    let (cx, cy) = b.center();
    // the longer dimension is kept verbatim so squaring a square is exact
    let x = if b.w == side { b.x } else { cx - side / 2.0 };
    let y = if b.h == side { b.y } else { cy - side / 2.0 };
    BBox { x, y, w: side, h: side }
}

/// Where an output pixel samples from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CropSample {
    /// Continuous source coordinates inside the frame.
    Source { x: f64, y: f64 },
    /// Outside the source frame; the pixel is zero.
    Pad,
}

impl CropSample {
    /// Nearest-neighbour source pixel.
    pub fn pixel(self) -> Option<(u32, u32)> {
        match self {
            CropSample::Source { x, y } => Some((x.floor() as u32, y.floor() as u32)),
            CropSample::Pad => None,
        }
    }
}

/// Maps a square source region onto an `out_size` x `out_size` output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub src_box: BBox,
    pub out_size: u32,
    pub frame_w: u32,
    pub frame_h: u32,
}

impl CropTransform {
    pub fn new(src_box: BBox, out_size: u32, frame_w: u32, frame_h: u32) -> Result<Self, ClipError> {
        if out_size == 0 {
            return Err(ClipError::ZeroOutSize);
        }
        Ok(CropTransform { src_box: square_box(&src_box), out_size, frame_w, frame_h })
    }

    pub fn side(&self) -> f64 {
        self.src_box.w
    }

    /// Source pixels per output pixel.
    pub fn scale(&self) -> f64 {
        self.side() / self.out_size as f64
    }

    /// Source location of output pixel `(u, v)`.
    pub fn map(&self, u: u32, v: u32) -> CropSample {
        crop_pixel_map(self, (u, v))
    }

    /// Output pixels that fall outside the source frame.
    pub fn pad_count(&self) -> u64 {
        let n = self.out_size;
        let inside = |c: f64, limit: u32| c >= 0.0 && c < limit as f64;
        let cols = (0..n).filter(|&u| inside(self.src_box.x + u as f64 * self.side() / n as f64, self.frame_w)).count();
        let rows = (0..n).filter(|&v| inside(self.src_box.y + v as f64 * self.side() / n as f64, self.frame_h)).count();
        (n as u64 * n as u64) - (cols as u64 * rows as u64)
    }

    /// ffmpeg filter chain: zero-pad, crop the square, scale to the output size.
    pub fn ffmpeg_filter(&self) -> String {
        let pad = self.side().ceil() as i64 + 1;
        let side = self.side().round().max(1.0) as i64;
        let x = self.src_box.x.round() as i64 + pad;
        let y = self.src_box.y.round() as i64 + pad;
        format!(
            "pad=iw+{p2}:ih+{p2}:{pad}:{pad}:black,crop={side}:{side}:{x}:{y},scale={o}:{o}:flags=neighbor",
            p2 = 2 * pad,
            o = self.out_size
        )
    }
}

/// Output pixel `(u, v)` to source coordinates, or [`CropSample::Pad`] when
/// the source point lies outside `[0, frame_w) x [0, frame_h)`.
pub fn crop_pixel_map(t: &CropTransform, (u, v): (u32, u32)) -> CropSample {
    let side = t.side();
    let n = t.out_size as f64;
    let x = t.src_box.x + u as f64 * side / n;
    let y = t.src_box.y + v as f64 * side / n;
    if x >= 0.0 && y >= 0.0 && x < t.frame_w as f64 && y < t.frame_h as f64 {
        CropSample::Source { x, y }
    } else {
        CropSample::Pad
    }
}

/// Start times of `window_ms` windows every `stride_ms` over `[start, end)`.
///
/// When the interval is not an exact tiling, a final window is anchored to
/// `end`. Intervals shorter than one window yield nothing.
pub fn tile_windows(interval: TimeInterval, window_ms: u64, stride_ms: u64) -> Result<Vec<TimeInterval>, ClipError> {
    if window_ms == 0 || stride_ms == 0 {
        return Err(ClipError::BadTiling { window_ms, stride_ms });
    }
    let (s, e) = (interval.start.0, interval.end.0);
    let mut out = Vec::new();
    let mut t = s;
    while t + window_ms <= e {
        out.push(TimeInterval { start: Timecode(t), end: Timecode(t + window_ms) });
        t += stride_ms;
    }
    if let Some(last) = out.last() {
        if last.end.0 < e {
            out.push(TimeInterval { start: Timecode(e - window_ms), end: Timecode(e) });
        }
    }
    Ok(out)
}

/// Parameters shared by every clip of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipPlanParams {
    pub frame_rate: FrameRate,
    pub window_ms: u64,
    pub stride_ms: u64,
    pub out_size: u32,
    pub frame_w: u32,
    pub frame_h: u32,
}

impl ClipPlanParams {
    pub fn frames_per_window(&self) -> u64 {
        self.frame_rate.frames_in(self.window_ms)
    }

    fn first_frame(&self, start: Timecode) -> FrameIndex {
        // nearest frame to the window start; integer arithmetic avoids ties drifting
        let FrameRate { num, den } = self.frame_rate;
        ((start.0 as u128 * num as u128 + 500 * den as u128) / (1000 * den as u128)) as FrameIndex
    }
}

/// Frames and per-frame crops of one window of one cow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub start: Timecode,
    pub end: Timecode,
    pub first_frame: FrameIndex,
    pub last_frame: FrameIndex,
    /// Square source box of each frame, `first_frame..=last_frame`.
    pub crops: Vec<BBox>,
}

impl WindowGeometry {
    pub fn frame_count(&self) -> u64 {
        self.last_frame - self.first_frame + 1
    }
}

/// Resolve one window against a track. `None` if any frame lies outside the
/// track's keyframe span.
pub fn window_geometry(track: &Track, window: TimeInterval, params: &ClipPlanParams) -> Result<Option<WindowGeometry>, ClipError> {
    let n = params.frames_per_window();
    if n == 0 {
        return Err(ClipError::EmptyWindow(params.window_ms));
    }
    let first = params.first_frame(window.start);
    let last = first + n - 1;
    if !track.covers(first) || !track.covers(last) {
        return Ok(None);
    }
    let crops = (first..=last)
        .map(|f| track.interpolate(f).map(|b| square_box(&b)))
        .collect::<Result<Vec<_>, _>>()
        .expect("frames checked against span");
    Ok(Some(WindowGeometry { start: window.start, end: window.end, first_frame: first, last_frame: last, crops }))
}

/// A fully resolved extraction job for one labelled clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub clip_id: String,
    pub video_ref: String,
    pub cow_id: CowId,
    pub label: ActionLabel,
    pub out_size: u32,
    pub frame_w: u32,
    pub frame_h: u32,
    #[serde(flatten)]
    pub window: WindowGeometry,
}

impl ClipSpec {
    pub fn transforms(&self) -> impl Iterator<Item = CropTransform> + '_ {
        self.window.crops.iter().map(move |b| CropTransform {
            src_box: *b,
            out_size: self.out_size,
            frame_w: self.frame_w,
            frame_h: self.frame_h,
        })
    }

    pub fn frame_count(&self) -> u64 {
        self.window.frame_count()
    }
}

/// File stem of a video reference with anything but `[A-Za-z0-9-]` replaced by `_`.
pub fn video_stem(video_ref: &str) -> String {
    let stem = Path::new(video_ref)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| video_ref.to_string());
    stem.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Filesystem-safe clip identifier.
pub fn clip_id(video_ref: &str, cow_id: CowId, label: &ActionLabel, start: Timecode) -> String {
    format!("{}_cow{cow_id}_{label}_{:09}", video_stem(video_ref), start.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// The cue is shorter than one window.
    ShorterThanWindow,
    /// The window needs boxes outside the cow's keyframe span.
    OutsideTrack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedWindow {
    pub cue_index: usize,
    pub cow_id: CowId,
    pub start: Timecode,
    pub end: Timecode,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ClipPlan {
    pub clips: Vec<ClipSpec>,
    pub dropped: Vec<DroppedWindow>,
}

/// Tile every cue into windows and attach per-frame square crops taken from
/// the cow's interpolated track.
///
/// Output order is cue order, then window order within a cue.
pub fn plan_clips(
    video_ref: &str,
    tracks: &[Track],
    cues: &[BehaviourCue],
    params: &ClipPlanParams,
) -> Result<ClipPlan, ClipError> {
    if params.out_size == 0 {
        return Err(ClipError::ZeroOutSize);
    }
    if params.window_ms == 0 || params.stride_ms == 0 {
        return Err(ClipError::BadTiling { window_ms: params.window_ms, stride_ms: params.stride_ms });
    }
    if params.frames_per_window() == 0 {
        return Err(ClipError::EmptyWindow(params.window_ms));
    }
    let by_cow: BTreeMap<CowId, &Track> = tracks.iter().map(|t| (t.cow_id, t)).collect();
    let missing: Vec<(usize, CowId)> = cues
        .iter()
        .enumerate()
        .filter(|(_, c)| !by_cow.contains_key(&c.cow_id))
        .map(|(i, c)| (i, c.cow_id))
        .collect();
    if !missing.is_empty() {
        return Err(ClipError::UnknownCow(missing));
    }

    let per_cue: Vec<Result<(Vec<ClipSpec>, Vec<DroppedWindow>), ClipError>> = cues
        .par_iter()
        .enumerate()
        .map(|(ci, cue)| {
            let track = by_cow[&cue.cow_id];
            let mut clips = Vec::new();
            let mut dropped = Vec::new();
            let interval = TimeInterval::new(cue.start, cue.end)?;
            let windows = tile_windows(interval, params.window_ms, params.stride_ms)?;
            if windows.is_empty() {
                dropped.push(DroppedWindow {
                    cue_index: ci,
                    cow_id: cue.cow_id,
                    start: cue.start,
                    end: cue.end,
                    reason: DropReason::ShorterThanWindow,
                });
            }
            for w in windows {
                match window_geometry(track, w, params)? {
                    Some(window) => clips.push(ClipSpec {
                        clip_id: clip_id(video_ref, cue.cow_id, &cue.action, w.start),
                        video_ref: video_ref.to_string(),
                        cow_id: cue.cow_id,
                        label: cue.action.clone(),
                        out_size: params.out_size,
                        frame_w: params.frame_w,
                        frame_h: params.frame_h,
                        window,
                    }),
                    None => dropped.push(DroppedWindow {
                        cue_index: ci,
                        cow_id: cue.cow_id,
                        start: w.start,
                        end: w.end,
                        reason: DropReason::OutsideTrack,
                    }),
                }
            }
            Ok((clips, dropped))
        })
        .collect();

    let mut plan = ClipPlan::default();
    for r in per_cue {
        let (clips, dropped) = r?;
        plan.clips.extend(clips);
        plan.dropped.extend(dropped);
    }
    Ok(plan)
}
