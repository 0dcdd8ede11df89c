//! Detections to behaviour timeline: per-cow tracklets, 1 s crop windows, an
//! external action scorer, and merged events.

pub mod merge;
pub mod scorer;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clipgeom::{tile_windows, video_stem, window_geometry, ClipError, ClipPlanParams, TimeInterval, DEFAULT_OUT_SIZE};
use crate::eval::detection::Detection;
use crate::eval::records::ActionScore;
use crate::label::{CowId, LabelSet};
use crate::timesync::{ClockMap, FrameIndex, FrameRate};
use crate::tracks::{BBox, Track};
use crate::vtt::{serialize_vtt, BehaviourCue, Timecode};

pub use merge::{merge_events, BehaviourEvent, WindowResult};
pub use scorer::{ActionScorer, CommandScorer, ScoreError, ScoreFileScorer, ScoreRequest};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("line {line}: {reason}")]
    Events { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub video_ref: String,
    pub window_ms: u64,
    pub stride_ms: u64,
    /// Longest detection gap bridged inside one tracklet.
    pub gap_tolerance_ms: u64,
    /// Events shorter than this are dropped after merging.
    pub min_duration_ms: u64,
    pub out_size: u32,
    pub frame_w: u32,
    pub frame_h: u32,
    /// Scorer responses must sum to 1.
    pub require_normalized: bool,
    /// Extra attempts per window after a scorer failure.
    pub retries: u32,
    /// 0 means one worker per core.
    pub workers: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            video_ref: "video.mp4".into(),
            window_ms: 1000,
            stride_ms: 500,
            gap_tolerance_ms: 500,
            min_duration_ms: 0,
            out_size: DEFAULT_OUT_SIZE,
            frame_w: 1920,
            frame_h: 1080,
            require_normalized: false,
            retries: 0,
            workers: 0,
        }
    }
}

/// A run of one cow's detections with no gap longer than the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tracklet {
    pub track: Track,
    /// `[first frame start, last frame end)` in stream time.
    pub start: Timecode,
    pub end: Timecode,
}

/// Group detections into per-cow tracklets.
///
/// Where a cow has several boxes on one frame the highest score wins (first
/// in input order on ties). Detected frames become keyframes, so gaps are
/// bridged by interpolation.
pub fn build_tracklets(detections: &[Detection], frame_rate: FrameRate, gap_tolerance_ms: u64) -> Vec<Tracklet> {
    let mut best: BTreeMap<(CowId, FrameIndex), &Detection> = BTreeMap::new();
    for d in detections {
        best.entry((d.category, d.frame))
            .and_modify(|cur| {
                if d.score > cur.score {
                    *cur = d;
                }
            })
            .or_insert(d);
    }
    let FrameRate { num, den } = frame_rate;
    let (num, den) = (num as u128, den as u128);
    // frame boundaries in whole ms: start rounds up, end rounds down, so the
    // nearest frame to each stays inside the tracklet
    let frame_start = |f: FrameIndex| Timecode(((f as u128 * 1000 * den).div_ceil(num)) as u64);
    let frame_end = |f: FrameIndex| Timecode(((f as u128 + 1) * 1000 * den / num) as u64);
    let max_gap_frames = gap_tolerance_ms as u128 * num / (1000 * den);

    let mut out = Vec::new();
    let mut current: Vec<(FrameIndex, BBox)> = Vec::new();
    let mut current_cow: Option<CowId> = None;
    let mut flush = |cow: Option<CowId>, kf: &mut Vec<(FrameIndex, BBox)>| {
        if let (Some(cow), false) = (cow, kf.is_empty()) {
            let (first, last) = (kf[0].0, kf[kf.len() - 1].0);
            let track = Track::new(cow, std::mem::take(kf)).expect("frames strictly increase");
            out.push(Tracklet { track, start: frame_start(first), end: frame_end(last) });
        }
    };
    for (&(cow, frame), d) in &best {
        let split = match (current_cow, current.last()) {
            (Some(c), Some(&(prev, _))) => c != cow || (frame - prev - 1) as u128 > max_gap_frames,
            _ => true,
        };
        if split {
            flush(current_cow, &mut current);
            current_cow = Some(cow);
        }
        current.push((frame, d.bbox));
    }
    flush(current_cow, &mut current);
    out
}

/// Window requests for every tracklet, in tracklet then time order.
pub fn plan_windows(tracklets: &[Tracklet], frame_rate: FrameRate, params: &PipelineParams) -> Result<Vec<ScoreRequest>, ClipError> {
    let clip_params = ClipPlanParams {
        frame_rate,
        window_ms: params.window_ms,
        stride_ms: params.stride_ms,
        out_size: params.out_size,
        frame_w: params.frame_w,
        frame_h: params.frame_h,
    };
    let stem = video_stem(&params.video_ref);
    let mut out = Vec::new();
    for t in tracklets {
        if t.end <= t.start {
            continue;
        }
        for w in tile_windows(TimeInterval::new(t.start, t.end)?, params.window_ms, params.stride_ms)? {
            if let Some(window) = window_geometry(&t.track, w, &clip_params)? {
                out.push(ScoreRequest {
                    clip_id: format!("{stem}_cow{}_{:09}", t.track.cow_id, w.start.0),
                    video_ref: params.video_ref.clone(),
                    cow_id: t.track.cow_id,
                    out_size: params.out_size,
                    frame_w: params.frame_w,
                    frame_h: params.frame_h,
                    clip_path: None,
                    window,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowFailure {
    pub clip_id: String,
    pub cow_id: CowId,
    pub start: Timecode,
    pub end: Timecode,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub events: Vec<BehaviourEvent>,
    pub windows: Vec<WindowResult>,
    pub failures: Vec<WindowFailure>,
    pub tracklets: usize,
}

fn score_window(
    scorer: &dyn ActionScorer,
    req: &ScoreRequest,
    labels: &LabelSet,
    params: &PipelineParams,
) -> Result<WindowResult, WindowFailure> {
    let mut last_err = String::new();
    for attempt in 1..=params.retries + 1 {
        let result = scorer.score(req).and_then(|s: ActionScore| {
            if s.clip_id != req.clip_id {
                return Err(ScoreError::WrongClip { expected: req.clip_id.clone(), found: s.clip_id });
            }
            s.validate(labels, params.require_normalized)?;
            let (label, confidence) = s.best(labels);
            if !(0.0..=1.0).contains(&confidence) {
                return Err(ScoreError::Other(format!("confidence {confidence} outside [0, 1]")));
            }
            Ok((label, confidence))
        });
        match result {
            Ok((label, confidence)) => {
                return Ok(WindowResult {
                    clip_id: req.clip_id.clone(),
                    cow_id: req.cow_id,
                    start: req.window.start,
                    end: req.window.end,
                    label,
                    confidence,
                })
            }
            Err(e) => {
                log::warn!("scoring {} failed (attempt {attempt}): {e}", req.clip_id);
                last_err = e.to_string();
            }
        }
    }
    Err(WindowFailure {
        clip_id: req.clip_id.clone(),
        cow_id: req.cow_id,
        start: req.window.start,
        end: req.window.end,
        attempts: params.retries + 1,
        error: last_err,
    })
}

/// Score precomputed window requests and merge the results into events.
pub fn score_windows(
    requests: &[ScoreRequest],
    scorer: &dyn ActionScorer,
    labels: &LabelSet,
    clock: &ClockMap,
    params: &PipelineParams,
) -> Result<(Vec<BehaviourEvent>, Vec<WindowResult>, Vec<WindowFailure>), PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let results: Vec<Result<WindowResult, WindowFailure>> =
        pool.install(|| requests.par_iter().map(|r| score_window(scorer, r, labels, params)).collect());
    let mut windows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(w) => windows.push(w),
            Err(f) => failures.push(f),
        }
    }
    let mut events = merge_events(&windows, params.min_duration_ms);
    for e in &mut events {
        e.wall_start_ms = Some(clock.stream_to_wall(e.start.0 as f64).round() as i64);
        e.wall_end_ms = Some(clock.stream_to_wall(e.end.0 as f64).round() as i64);
    }
    Ok((events, windows, failures))
}

/// Full run: tracklets, windows, scoring, merging.
///
/// Stream time is the video's own time axis; `clock` maps it to wall-clock
/// time for the event records. No detections gives an empty result.
pub fn run_pipeline(
    detections: &[Detection],
    clock: &ClockMap,
    scorer: &dyn ActionScorer,
    labels: &LabelSet,
    params: &PipelineParams,
) -> Result<PipelineOutput, PipelineError> {
    let tracklets = build_tracklets(detections, clock.frame_rate, params.gap_tolerance_ms);
    let requests = plan_windows(&tracklets, clock.frame_rate, params)?;
    let (events, windows, failures) = score_windows(&requests, scorer, labels, clock, params)?;
    Ok(PipelineOutput { events, windows, failures, tracklets: tracklets.len() })
}

/// Output helpers: JSON Lines and WebVTT.
pub fn write_events(events: &[BehaviourEvent]) -> String {
    events.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
}

pub fn read_events(text: &str) -> Result<Vec<BehaviourEvent>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::Events { line: i + 1, reason: e.to_string() }))
        .collect()
}

/// Subtitle rendering of events, in start order.
pub fn events_to_vtt(events: &[BehaviourEvent]) -> String {
    let mut cues: Vec<BehaviourCue> = events.iter().map(BehaviourEvent::to_cue).collect();
    cues.sort_by(|a, b| a.start.cmp(&b.start).then(a.cow_id.cmp(&b.cow_id)));
    serialize_vtt(&cues)
}

/// Attach extracted clip paths (`<dir>/<clip_id>.<ext>`) to requests.
pub fn with_clip_paths(requests: &mut [ScoreRequest], dir: &Path, extension: &str) {
    for r in requests {
        r.clip_path = Some(dir.join(format!("{}.{extension}", r.clip_id)));
    }
}
