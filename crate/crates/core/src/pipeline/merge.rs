//! Turning per-window labels into a non-overlapping event timeline.

use serde::{Deserialize, Serialize};

use crate::label::{ActionLabel, CowId};
use crate::vtt::{BehaviourCue, Timecode};

/// Argmax label of one scored window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub clip_id: String,
    pub cow_id: CowId,
    pub start: Timecode,
    pub end: Timecode,
    pub label: ActionLabel,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviourEvent {
    pub cow_id: CowId,
    pub label: ActionLabel,
    pub start: Timecode,
    pub end: Timecode,
    /// Mean argmax score of the merged windows.
    pub confidence: f64,
    /// Wall-clock start and end (ms since the Unix epoch), when a clock is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_start_ms: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_end_ms: Option<i64>,
}

impl BehaviourEvent {
    pub fn duration_ms(&self) -> u64 {
        self.end.0 - self.start.0
    }

    pub fn to_cue(&self) -> BehaviourCue {
        BehaviourCue { cow_id: self.cow_id, action: self.label.clone(), start: self.start, end: self.end }
    }
}

/// Merge window labels into events.
///
/// Per cow, windows are taken in start order. Runs of the same label whose
/// windows touch or overlap become one event spanning the run, with the mean
/// confidence. Where consecutive events of one cow overlap, both are cut at
/// the midpoint of the overlap. Events shorter than `min_duration_ms` are then
/// dropped.
pub fn merge_events(windows: &[WindowResult], min_duration_ms: u64) -> Vec<BehaviourEvent> {
    let mut sorted: Vec<&WindowResult> = windows.iter().collect();
    sorted.sort_by(|a, b| a.cow_id.cmp(&b.cow_id).then(a.start.cmp(&b.start)).then(a.end.cmp(&b.end)));

    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let cow = sorted[i].cow_id;
        let mut j = i;
        while j < sorted.len() && sorted[j].cow_id == cow {
            j += 1;
        }
        out.extend(merge_one_cow(&sorted[i..j], min_duration_ms));
        i = j;
    }
    out
}

fn merge_one_cow(windows: &[&WindowResult], min_duration_ms: u64) -> Vec<BehaviourEvent> {
    // (event, confidence sum, window count)
    let mut runs: Vec<(BehaviourEvent, f64, usize)> = Vec::new();
    for w in windows {
        if let Some((ev, sum, n)) = runs.last_mut() {
            if ev.label == w.label && w.start <= ev.end {
                ev.end = ev.end.max(w.end);
                *sum += w.confidence;
                *n += 1;
                continue;
            }
        }
        let ev = BehaviourEvent {
            cow_id: w.cow_id,
            label: w.label.clone(),
            start: w.start,
            end: w.end,
            confidence: 0.0,
            wall_start_ms: None,
            wall_end_ms: None,
        };
        runs.push((ev, w.confidence, 1));
    }
    let mut events: Vec<BehaviourEvent> = runs
        .into_iter()
        .map(|(mut ev, sum, n)| {
            ev.confidence = sum / n as f64;
            ev
        })
        .collect();

    for k in 1..events.len() {
        let (prev_end, next_start) = (events[k - 1].end, events[k].start);
        if prev_end > next_start {
            let cut = Timecode(next_start.0 + (prev_end.0 - next_start.0) / 2);
            events[k - 1].end = cut;
            events[k].start = cut;
        }
    }
    events.retain(|e| e.end > e.start && e.duration_ms() >= min_duration_ms);
    events
}
