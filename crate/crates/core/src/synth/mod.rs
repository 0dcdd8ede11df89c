//! Synthetic scenes with known ground truth: tracks, behaviour cues, noisy
//! detections and tempered action scores, all derived from one seed.
//!
//! Each output draws from its own ChaCha8 stream (`seed`, stream 0..=3), so
//! changing noise settings leaves tracks and cues untouched.

pub mod oracle;

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clipgeom::{plan_clips, ClipError, ClipPlan, ClipPlanParams, DEFAULT_OUT_SIZE};
use crate::dataset::split::PRNG_NAME;
use crate::eval::detection::{Detection, GroundTruth};
use crate::eval::records::ActionScore;
use crate::label::{ActionLabel, CowId, LabelSet};
use crate::pipeline::{ScoreError, ScoreRequest};
use crate::timesync::{FrameIndex, FrameRate};
use crate::tracks::{BBox, Track};
use crate::vtt::{BehaviourCue, Timecode};

pub use oracle::{oracle_accuracy, oracle_metrics, random_instance, OracleError, OracleMetrics};

pub const SCENE_FORMAT: &str = "herdpipe-scene/1";

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("infeasible scene: {0}")]
    Infeasible(String),
    #[error("scene fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Clip(#[from] ClipError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_cows: u32,
    pub frame_w: u32,
    pub frame_h: u32,
    pub duration_s: u64,
    pub frame_rate: FrameRate,
    /// Mean of the exponential event-length distribution, seconds.
    pub mean_event_s: f64,
    pub min_event_s: u64,
    /// Relative frequency of each behaviour label.
    pub label_weights: BTreeMap<String, f64>,
    /// Smallest and largest box side, px.
    pub box_size: [f64; 2],
    /// Frames between track keyframes.
    pub keyframe_stride: u64,
    /// Standard deviation of the Gaussian noise on detection x, y, w, h.
    pub box_jitter_px: f64,
    pub drop_rate: f64,
    /// 0 gives one-hot scores.
    pub score_temperature: f64,
    pub window_ms: u64,
    pub stride_ms: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            n_cows: 3,
            frame_w: 1920,
            frame_h: 1080,
            duration_s: 120,
            frame_rate: FrameRate::FPS_30,
            mean_event_s: 10.0,
            min_event_s: 2,
            label_weights: LabelSet::default().labels().iter().map(|l| (l.to_string(), 1.0)).collect(),
            box_size: [120.0, 320.0],
            keyframe_stride: 30,
            box_jitter_px: 0.0,
            drop_rate: 0.0,
            score_temperature: 0.0,
            window_ms: 1000,
            stride_ms: 500,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.n_cows == 0 || self.frame_w == 0 || self.frame_h == 0 || self.duration_s == 0 {
            return invalid("cow count, frame size and duration must be positive");
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return invalid("drop_rate must lie in [0, 1]");
        }
        if !(self.box_jitter_px >= 0.0 && self.box_jitter_px.is_finite()) {
            return invalid("box_jitter_px must be finite and non-negative");
        }
        if !(self.score_temperature >= 0.0 && self.score_temperature.is_finite()) {
            return invalid("score_temperature must be finite and non-negative");
        }
        if !(self.mean_event_s > 0.0 && self.mean_event_s.is_finite()) || self.min_event_s == 0 {
            return invalid("event lengths must be positive");
        }
        if self.keyframe_stride == 0 || self.window_ms == 0 || self.stride_ms == 0 {
            return invalid("keyframe stride, window and stride must be positive");
        }
        let [lo, hi] = self.box_size;
        if !(lo >= 1.0 && lo <= hi && hi.is_finite()) {
            return invalid("box_size must be [min, max] with 1 <= min <= max");
        }
        let known = LabelSet::default();
        if self.label_weights.keys().any(|k| known.index_of(k).is_none()) {
            return invalid("label_weights names a label outside Drinking/Grazing/Other");
        }
        if self.label_weights.values().any(|w| !(*w >= 0.0 && w.is_finite())) || self.label_weights.values().sum::<f64>() <= 0.0 {
            return invalid("label weights must be non-negative with a positive sum");
        }
        if hi > self.frame_w.min(self.frame_h) as f64 {
            return Err(SynthError::Infeasible(format!("boxes up to {hi} px do not fit a {}x{} frame", self.frame_w, self.frame_h)));
        }
        if self.n_cows as f64 * lo * lo > self.frame_w as f64 * self.frame_h as f64 {
            return Err(SynthError::Infeasible(format!("{} cows of at least {lo} px cannot fit the frame", self.n_cows)));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_rate.frames_in(self.duration_s * 1000)
    }

    pub fn video_ref(&self) -> String {
        format!("synth_{}.mp4", self.seed)
    }

    pub fn clip_params(&self) -> ClipPlanParams {
        ClipPlanParams {
            frame_rate: self.frame_rate,
            window_ms: self.window_ms,
            stride_ms: self.stride_ms,
            out_size: DEFAULT_OUT_SIZE,
            frame_w: self.frame_w,
            frame_h: self.frame_h,
        }
    }
}

/// A generated scene; also the on-disk fixture format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub format: String,
    pub prng: String,
    pub spec: SceneSpec,
    pub tracks: Vec<Track>,
    pub cues: Vec<BehaviourCue>,
    pub detections: Vec<Detection>,
    pub scores: Vec<ActionScore>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gen_tracks(spec: &SceneSpec) -> Vec<Track> {
    let mut rng = stream(spec.seed, 0);
    let last = spec.frame_count().saturating_sub(1);
    let mut frames: Vec<FrameIndex> = (0..=last).step_by(spec.keyframe_stride as usize).collect();
    if frames.last() != Some(&last) {
        frames.push(last);
    }
    let [lo, hi] = spec.box_size;
    let (fw, fh) = (spec.frame_w as f64, spec.frame_h as f64);
    (1..=spec.n_cows)
        .map(|cow| {
            let base_w = rng.random_range(lo..=hi);
            let base_h = rng.random_range(lo..=hi);
            let keyframes = frames
                .iter()
                .map(|&f| {
                    let w = (base_w * rng.random_range(0.9..=1.1)).round().clamp(lo, hi);
                    let h = (base_h * rng.random_range(0.9..=1.1)).round().clamp(lo, hi);
                    let x = rng.random_range(0.0..=fw - w).round();
                    let y = rng.random_range(0.0..=fh - h).round();
                    (f, BBox { x, y, w, h })
                })
                .collect();
            Track::new(CowId(cow), keyframes).expect("generated keyframes are valid")
        })
        .collect()
}

fn gen_cues(spec: &SceneSpec) -> Vec<BehaviourCue> {
    let mut rng = stream(spec.seed, 1);
    let labels: Vec<(&String, f64)> = spec.label_weights.iter().map(|(l, w)| (l, *w)).collect();
    let lengths = Exp::new(1.0 / spec.mean_event_s).expect("positive mean");
    let total = spec.duration_s;
    let mut cues = Vec::new();
    for cow in 1..=spec.n_cows {
        let mut segments: Vec<(usize, u64, u64)> = Vec::new();
        let mut t = 0;
        while t < total {
            let len = (lengths.sample(&mut rng).round() as u64).max(spec.min_event_s);
            let end = (t + len).min(total);
            let prev = segments.last().map(|s| s.0);
            let weights: Vec<f64> = labels.iter().enumerate().map(|(i, (_, w))| if Some(i) == prev { 0.0 } else { *w }).collect();
            let short_tail = end - t < spec.min_event_s;
            match (WeightedIndex::new(&weights), segments.last_mut()) {
                (_, Some(last)) if short_tail => last.2 = end,
                (Ok(dist), _) => segments.push((dist.sample(&mut rng), t, end)),
                (Err(_), Some(last)) => last.2 = end,
                (Err(_), None) => unreachable!("validated weights have a positive sum"),
            }
            t = end;
        }
        cues.extend(segments.into_iter().map(|(label, s, e)| BehaviourCue {
            cow_id: CowId(cow),
            action: ActionLabel::new(labels[label].0.as_str()),
            start: Timecode::from_secs(s),
            end: Timecode::from_secs(e),
        }));
    }
    cues.sort_by(|a, b| a.start.cmp(&b.start).then(a.cow_id.cmp(&b.cow_id)));
    cues
}

fn gen_detections(spec: &SceneSpec, tracks: &[Track]) -> Vec<Detection> {
    let mut rng = stream(spec.seed, 2);
    let noise = (spec.box_jitter_px > 0.0).then(|| Normal::new(0.0, spec.box_jitter_px).expect("finite sigma"));
    let (fw, fh) = (spec.frame_w as f64, spec.frame_h as f64);
    let mut out = Vec::new();
    for frame in 0..spec.frame_count() {
        for t in tracks {
            let dropped = rng.random::<f64>() < spec.drop_rate;
            let score = 0.5 + 0.5 * rng.random::<f64>();
            let mut b = t.interpolate(frame).expect("tracks cover every frame");
            if let Some(n) = &noise {
                b.x += n.sample(&mut rng);
                b.y += n.sample(&mut rng);
                b.w = (b.w + n.sample(&mut rng)).max(1.0);
                b.h = (b.h + n.sample(&mut rng)).max(1.0);
            }
            if dropped {
                continue;
            }
            if let Some(b) = b.clamp_to(fw, fh) {
                out.push(Detection { frame, bbox: b, category: t.cow_id, score });
            }
        }
    }
    out
}

/// One-hot scores softened by a temperature: softmax(onehot / T).
pub fn tempered_scores(labels: &LabelSet, truth: &str, temperature: f64) -> BTreeMap<String, f64> {
    let hot = |l: &ActionLabel| if l.as_str() == truth { 1.0 } else { 0.0 };
    if temperature == 0.0 {
        return labels.labels().iter().map(|l| (l.to_string(), hot(l))).collect();
    }
    // shifted by the max logit (1/T) so large inverse temperatures stay finite
    let exps: Vec<f64> = labels.labels().iter().map(|l| ((hot(l) - 1.0) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    labels.labels().iter().zip(exps).map(|(l, e)| (l.to_string(), e / sum)).collect()
}

/// Generate a scene. Identical specs give bit-identical scenes.
pub fn generate(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let tracks = gen_tracks(spec);
    let cues = gen_cues(spec);
    let detections = gen_detections(spec, &tracks);
    let plan = plan_clips(&spec.video_ref(), &tracks, &cues, &spec.clip_params())?;
    let labels = LabelSet::default();
    let scores = plan
        .clips
        .iter()
        .map(|c| ActionScore { clip_id: c.clip_id.clone(), scores: tempered_scores(&labels, c.label.as_str(), spec.score_temperature) })
        .collect();
    Ok(Scene {
        format: SCENE_FORMAT.to_string(),
        prng: PRNG_NAME.to_string(),
        spec: spec.clone(),
        tracks,
        cues,
        detections,
        scores,
    })
}

impl Scene {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let scene: Scene = serde_json::from_str(text).map_err(|e| SynthError::Fixture(e.to_string()))?;
        if scene.format != SCENE_FORMAT {
            return Err(SynthError::Fixture(format!("unknown format {:?}", scene.format)));
        }
        if scene.prng != PRNG_NAME {
            return Err(SynthError::Fixture(format!("unsupported PRNG {:?}", scene.prng)));
        }
        Ok(scene)
    }

    /// Dense ground-truth boxes, every cow on every frame.
    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        let mut out = Vec::new();
        for frame in 0..self.spec.frame_count() {
            for t in &self.tracks {
                if let Ok(bbox) = t.interpolate(frame) {
                    out.push(GroundTruth { frame, bbox, category: t.cow_id });
                }
            }
        }
        out
    }

    pub fn clip_plan(&self) -> Result<ClipPlan, SynthError> {
        Ok(plan_clips(&self.spec.video_ref(), &self.tracks, &self.cues, &self.spec.clip_params())?)
    }

    /// Label of `cow`'s cue at time `t`.
    pub fn label_at(&self, cow: CowId, t: Timecode) -> Option<&ActionLabel> {
        self.cues.iter().find(|c| c.cow_id == cow && c.contains(t)).map(|c| &c.action)
    }

    /// Scorer that answers with the tempered ground-truth label at the
    /// window midpoint.
    pub fn oracle_scorer(&self) -> impl Fn(&ScoreRequest) -> Result<ActionScore, ScoreError> + Sync + '_ {
        let labels = LabelSet::default();
        move |req: &ScoreRequest| {
            let mid = Timecode((req.window.start.0 + req.window.end.0) / 2);
            let truth = self
                .label_at(req.cow_id, mid)
                .ok_or_else(|| ScoreError::Other(format!("no cue for cow {} at {mid}", req.cow_id)))?;
            Ok(ActionScore {
                clip_id: req.clip_id.clone(),
                scores: tempered_scores(&labels, truth.as_str(), self.spec.score_temperature),
            })
        }
    }
}
