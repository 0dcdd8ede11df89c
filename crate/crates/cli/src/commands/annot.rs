use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use herdpipe::clipgeom::{double_segment, plan_clips as plan, ClipPlanParams, TimeInterval};
use herdpipe::dataset::coco::{tracks_from_coco, CocoDocument};
use herdpipe::dataset::kinetics::{write_plan, PlanRecord};
use herdpipe::vtt::{parse_vtt, serialize_vtt, validate_cues, BehaviourCue, ParsedVtt};
use herdpipe::{CowId, Timecode, Track};
use serde::Serialize;

use crate::config::Config;
use crate::util::{invalid, read_text, to_json, write_text, CmdResult, Failure, FrameSize, FrameSpan, OrFail};

pub fn read_cues(path: &Path, config: &Config) -> Result<ParsedVtt, Failure> {
    let text = read_text(path)?;
    let labels = config.label_set().or_invalid("config")?;
    let parsed = parse_vtt(&text, &labels, config.parse_mode).or_invalid(path.display())?;
    for w in &parsed.warnings {
        log::warn!("{}:{}: {}", path.display(), w.line, w.message);
    }
    Ok(parsed)
}

/// Tracks and frame size from a COCO keyframe file.
pub fn read_keyframes(path: &Path) -> Result<(Vec<Track>, Option<FrameSize>), Failure> {
    let doc = CocoDocument::from_json(&read_text(path)?).or_invalid(path.display())?;
    let tracks = tracks_from_coco(&doc).or_invalid(path.display())?;
    let size = doc.images.first().map(|i| FrameSize { width: i.width, height: i.height });
    Ok((tracks, size))
}

#[derive(Debug, Args)]
pub struct VttCheckArgs {
    /// WebVTT annotation file
    pub vtt: PathBuf,
    /// Print the report as JSON
    #[arg(long)]
    pub json: bool,
    /// Also print doubled segments of cues with these labels (comma separated)
    #[arg(long, value_delimiter = ',', value_name = "LABELS", requires = "video_len_s")]
    pub double_segments: Option<Vec<String>>,
    /// Video length in seconds, bounds doubled segments
    #[arg(long, value_name = "S")]
    pub video_len_s: Option<f64>,
    /// Write the cues back in canonical form
    #[arg(long, value_name = "PATH")]
    pub normalize: Option<PathBuf>,
}

#[derive(Serialize)]
struct CueView<'a> {
    index: usize,
    cow_id: CowId,
    label: &'a str,
    start: String,
    end: String,
}

#[derive(Serialize)]
struct VttReport<'a> {
    cues: Vec<CueView<'a>>,
    warnings: Vec<String>,
    conflicts: Vec<(usize, usize)>,
    merge_candidates: Vec<(usize, usize)>,
    doubled: Vec<CueView<'a>>,
}

fn view(index: usize, c: &BehaviourCue, start: Timecode, end: Timecode) -> CueView<'_> {
    CueView { index, cow_id: c.cow_id, label: c.action.as_str(), start: start.to_string(), end: end.to_string() }
}

fn video_len(seconds: f64) -> Result<Timecode, Failure> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(invalid("--video-len-s must be positive"));
    }
    Ok(Timecode((seconds * 1000.0).round() as u64))
}

fn doubled(cues: &[BehaviourCue], labels: &[String], len: Timecode) -> Result<Vec<(usize, TimeInterval)>, Failure> {
    let mut out = Vec::new();
    for (i, c) in cues.iter().enumerate() {
        if !labels.iter().any(|l| l == c.action.as_str()) {
            continue;
        }
        if c.end > len {
            return Err(invalid(format!("cue {i} ends at {} after the video end {len}", c.end)));
        }
        let seg = TimeInterval::new(c.start, c.end).or_invalid(format!("cue {i}"))?;
        out.push((i, double_segment(seg, len)));
    }
    Ok(out)
}

pub fn vtt_check(a: VttCheckArgs, config: &Config) -> CmdResult {
    let parsed = read_cues(&a.vtt, config)?;
    let cues = &parsed.cues;
    let report = validate_cues(cues);
    let doubled = match (&a.double_segments, a.video_len_s) {
        (Some(labels), Some(s)) => doubled(cues, labels, video_len(s)?)?,
        _ => Vec::new(),
    };
    let out = VttReport {
        cues: cues.iter().enumerate().map(|(i, c)| view(i, c, c.start, c.end)).collect(),
        warnings: parsed.warnings.iter().map(|w| format!("line {}: {}", w.line, w.message)).collect(),
        conflicts: report.conflicts.iter().map(|p| (p.first, p.second)).collect(),
        merge_candidates: report.merge_candidates.iter().map(|p| (p.first, p.second)).collect(),
        doubled: doubled.iter().map(|(i, iv)| view(*i, &cues[*i], iv.start, iv.end)).collect(),
    };
    if a.json {
        write_text(None, &to_json(&out))?;
    } else {
        let mut text = String::new();
        for c in &out.cues {
            text.push_str(&format!("#{:<4} cow {:<3} {:<10} {} --> {}\n", c.index, c.cow_id, c.label, c.start, c.end));
        }
        text.push_str(&format!(
            "{} cues, {} conflicts, {} merge candidates, {} warnings\n",
            out.cues.len(),
            out.conflicts.len(),
            out.merge_candidates.len(),
            out.warnings.len()
        ));
        for (x, y) in &out.conflicts {
            text.push_str(&format!("conflict: cues #{x} and #{y} overlap for cow {}\n", cues[*x].cow_id));
        }
        for (x, y) in &out.merge_candidates {
            text.push_str(&format!("merge candidate: cues #{x} and #{y} abut with the same label\n"));
        }
        for d in &out.doubled {
            text.push_str(&format!("doubled #{}: {} --> {}\n", d.index, d.start, d.end));
        }
        write_text(None, &text)?;
    }
    if let Some(path) = &a.normalize {
        write_text(Some(path), &serialize_vtt(cues))?;
    }
    if report.conflicts.is_empty() {
        Ok(())
    } else {
        Err(invalid(format!("{} overlapping cue pairs", report.conflicts.len())))
    }
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    /// COCO keyframe annotations (e.g. a CVAT export)
    pub keyframes: PathBuf,
    /// Frames to emit (default: each track's keyframe span)
    #[arg(long, value_name = "FIRST..LAST")]
    pub frames: Option<FrameSpan>,
    /// Only this cow
    #[arg(long)]
    pub cow: Option<CowId>,
    /// Output JSON Lines (stdout if omitted)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DenseBox {
    cow_id: CowId,
    frame: u64,
    bbox: [f64; 4],
}

pub fn interp(a: InterpArgs, _config: &Config) -> CmdResult {
    let (tracks, _) = read_keyframes(&a.keyframes)?;
    let mut text = String::new();
    for t in tracks.iter().filter(|t| a.cow.is_none_or(|c| c == t.cow_id)) {
        let boxes = match a.frames {
            Some(span) => {
                let first = span.first.max(t.first_frame());
                let last = span.last.min(t.last_frame());
                if first > last {
                    continue;
                }
                t.densify(first..=last).or_invalid(format!("cow {}", t.cow_id))?
            }
            None => t.densify_all(),
        };
        for (frame, b) in boxes {
            let row = DenseBox { cow_id: t.cow_id, frame, bbox: b.to_xywh() };
            text.push_str(&serde_json::to_string(&row).expect("row serializes"));
            text.push('\n');
        }
    }
    write_text(a.out.as_deref(), &text)
}

#[derive(Debug, Args)]
pub struct PlanClipsArgs {
    /// WebVTT behaviour annotations
    #[arg(long)]
    pub vtt: PathBuf,
    /// COCO keyframe annotations for the same video
    #[arg(long)]
    pub keyframes: PathBuf,
    /// Source video reference recorded in the plan
    #[arg(long)]
    pub video: String,
    /// Frame size (default: from the COCO images)
    #[arg(long, value_name = "WxH")]
    pub frame_size: Option<FrameSize>,
    /// Double the cues with these labels about their centre first (comma separated)
    #[arg(long, value_delimiter = ',', value_name = "LABELS", requires = "video_len_s")]
    pub double_segments: Option<Vec<String>>,
    /// Video length in seconds, bounds doubled segments
    #[arg(long, value_name = "S")]
    pub video_len_s: Option<f64>,
    /// Output plan, JSON Lines (stdout if omitted)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Write the dropped-window report here as JSON
    #[arg(long, value_name = "PATH")]
    pub dropped: Option<PathBuf>,
}

pub fn plan_clips(a: PlanClipsArgs, config: &Config) -> CmdResult {
    let mut cues = read_cues(&a.vtt, config)?.cues;
    let (tracks, coco_size) = read_keyframes(&a.keyframes)?;
    let size = a.frame_size.or(coco_size).ok_or_else(|| invalid("no frame size: pass --frame-size"))?;
    if let (Some(labels), Some(s)) = (&a.double_segments, a.video_len_s) {
        for (i, iv) in doubled(&cues, labels, video_len(s)?)? {
            cues[i].start = iv.start;
            cues[i].end = iv.end;
        }
    }
    let params = ClipPlanParams {
        frame_rate: config.frame_rate().or_invalid("config")?,
        window_ms: config.window_ms,
        stride_ms: config.clip_stride_ms(),
        out_size: config.out_size,
        frame_w: size.width,
        frame_h: size.height,
    };
    let result = plan(&a.video, &tracks, &cues, &params).or_invalid("planning clips")?;
    let mut per_label: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &result.clips {
        *per_label.entry(c.label.as_str()).or_default() += 1;
    }
    eprintln!("{} clips {:?}, {} windows dropped", result.clips.len(), per_label, result.dropped.len());
    for d in &result.dropped {
        log::info!("dropped cue #{} cow {} [{}, {}): {:?}", d.cue_index, d.cow_id, d.start, d.end, d.reason);
    }
    let records: Vec<PlanRecord> = result.clips.into_iter().map(|clip| PlanRecord { clip, split: None }).collect();
    write_text(a.out.as_deref(), &write_plan(&records))?;
    if let Some(path) = &a.dropped {
        write_text(Some(path), &to_json(&result.dropped))?;
    }
    Ok(())
}
