use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use herdpipe::dataset::coco::{export_coco, export_keyframes, uniform_frames};
use herdpipe::dataset::kinetics::{write_plan, PlanRecord};
use herdpipe::eval::records::{read_detections, write_action_scores, write_clip_labels, write_detections};
use herdpipe::extract::CommandTemplate;
use herdpipe::pipeline::{
    build_tracklets, events_to_vtt, plan_windows, score_windows, with_clip_paths, write_events, ActionScorer, PipelineParams,
    ScoreFileScorer,
};
use herdpipe::synth::{generate, SceneSpec};
use herdpipe::timesync::ClockMap;
use herdpipe::vtt::{active_cues, serialize_vtt};
use herdpipe::{Timecode, Track};
use serde::Serialize;

use crate::commands::annot::{read_cues, read_keyframes};
use crate::commands::sync::read_clock;
use crate::config::Config;
use crate::util::{invalid, io_failure, read_text, to_json, write_text, CmdResult, FrameSize, OrFail};

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Detections, JSON Lines `{"frame","bbox":[x,y,w,h],"category","score"}`; category is the cow id
    #[arg(long)]
    pub detections: PathBuf,
    /// Video reference used in window ids
    #[arg(long)]
    pub video: String,
    #[arg(long, value_name = "WxH", default_value = "1920x1080")]
    pub frame_size: FrameSize,
    /// Clock map of this camera (output of sync-fit); identity if omitted
    #[arg(long)]
    pub clock: Option<PathBuf>,
    /// Precomputed window scores, JSON Lines (instead of a scorer command)
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Directory of extracted window clips named `<clip_id>.<ext>`, passed to the scorer
    #[arg(long)]
    pub clips_dir: Option<PathBuf>,
    #[arg(long, default_value = "mp4")]
    pub clip_extension: String,
    /// Only write the window requests (JSON Lines) and stop
    #[arg(long, value_name = "PATH")]
    pub requests_only: Option<PathBuf>,
    /// Events, JSON Lines (stdout if omitted)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Also render events as WebVTT subtitles
    #[arg(long, value_name = "PATH")]
    pub vtt: Option<PathBuf>,
    /// Per-window labels, JSON Lines
    #[arg(long, value_name = "PATH")]
    pub windows: Option<PathBuf>,
    /// Scorer failures, JSON
    #[arg(long, value_name = "PATH")]
    pub failures: Option<PathBuf>,
}

pub fn pipeline(a: PipelineArgs, config: &Config) -> CmdResult {
    let detections = read_detections(&read_text(&a.detections)?).or_invalid(a.detections.display())?;
    let clock = match &a.clock {
        Some(path) => read_clock(path)?,
        None => ClockMap::identity(config.frame_rate().or_invalid("config")?),
    };
    let labels = config.label_set().or_invalid("config")?;
    let params = PipelineParams {
        video_ref: a.video.clone(),
        window_ms: config.window_ms,
        stride_ms: config.stride_ms,
        gap_tolerance_ms: config.gap_tolerance_ms,
        min_duration_ms: config.min_event_ms,
        out_size: config.out_size,
        frame_w: a.frame_size.width,
        frame_h: a.frame_size.height,
        require_normalized: false,
        retries: config.scorer_retries,
        workers: config.workers,
    };
    let tracklets = build_tracklets(&detections, clock.frame_rate, params.gap_tolerance_ms);
    let mut requests = plan_windows(&tracklets, clock.frame_rate, &params).or_invalid("planning windows")?;
    if let Some(dir) = &a.clips_dir {
        with_clip_paths(&mut requests, dir, &a.clip_extension);
    }
    if let Some(path) = &a.requests_only {
        let text: String = requests.iter().map(|r| serde_json::to_string(r).expect("request serializes") + "\n").collect();
        eprintln!("{} tracklets, {} windows", tracklets.len(), requests.len());
        return write_text(Some(path), &text);
    }

    let file_scorer;
    let command_scorer;
    let scorer: &dyn ActionScorer = match &a.scores {
        Some(path) => {
            file_scorer = ScoreFileScorer::parse(&read_text(path)?).or_invalid(path.display())?;
            &file_scorer
        }
        None => {
            command_scorer = config
                .scorer()
                .or_invalid("config")?
                .ok_or_else(|| invalid("no scorer: pass --scores or configure a scorer command"))?;
            &command_scorer
        }
    };
    let (events, windows, failures) = score_windows(&requests, scorer, &labels, &clock, &params).or_io("scoring")?;
    eprintln!(
        "{} tracklets, {} windows scored, {} failed, {} events",
        tracklets.len(),
        windows.len(),
        failures.len(),
        events.len()
    );
    write_text(a.out.as_deref(), &write_events(&events))?;
    if let Some(path) = &a.vtt {
        write_text(Some(path), &events_to_vtt(&events))?;
    }
    if let Some(path) = &a.windows {
        let text: String = windows.iter().map(|w| serde_json::to_string(w).expect("window serializes") + "\n").collect();
        write_text(Some(path), &text)?;
    }
    if let Some(path) = &a.failures {
        write_text(Some(path), &to_json(&failures))?;
    }
    if !requests.is_empty() && windows.is_empty() {
        return Err(io_failure(format!("all {} windows failed to score", requests.len())));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec (JSON or TOML); flags below override it
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_cows: Option<u32>,
    #[arg(long)]
    pub duration_s: Option<u64>,
    #[arg(long, value_name = "WxH")]
    pub frame_size: Option<FrameSize>,
    /// Box noise standard deviation, px
    #[arg(long)]
    pub jitter_px: Option<f64>,
    /// Probability of missing a detection
    #[arg(long)]
    pub drop_rate: Option<f64>,
    /// Softening of the one-hot action scores
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub mean_event_s: Option<f64>,
    /// Scene fixture JSON (stdout if omitted)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Also write the scene as tool inputs into this directory
    #[arg(long, value_name = "DIR")]
    pub emit: Option<PathBuf>,
}

pub fn synth(a: SynthArgs, config: &Config) -> CmdResult {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = read_text(path)?;
            if path.extension().is_some_and(|e| e == "toml") {
                toml::from_str(&text).or_invalid(path.display())?
            } else {
                serde_json::from_str(&text).or_invalid(path.display())?
            }
        }
        None => SceneSpec {
            frame_rate: config.frame_rate().or_invalid("config")?,
            window_ms: config.window_ms,
            stride_ms: config.clip_stride_ms(),
            ..Default::default()
        },
    };
    macro_rules! set {
        ($($arg:ident => $field:ident),*) => { $( if let Some(v) = a.$arg { spec.$field = v; } )* };
    }
    set!(seed => seed, n_cows => n_cows, duration_s => duration_s, jitter_px => box_jitter_px);
    set!(drop_rate => drop_rate, temperature => score_temperature, mean_event_s => mean_event_s);
    if let Some(s) = a.frame_size {
        spec.frame_w = s.width;
        spec.frame_h = s.height;
    }
    let scene = generate(&spec).or_invalid("scene")?;
    eprintln!(
        "scene seed {}: {} cows, {} cues, {} detections, {} scored clips",
        spec.seed,
        scene.tracks.len(),
        scene.cues.len(),
        scene.detections.len(),
        scene.scores.len()
    );
    write_text(a.out.as_deref(), &scene.to_json())?;

    if let Some(dir) = &a.emit {
        let frames = spec.frame_count();
        let keyframe_set: std::collections::BTreeSet<u64> =
            scene.tracks.iter().flat_map(|t| t.keyframes().iter().map(|k| k.0)).collect();
        let (keyframes, _) = export_keyframes(&scene.tracks, &uniform_frames(keyframe_set, spec.frame_w, spec.frame_h)).or_invalid("coco")?;
        let (dense, _) = export_coco(&scene.tracks, &uniform_frames(0..frames, spec.frame_w, spec.frame_h)).or_invalid("coco")?;
        let plan = scene.clip_plan().or_invalid("clip plan")?;
        let clip_labels = write_clip_labels(plan.clips.iter().map(|c| (c.clip_id.as_str(), c.label.as_str())));
        let records: Vec<PlanRecord> = plan.clips.into_iter().map(|clip| PlanRecord { clip, split: None }).collect();
        write_text(Some(&dir.join("cues.vtt")), &serialize_vtt(&scene.cues))?;
        write_text(Some(&dir.join("keyframes.json")), &keyframes.to_json())?;
        write_text(Some(&dir.join("gt_coco.json")), &dense.to_json())?;
        write_text(Some(&dir.join("detections.jsonl")), &write_detections(&scene.detections))?;
        write_text(Some(&dir.join("scores.jsonl")), &write_action_scores(&scene.scores))?;
        write_text(Some(&dir.join("clip_labels.csv")), &clip_labels)?;
        write_text(Some(&dir.join("plan.jsonl")), &write_plan(&records))?;
    }
    Ok(())
}

/// Placeholders available to overlay templates.
pub const OVERLAY_PLACEHOLDERS: &[&str] = &["input", "output", "frame", "time_s", "filter"];

#[derive(Debug, Args)]
pub struct OverlayArgs {
    /// Source video
    #[arg(long)]
    pub video: PathBuf,
    /// COCO keyframe annotations
    #[arg(long)]
    pub keyframes: PathBuf,
    /// Behaviour cues shown next to each cow id
    #[arg(long)]
    pub vtt: Option<PathBuf>,
    /// Frames to render, comma separated
    #[arg(long, value_delimiter = ',', required_unless_present = "every")]
    pub frames: Option<Vec<u64>>,
    /// Render every Nth frame of the annotated span instead
    #[arg(long, value_name = "N")]
    pub every: Option<u64>,
    /// Output directory for `frame_NNNNNN.png`
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Print the render plan as JSON Lines without running anything
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Serialize)]
struct OverlayJob {
    frame: u64,
    time_s: String,
    output: PathBuf,
    filter: String,
}

fn overlay_filter(tracks: &[Track], cues: &[herdpipe::BehaviourCue], frame: u64, t: Timecode) -> String {
    let active = active_cues(cues, t);
    let mut parts = Vec::new();
    for track in tracks {
        let Ok(b) = track.interpolate(frame) else { continue };
        let behaviour: Vec<&str> =
            active.iter().filter(|c| c.cow_id == track.cow_id).map(|c| c.action.as_str()).collect();
        let text = match behaviour.is_empty() {
            true => format!("Cow {}", track.cow_id),
            false => format!("Cow {} {}", track.cow_id, behaviour.join("/")),
        };
        parts.push(format!("drawbox=x={:.1}:y={:.1}:w={:.1}:h={:.1}:color=yellow:t=3", b.x, b.y, b.w, b.h));
        parts.push(format!(
            "drawtext=text='{text}':x={:.1}:y={:.1}:fontsize=28:fontcolor=yellow:box=1:boxcolor=black@0.6",
            b.x,
            (b.y - 34.0).max(0.0)
        ));
    }
    if parts.is_empty() {
        "null".to_string()
    } else {
        parts.join(",")
    }
}

pub fn overlays(a: OverlayArgs, config: &Config) -> CmdResult {
    let (tracks, _) = read_keyframes(&a.keyframes)?;
    let cues = match &a.vtt {
        Some(path) => read_cues(path, config)?.cues,
        None => Vec::new(),
    };
    let frame_rate = config.frame_rate().or_invalid("config")?;
    let frames: Vec<u64> = match (&a.frames, a.every) {
        (Some(f), _) => f.clone(),
        (None, Some(0)) => return Err(invalid("--every must be positive")),
        (None, Some(n)) => {
            let first = tracks.iter().map(Track::first_frame).min().unwrap_or(0);
            let last = tracks.iter().map(Track::last_frame).max().unwrap_or(0);
            (first..=last).step_by(n as usize).collect()
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    let jobs: Vec<OverlayJob> = frames
        .iter()
        .map(|&frame| {
            let ms = frame_rate.frame_to_ms(frame);
            OverlayJob {
                frame,
                time_s: format!("{:.6}", ms / 1000.0),
                output: a.out_dir.join(format!("frame_{frame:06}.png")),
                filter: overlay_filter(&tracks, &cues, frame, Timecode(ms.floor() as u64)),
            }
        })
        .collect();
    if a.dry_run {
        let text: String = jobs.iter().map(|j| serde_json::to_string(j).expect("job serializes") + "\n").collect();
        return write_text(None, &text);
    }
    std::fs::create_dir_all(&a.out_dir).or_io(a.out_dir.display())?;
    let template = CommandTemplate::parse(&config.overlay).or_invalid("overlay")?;
    let timeout = config.extractor_timeout_s.map(Duration::from_secs_f64);
    let mut failed = BTreeMap::new();
    for job in &jobs {
        let mut values = BTreeMap::new();
        values.insert("input", a.video.display().to_string());
        values.insert("output", job.output.display().to_string());
        values.insert("frame", job.frame.to_string());
        values.insert("time_s", job.time_s.clone());
        values.insert("filter", job.filter.clone());
        let outcome = template.run(&values, None, timeout).map_err(|e| e.to_string()).and_then(|_| {
            if job.output.exists() {
                Ok(())
            } else {
                Err("command did not create the output".to_string())
            }
        });
        if let Err(e) = outcome {
            log::warn!("frame {}: {e}", job.frame);
            failed.insert(job.frame, e);
        }
    }
    eprintln!("{} of {} frames rendered to {}", jobs.len() - failed.len(), jobs.len(), a.out_dir.display());
    if failed.is_empty() {
        Ok(())
    } else {
        let (frame, e) = failed.iter().next().expect("non-empty");
        Err(io_failure(format!("{} frames failed, first at frame {frame}: {e}", failed.len())))
    }
}
