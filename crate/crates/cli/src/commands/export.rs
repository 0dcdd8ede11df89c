use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use herdpipe::clipgeom::ClipSpec;
use herdpipe::dataset::coco::{export_coco, uniform_frames};
use herdpipe::dataset::kinetics::{class_histogram, export_kinetics, read_plan, KineticsOptions};
use herdpipe::dataset::split::{split as split_items, split_grouped, Split, SplitAssignment, SplitOrder, SplitRatios};
use herdpipe::extract::ClipExtractor;

use crate::commands::annot::read_keyframes;
use crate::config::Config;
use crate::util::{invalid, io_failure, read_text, to_json, write_text, CmdResult, Failure, FrameSize, FrameSpan, OrFail};

#[derive(Debug, Args)]
pub struct CocoArgs {
    /// COCO keyframe annotations (e.g. a CVAT export)
    pub keyframes: PathBuf,
    /// Frames to export (default: every frame any track covers)
    #[arg(long, value_name = "FIRST..LAST")]
    pub frames: Option<FrameSpan>,
    /// Frame size (default: from the input images)
    #[arg(long, value_name = "WxH")]
    pub frame_size: Option<FrameSize>,
    /// Output COCO JSON (stdout if omitted)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn coco(a: CocoArgs, _config: &Config) -> CmdResult {
    let (tracks, size) = read_keyframes(&a.keyframes)?;
    let size = a.frame_size.or(size).ok_or_else(|| invalid("no frame size: pass --frame-size"))?;
    let frames: BTreeSet<u64> = match a.frames {
        Some(span) => (span.first..=span.last).collect(),
        None => tracks.iter().flat_map(|t| t.span()).collect(),
    };
    let (doc, report) = export_coco(&tracks, &uniform_frames(frames, size.width, size.height)).or_invalid("export")?;
    eprintln!(
        "{} images, {} boxes, {} categories; {} boxes clamped, {} dropped",
        doc.images.len(),
        doc.annotations.len(),
        doc.categories.len(),
        report.clamped,
        report.dropped
    );
    write_text(a.out.as_deref(), &doc.to_json())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    /// Overlapping windows of one cow and label stay together
    Cue,
    /// Every clip on its own
    Clip,
    /// Whole source videos
    Video,
}

/// Groups of clips that must share a split.
fn clip_groups(clips: &[ClipSpec], by: GroupBy) -> Vec<(String, String)> {
    match by {
        GroupBy::Clip => clips.iter().map(|c| (c.clip_id.clone(), c.clip_id.clone())).collect(),
        GroupBy::Video => clips.iter().map(|c| (c.clip_id.clone(), c.video_ref.clone())).collect(),
        GroupBy::Cue => {
            let mut order: Vec<usize> = (0..clips.len()).collect();
            order.sort_by(|&i, &j| {
                let (a, b) = (&clips[i], &clips[j]);
                (&a.video_ref, a.cow_id, &a.label, a.window.start).cmp(&(&b.video_ref, b.cow_id, &b.label, b.window.start))
            });
            let mut groups = vec![String::new(); clips.len()];
            let mut current = String::new();
            let mut prev: Option<&ClipSpec> = None;
            for i in order {
                let c = &clips[i];
                let joins = prev.is_some_and(|p| {
                    p.video_ref == c.video_ref && p.cow_id == c.cow_id && p.label == c.label && c.window.start <= p.window.end
                });
                if !joins {
                    current = c.clip_id.clone();
                }
                groups[i] = current.clone();
                prev = Some(c);
            }
            clips.iter().zip(groups).map(|(c, g)| (c.clip_id.clone(), g)).collect()
        }
    }
}

#[derive(Debug, Args)]
pub struct KineticsArgs {
    /// Clip plan (output of plan-clips)
    #[arg(long)]
    pub plan: PathBuf,
    /// Dataset root to create
    #[arg(short, long)]
    pub out: PathBuf,
    /// Split assignment CSV `item_id,split` (default: splits in the plan, else a fresh split)
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Clips kept together when splitting afresh
    #[arg(long, value_enum, default_value = "cue")]
    pub group_by: GroupBy,
    /// Directory the plan's video references are relative to
    #[arg(long, default_value = ".")]
    pub video_root: PathBuf,
    /// Clip file extension
    #[arg(long, default_value = "mp4")]
    pub extension: String,
    /// Run the configured extractor for every clip
    #[arg(long)]
    pub extract: bool,
}

pub fn kinetics(a: KineticsArgs, config: &Config) -> CmdResult {
    let records = read_plan(&read_text(&a.plan)?).or_invalid(a.plan.display())?;
    let clips: Vec<ClipSpec> = records.iter().map(|r| r.clip.clone()).collect();
    let ratios = config.ratios().or_invalid("config")?;
    let assignment = if let Some(path) = &a.split {
        let assignments = SplitAssignment::from_csv(&read_text(path)?).or_invalid(path.display())?;
        SplitAssignment { seed: config.split_seed, ratios, order: SplitOrder::Random, assignments }
    } else if !records.is_empty() && records.iter().all(|r| r.split.is_some()) {
        let assignments = records.iter().map(|r| (r.clip.clip_id.clone(), r.split.expect("checked"))).collect();
        SplitAssignment { seed: config.split_seed, ratios, order: SplitOrder::Random, assignments }
    } else {
        let pairs = clip_groups(&clips, a.group_by);
        split_grouped(&pairs, ratios, config.split_seed, SplitOrder::Random).or_invalid("split")?
    };
    let extractor = if a.extract {
        Some(config.extractor().or_invalid("config")?.ok_or_else(|| invalid("--extract needs an extractor command"))?)
    } else {
        None
    };
    let opts = KineticsOptions {
        root: a.out.clone(),
        video_root: a.video_root,
        extension: a.extension,
        extractor: extractor.as_ref().map(|e| e as &dyn ClipExtractor),
        workers: config.workers,
    };
    let export = export_kinetics(&clips, &assignment, &opts).map_err(|e| match e {
        herdpipe::dataset::kinetics::KineticsError::Io { .. } | herdpipe::dataset::kinetics::KineticsError::Pool(_) => {
            io_failure(e)
        }
        other => invalid(other),
    })?;
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    for r in &export.rows {
        *sizes.entry(r.split.to_string()).or_default() += 1;
    }
    eprintln!(
        "{} clips written to {} (splits {:?}, labels {:?})",
        export.rows.len(),
        export.manifest_path.display(),
        sizes,
        class_histogram(&export.rows)
    );
    if export.failures.is_empty() {
        Ok(())
    } else {
        write_text(Some(&a.out.join("failures.json")), &to_json(&export.failures))?;
        Err(io_failure(format!("{} clips failed to extract; see failures.json", export.failures.len())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    Random,
    Chronological,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// CSV with a header row; item ids come from --id-column
    #[arg(long, value_name = "CSV", conflicts_with_all = ["ids", "n"])]
    pub n_from: Option<PathBuf>,
    /// Plain text file, one item id per line
    #[arg(long, value_name = "PATH", conflicts_with = "n")]
    pub ids: Option<PathBuf>,
    /// Split items 0..N (ids are zero-padded numbers)
    #[arg(long)]
    pub n: Option<usize>,
    /// Id column of --n-from (default: the first column)
    #[arg(long, value_name = "NAME")]
    pub id_column: Option<String>,
    /// Column of --n-from whose rows must share a split
    #[arg(long, value_name = "NAME")]
    pub group_column: Option<String>,
    /// Shuffle seed (overrides the configured split_seed)
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "random")]
    pub order: OrderArg,
    /// Output CSV `item_id,split` (stdout if omitted)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn csv_columns(text: &str, id: Option<&str>, group: Option<&str>) -> Result<Vec<(String, String)>, Failure> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().or_invalid("csv header")?.clone();
    let find = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| invalid(format!("no column {name:?}")));
    let id_col = id.map(find).transpose()?.unwrap_or(0);
    let group_col = group.map(find).transpose()?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.or_invalid(format!("csv line {}", i + 2))?;
        let item = rec.get(id_col).ok_or_else(|| invalid(format!("csv line {}: missing id", i + 2)))?.to_string();
        let g = match group_col {
            Some(c) => rec.get(c).ok_or_else(|| invalid(format!("csv line {}: missing group", i + 2)))?.to_string(),
            None => item.clone(),
        };
        out.push((item, g));
    }
    Ok(out)
}

pub fn split(a: SplitArgs, config: &Config) -> CmdResult {
    let items: Vec<(String, String)> = if let Some(path) = &a.n_from {
        csv_columns(&read_text(path)?, a.id_column.as_deref(), a.group_column.as_deref())?
    } else if let Some(path) = &a.ids {
        read_text(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(|l| (l.to_string(), l.to_string())).collect()
    } else if let Some(n) = a.n {
        let width = n.saturating_sub(1).to_string().len();
        (0..n).map(|i| format!("{i:0width$}")).map(|s| (s.clone(), s)).collect()
    } else {
        return Err(invalid("one of --n-from, --ids or --n is required"));
    };
    let ratios: SplitRatios = config.ratios().or_invalid("config")?;
    let seed = a.seed.unwrap_or(config.split_seed);
    let order = match a.order {
        OrderArg::Random => SplitOrder::Random,
        OrderArg::Chronological => SplitOrder::Chronological,
    };
    let assignment = if a.group_column.is_some() {
        split_grouped(&items, ratios, seed, order)
    } else {
        let ids: Vec<&str> = items.iter().map(|(i, _)| i.as_str()).collect();
        split_items(&ids, ratios, seed, order)
    }
    .or_invalid("split")?;
    let [train, val, test] = assignment.sizes();
    eprintln!("{} items: {train} {}, {val} {}, {test} {} (seed {seed})", assignment.len(), Split::Train, Split::Val, Split::Test);
    write_text(a.out.as_deref(), &assignment.to_csv())
}
