//! Kinetics-style action clip layout: `<root>/<split>/<label>/<clip_id>.<ext>`
//! plus `manifest.csv` and the clip plan (`plan.jsonl`).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clipgeom::ClipSpec;
use crate::dataset::split::{Split, SplitAssignment};
use crate::extract::{ClipExtractor, CommandError};

pub const MANIFEST_HEADER: &str = "path,label,cow_id,video_ref,start_ms,end_ms,split";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PLAN_FILE: &str = "plan.jsonl";

#[derive(Debug, Error)]
pub enum KineticsError {
    #[error("clip id {clip_id:?} is used by two clips: {first} and {second}")]
    DuplicateClipId { clip_id: String, first: String, second: String },
    #[error("clip {0:?} has no split assignment")]
    Unassigned(String),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("malformed plan line {line}: {reason}")]
    Plan { line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KineticsError + '_ {
    move |source| KineticsError::Io { path: path.to_path_buf(), source }
}

/// One line of `plan.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    #[serde(flatten)]
    pub clip: ClipSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

pub fn write_plan(records: &[PlanRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("plan record serializes") + "\n")
        .collect()
}

pub fn read_plan(text: &str) -> Result<Vec<PlanRecord>, KineticsError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| KineticsError::Plan { line: i + 1, reason: e.to_string() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: String,
    pub cow_id: u32,
    pub video_ref: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub split: Split,
}

pub fn write_manifest(rows: &[ManifestRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("manifest row serializes");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8");
    format!("{MANIFEST_HEADER}\n{body}")
}

pub fn read_manifest(text: &str) -> Result<Vec<ManifestRow>, KineticsError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| KineticsError::Manifest(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != MANIFEST_HEADER {
        return Err(KineticsError::Manifest(format!("expected header {MANIFEST_HEADER:?}")));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| KineticsError::Manifest(e.to_string())))
        .collect()
}

/// Clip count per label.
pub fn class_histogram(rows: &[ManifestRow]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for r in rows {
        *h.entry(r.label.clone()).or_insert(0) += 1;
    }
    h
}

#[derive(Clone)]
pub struct KineticsOptions<'a> {
    pub root: PathBuf,
    /// Directory `video_ref`s are resolved against.
    pub video_root: PathBuf,
    pub extension: String,
    /// `None` writes the layout, plan and manifest without extracting pixels.
    pub extractor: Option<&'a dyn ClipExtractor>,
    pub workers: usize,
}

#[derive(Debug, Serialize)]
pub struct ExtractionFailure {
    pub clip_id: String,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct KineticsExport {
    pub rows: Vec<ManifestRow>,
    pub failures: Vec<ExtractionFailure>,
    pub manifest_path: PathBuf,
}

fn describe(clip: &ClipSpec) -> String {
    format!("{} cow {} [{}, {})", clip.video_ref, clip.cow_id, clip.window.start, clip.window.end)
}

/// Lay out and (optionally) extract every clip.
///
/// Extraction failures are reported per clip and left out of the manifest;
/// the export carries on with the remaining clips.
pub fn export_kinetics(
    clips: &[ClipSpec],
    assignment: &SplitAssignment,
    opts: &KineticsOptions<'_>,
) -> Result<KineticsExport, KineticsError> {
    let mut seen: HashMap<&str, &ClipSpec> = HashMap::new();
    for c in clips {
        if let Some(prev) = seen.insert(&c.clip_id, c) {
            return Err(KineticsError::DuplicateClipId {
                clip_id: c.clip_id.clone(),
                first: describe(prev),
                second: describe(c),
            });
        }
    }
    let splits: Vec<Split> = clips
        .iter()
        .map(|c| assignment.get(&c.clip_id).ok_or_else(|| KineticsError::Unassigned(c.clip_id.clone())))
        .collect::<Result<_, _>>()?;

    fs::create_dir_all(&opts.root).map_err(io_err(&opts.root))?;
    let relative: Vec<PathBuf> = clips
        .iter()
        .zip(&splits)
        .map(|(c, s)| PathBuf::from(s.as_str()).join(c.label.as_str()).join(format!("{}.{}", c.clip_id, opts.extension)))
        .collect();
    for rel in &relative {
        let dir = opts.root.join(rel.parent().expect("relative path has a parent"));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| KineticsError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<(), CommandError>> = match opts.extractor {
        None => clips.iter().map(|_| Ok(())).collect(),
        Some(extractor) => pool.install(|| {
            clips
                .par_iter()
                .zip(relative.par_iter())
                .map(|(clip, rel)| extractor.extract(clip, &opts.video_root.join(&clip.video_ref), &opts.root.join(rel)))
                .collect()
        }),
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut plan = Vec::new();
    for (((clip, split), rel), outcome) in clips.iter().zip(&splits).zip(&relative).zip(outcomes) {
        plan.push(PlanRecord { clip: clip.clone(), split: Some(*split) });
        match outcome {
            Ok(()) => rows.push(ManifestRow {
                path: rel.to_string_lossy().replace('\\', "/"),
                label: clip.label.to_string(),
                cow_id: clip.cow_id.get(),
                video_ref: clip.video_ref.clone(),
                start_ms: clip.window.start.0,
                end_ms: clip.window.end.0,
                split: *split,
            }),
            Err(e) => {
                log::warn!("extraction failed for {}: {e}", clip.clip_id);
                failures.push(ExtractionFailure { clip_id: clip.clip_id.clone(), error: e.to_string() });
            }
        }
    }

    let plan_path = opts.root.join(PLAN_FILE);
    fs::write(&plan_path, write_plan(&plan)).map_err(io_err(&plan_path))?;
    let manifest_path = opts.root.join(MANIFEST_FILE);
    fs::write(&manifest_path, write_manifest(&rows)).map_err(io_err(&manifest_path))?;
    Ok(KineticsExport { rows, failures, manifest_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clipgeom::WindowGeometry;
    use crate::dataset::split::{split, SplitOrder, SplitRatios};
    use crate::label::{ActionLabel, CowId};
    use crate::tracks::BBox;
    use crate::vtt::Timecode;

    fn clip(id: &str, label: &str) -> ClipSpec {
        ClipSpec {
            clip_id: id.into(),
            video_ref: "v.mp4".into(),
            cow_id: CowId(1),
            label: ActionLabel::new(label),
            out_size: 256,
            frame_w: 100,
            frame_h: 100,
            window: WindowGeometry {
                start: Timecode(0),
                end: Timecode(1000),
                first_frame: 0,
                last_frame: 0,
                crops: vec![BBox::new(0.0, 0.0, 10.0, 10.0).unwrap()],
            },
        }
    }

    fn all_train(ids: &[&str]) -> SplitAssignment {
        let mut a = split(ids, SplitRatios::default(), 0, SplitOrder::Random).unwrap();
        for v in a.assignments.values_mut() {
            *v = Split::Train;
        }
        a
    }

    fn opts(root: &Path) -> KineticsOptions<'static> {
        KineticsOptions {
            root: root.to_path_buf(),
            video_root: PathBuf::from("."),
            extension: "mp4".into(),
            extractor: None,
            workers: 2,
        }
    }

    #[test]
    fn layout_per_label() {
        let dir = tempfile::tempdir().unwrap();
        let clips = vec![clip("a", "Drinking"), clip("b", "Grazing"), clip("c", "Other")];
        let export = export_kinetics(&clips, &all_train(&["a", "b", "c"]), &opts(dir.path())).unwrap();
        for label in ["Drinking", "Grazing", "Other"] {
            assert!(dir.path().join("train").join(label).is_dir());
        }
        assert_eq!(export.rows.len(), 3);
        assert_eq!(export.rows[0].path, "train/Drinking/a.mp4");
        let manifest = fs::read_to_string(&export.manifest_path).unwrap();
        assert!(manifest.starts_with(MANIFEST_HEADER));
        assert_eq!(read_manifest(&manifest).unwrap(), export.rows);
        let plan = read_plan(&fs::read_to_string(dir.path().join(PLAN_FILE)).unwrap()).unwrap();
        assert_eq!(plan.len(), 3);
        assert_eq!(plan[1].clip, clips[1]);
        assert_eq!(class_histogram(&export.rows).values().copied().collect::<Vec<_>>(), vec![1, 1, 1]);
    }

    #[test]
    fn duplicate_clip_id() {
        let dir = tempfile::tempdir().unwrap();
        let mut second = clip("a", "Grazing");
        second.video_ref = "w.mp4".into();
        let err = export_kinetics(&[clip("a", "Drinking"), second], &all_train(&["a"]), &opts(dir.path())).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("v.mp4") && msg.contains("w.mp4"), "{msg}");
    }

    #[test]
    fn unassigned_clip() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            export_kinetics(&[clip("zzz", "Other")], &all_train(&["a"]), &opts(dir.path())),
            Err(KineticsError::Unassigned(_))
        ));
    }

    struct FailOn(&'static str);

    impl ClipExtractor for FailOn {
        fn extract(&self, clip: &ClipSpec, _input: &Path, output: &Path) -> Result<(), CommandError> {
            if clip.clip_id == self.0 {
                return Err(CommandError::MissingOutput { program: "fake".into(), path: output.display().to_string() });
            }
            fs::write(output, b"clip").unwrap();
            Ok(())
        }
    }

    #[test]
    fn failures_are_reported_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let clips = vec![clip("a", "Drinking"), clip("b", "Grazing"), clip("c", "Other")];
        let extractor = FailOn("b");
        let mut o = opts(dir.path());
        o.extractor = Some(&extractor);
        let export = export_kinetics(&clips, &all_train(&["a", "b", "c"]), &o).unwrap();
        assert_eq!(export.rows.len(), 2);
        assert_eq!(export.failures.len(), 1);
        assert_eq!(export.failures[0].clip_id, "b");
        assert!(dir.path().join("train/Other/c.mp4").is_file());
    }
}
