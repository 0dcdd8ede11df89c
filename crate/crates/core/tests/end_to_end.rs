use std::collections::BTreeMap;

use herdpipe::clipgeom::plan_clips;
use herdpipe::dataset::coco::{export_coco, export_keyframes, tracks_from_coco, uniform_frames, CocoDocument};
use herdpipe::dataset::kinetics::{export_kinetics, read_manifest, KineticsOptions};
use herdpipe::dataset::split::{split_grouped, SplitOrder, SplitRatios};
use herdpipe::eval::classification::confusion;
use herdpipe::eval::detection::{average_precision, ApParams};
use herdpipe::eval::records::ground_truth_from_coco;
use herdpipe::pipeline::{events_to_vtt, run_pipeline, PipelineParams};
use herdpipe::synth::{generate, SceneSpec};
use herdpipe::timesync::ClockMap;
use herdpipe::vtt::{parse_vtt, serialize_vtt, ParseMode};
use herdpipe::LabelSet;

fn scene(seed: u64) -> herdpipe::synth::Scene {
    generate(&SceneSpec { seed, duration_s: 40, ..Default::default() }).unwrap()
}

#[test]
fn keyframe_annotations_survive_a_coco_round_trip() {
    let s = scene(3);
    let frames = uniform_frames(0..s.spec.frame_count(), s.spec.frame_w, s.spec.frame_h);
    let (kf, _) = export_keyframes(&s.tracks, &frames).unwrap();
    let doc = CocoDocument::from_json(&kf.to_json()).unwrap();
    assert_eq!(tracks_from_coco(&doc).unwrap(), s.tracks);

    let (dense, report) = export_coco(&s.tracks, &frames).unwrap();
    assert_eq!(report.dropped, 0);
    let gt = ground_truth_from_coco(&dense).unwrap();
    assert_eq!(gt.len() as u64, s.spec.frame_count() * s.spec.n_cows as u64);
    let r = average_precision(&gt, &s.detections, &ApParams::default()).unwrap();
    assert_eq!((r.ap, r.ar), (1.0, 1.0));
}

#[test]
fn vtt_text_rebuilds_the_same_clip_plan() {
    let s = scene(4);
    let cues = parse_vtt(&serialize_vtt(&s.cues), &LabelSet::default(), ParseMode::Strict).unwrap().cues;
    let plan = plan_clips(&s.spec.video_ref(), &s.tracks, &cues, &s.spec.clip_params()).unwrap();
    assert_eq!(plan, s.clip_plan().unwrap());
    assert!(plan.dropped.is_empty());
}

#[test]
fn dataset_layout_and_accuracy_from_oracle_scores() {
    let s = scene(5);
    let plan = s.clip_plan().unwrap();
    let pairs: Vec<(String, String)> = plan.clips.iter().map(|c| (c.clip_id.clone(), format!("{}/{}", c.cow_id, c.label))).collect();
    let assignment = split_grouped(&pairs, SplitRatios::default(), 0, SplitOrder::Random).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = KineticsOptions {
        root: dir.path().to_path_buf(),
        video_root: dir.path().to_path_buf(),
        extension: "mp4".into(),
        extractor: None,
        workers: 2,
    };
    let export = export_kinetics(&plan.clips, &assignment, &opts).unwrap();
    assert_eq!(export.rows.len(), plan.clips.len());
    let manifest = read_manifest(&std::fs::read_to_string(&export.manifest_path).unwrap()).unwrap();
    assert_eq!(manifest, export.rows);
    for row in &manifest {
        assert!(dir.path().join(&row.path).parent().unwrap().is_dir(), "{}", row.path);
    }

    let labels = LabelSet::default();
    let truth: BTreeMap<&str, &str> = plan.clips.iter().map(|c| (c.clip_id.as_str(), c.label.as_str())).collect();
    let t: Vec<&str> = s.scores.iter().map(|sc| truth[sc.clip_id.as_str()]).collect();
    let p: Vec<String> = s.scores.iter().map(|sc| sc.best(&labels).0.to_string()).collect();
    let cm = confusion(&t, &p, &labels).unwrap();
    assert_eq!(cm.overall_accuracy().unwrap(), 1.0);
}

#[test]
fn pipeline_recovers_cues_within_one_stride() {
    let s = scene(6);
    let params = PipelineParams { video_ref: s.spec.video_ref(), workers: 3, ..Default::default() };
    let clock = ClockMap::identity(s.spec.frame_rate);
    let scorer = s.oracle_scorer();
    let out = run_pipeline(&s.detections, &clock, &scorer, &LabelSet::default(), &params).unwrap();
    assert!(out.failures.is_empty());
    assert_eq!(out.events.len(), s.cues.len());
    let mut cues = s.cues.clone();
    cues.sort_by_key(|c| (c.cow_id, c.start));
    for (e, c) in out.events.iter().zip(&cues) {
        assert_eq!((e.cow_id, &e.label), (c.cow_id, &c.action));
        assert!(e.start.0.abs_diff(c.start.0) <= params.stride_ms, "{e:?} vs {c:?}");
        assert!(e.end.0.abs_diff(c.end.0) <= params.stride_ms, "{e:?} vs {c:?}");
    }
    let vtt = parse_vtt(&events_to_vtt(&out.events), &LabelSet::default(), ParseMode::Strict).unwrap();
    assert_eq!(vtt.cues.len(), out.events.len());
}
