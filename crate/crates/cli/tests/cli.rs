use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_herdpipe"));
    c.env_remove("HERDPIPE_CONFIG");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(cmd: &mut Command) -> String {
    let o = cmd.output().unwrap();
    assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn vtt_check_accepts_three_cows() {
    let out = ok(bin().arg("vtt-check").arg(fixture("three_cows.vtt")));
    assert!(out.contains("3 cues, 0 conflicts, 0 merge candidates, 0 warnings"), "{out}");
}

#[test]
fn vtt_check_fails_on_overlaps_and_unknown_labels() {
    let dir = tempfile::tempdir().unwrap();
    let overlap = dir.path().join("o.vtt");
    std::fs::write(&overlap, "WEBVTT\n\n0:00:01.000 --> 0:00:05.000\nCow 1 Grazing\n\n0:00:04.000 --> 0:00:06.000\nCow 1 Drinking\n").unwrap();
    assert_eq!(code(bin().arg("vtt-check").arg(&overlap)), 1);

    let unknown = dir.path().join("u.vtt");
    std::fs::write(&unknown, "0:00:01.000 --> 0:00:05.000\nCow 1 Sleeping\n").unwrap();
    assert_eq!(code(bin().arg("vtt-check").arg(&unknown)), 1);
    let lenient = ok(bin().args(["--parse-mode", "lenient", "vtt-check"]).arg(&unknown));
    assert!(lenient.contains("Other") && lenient.contains("1 warnings"), "{lenient}");
}

#[test]
fn doubled_segments_are_reported() {
    let out = ok(bin()
        .arg("vtt-check")
        .arg(fixture("three_cows.vtt"))
        .args(["--double-segments", "Drinking", "--video-len-s", "600"]));
    // 311..323 doubled about 317
    assert!(out.contains("doubled #0: 0:05:05.000 --> 0:05:29.000"), "{out}");
}

#[test]
fn exit_codes() {
    assert_eq!(code(bin().arg("--help")), 0);
    assert_eq!(code(bin().arg("no-such-command")), 1);
    assert_eq!(code(bin().args(["vtt-check", "/definitely/missing.vtt"])), 2);
    assert_eq!(code(bin().args(["--window-ms", "0", "vtt-check"]).arg(fixture("three_cows.vtt"))), 1);
}

#[test]
fn config_file_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "frame_rat = \"25\"\n").unwrap();
    assert_eq!(code(bin().arg("--config").arg(&bad).arg("vtt-check").arg(fixture("three_cows.vtt"))), 1);
    assert_eq!(code(bin().env("HERDPIPE_CONFIG", &bad).arg("vtt-check").arg(fixture("three_cows.vtt"))), 1);

    let labels = dir.path().join("labels.toml");
    std::fs::write(&labels, "labels = [\"Drinking\", \"Grazing\"]\nfallback_label = \"Grazing\"\n").unwrap();
    // Other is not a label any more; strict mode rejects the sample
    assert_eq!(code(bin().env("HERDPIPE_CONFIG", &labels).arg("vtt-check").arg(fixture("three_cows.vtt"))), 1);
}

#[test]
fn split_is_deterministic_and_grouped() {
    let a = ok(bin().args(["split", "--n", "20", "--seed", "3"]));
    assert_eq!(a, ok(bin().args(["split", "--n", "20", "--seed", "3"])));
    assert_eq!(a.lines().count(), 21);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("clips.csv");
    let mut text = "clip,video\n".to_string();
    for i in 0..30 {
        text.push_str(&format!("c{i},v{}\n", i / 3));
    }
    std::fs::write(&csv, text).unwrap();
    let out = ok(bin().arg("split").arg("--n-from").arg(&csv).args(["--group-column", "video"]));
    let split_of = |clip: &str| out.lines().find(|l| l.starts_with(&format!("{clip},"))).unwrap().split(',').nth(1).unwrap().to_string();
    for v in 0..10 {
        let s: Vec<String> = (0..3).map(|k| split_of(&format!("c{}", v * 3 + k))).collect();
        assert!(s.iter().all(|x| *x == s[0]), "video {v}: {s:?}");
    }
}

#[test]
fn sync_fit_and_align() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, offset_s: i64| {
        let mut text = "cts,date,lat,lon\n".to_string();
        for i in 0..60i64 {
            let wall = offset_s * 1000 + i * 1000;
            let secs = wall.div_euclid(1000);
            text.push_str(&format!("{},2020-03-18T01:{:02}:{:02}.000Z,-33.8,151.2\n", i * 1000, secs / 60, secs % 60));
        }
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        path
    };
    let (a, b) = (write("a.csv", 0), write("b.csv", 2));
    let fit = |csv: &Path, name: &str| {
        let out = dir.path().join(name);
        ok(bin().arg("sync-fit").arg(csv).arg("--out").arg(&out));
        out
    };
    let (ma, mb) = (fit(&a, "a.json"), fit(&b, "b.json"));
    // camera b started 2 s later, so a's frame 90 is b's frame 30
    let out = ok(bin().arg("sync-align").arg("--src").arg(&ma).arg("--dst").arg(&mb).args(["90", "120"]));
    assert_eq!(out, "src_frame\tdst_frame\n90\t30\n120\t60\n");
}

#[test]
fn synthetic_scene_through_the_tools() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(bin().args(["synth", "--seed", "2", "--duration-s", "20", "--n-cows", "2"]).arg("--out").arg(d.join("scene.json")).arg("--emit").arg(d));

    let dense = ok(bin().arg("interp").arg(d.join("keyframes.json")).args(["--cow", "1", "--frames", "0..=9"]));
    assert_eq!(dense.lines().count(), 10);

    let report = ok(bin().arg("eval-det").arg("--gt").arg(d.join("gt_coco.json")).arg("--pred").arg(d.join("detections.jsonl")));
    assert!(report.contains("mean                1.0000   1.0000"), "{report}");

    let plan = ok(bin()
        .args(["plan-clips", "--video", "synth_2.mp4", "--vtt"])
        .arg(d.join("cues.vtt"))
        .arg("--keyframes")
        .arg(d.join("keyframes.json")));
    assert_eq!(plan, std::fs::read_to_string(d.join("plan.jsonl")).unwrap());

    ok(bin().arg("export-kinetics").arg("--plan").arg(d.join("plan.jsonl")).arg("--out").arg(d.join("ds")));
    let manifest = std::fs::read_to_string(d.join("ds/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), plan.lines().count() + 1);

    let acc = ok(bin().arg("eval-action").arg("--gt").arg(d.join("clip_labels.csv")).arg("--pred").arg(d.join("scores.jsonl")));
    assert!(acc.contains("micro accuracy (trace/total): 100.0%"), "{acc}");

    let requests = d.join("requests.jsonl");
    ok(bin().arg("run-pipeline").arg("--detections").arg(d.join("detections.jsonl")).args(["--video", "synth_2.mp4"]).arg("--requests-only").arg(&requests));
    let n = std::fs::read_to_string(&requests).unwrap().lines().count();
    assert!(n > 0);

    // a score file with nothing in it fails every window
    let empty = d.join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = bin().arg("run-pipeline").arg("--detections").arg(d.join("detections.jsonl")).args(["--video", "synth_2.mp4"]).arg("--scores").arg(&empty).output().unwrap();
    assert_eq!(o.status.code(), Some(2));

    let overlays = ok(bin()
        .args(["render-overlays", "--video", "in.mp4", "--frames", "0,15", "--dry-run"])
        .arg("--keyframes")
        .arg(d.join("keyframes.json"))
        .arg("--vtt")
        .arg(d.join("cues.vtt"))
        .arg("--out-dir")
        .arg(d.join("ov")));
    assert_eq!(overlays.lines().count(), 2);
    assert!(overlays.contains("drawbox") && overlays.contains("Cow 2"), "{overlays}");
}

#[cfg(unix)]
#[test]
fn pipeline_with_a_scorer_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(bin().args(["synth", "--seed", "9", "--duration-s", "4", "--n-cows", "1"]).arg("--emit").arg(d).arg("--out").arg(d.join("s.json")));
    let scorer = "sh -c 'id=$(sed -n \"s/.*\\\"clip_id\\\":\\\"\\([^\\\"]*\\)\\\".*/\\1/p\" {request}); printf \"{\\\"clip_id\\\":\\\"%s\\\",\\\"scores\\\":{\\\"Drinking\\\":0.9,\\\"Grazing\\\":0.05,\\\"Other\\\":0.05}}\\n\" \"$id\"'";
    let events = ok(bin()
        .arg("--scorer")
        .arg(scorer)
        .arg("run-pipeline")
        .arg("--detections")
        .arg(d.join("detections.jsonl"))
        .args(["--video", "synth_9.mp4"])
        .arg("--vtt")
        .arg(d.join("events.vtt")));
    let lines: Vec<&str> = events.lines().collect();
    assert_eq!(lines.len(), 1, "{events}");
    assert!(lines[0].contains("\"label\":\"Drinking\"") && lines[0].contains("\"start\":0") && lines[0].contains("\"end\":4000"), "{events}");
    let vtt = std::fs::read_to_string(d.join("events.vtt")).unwrap();
    assert!(vtt.contains("0:00:00.000 --> 0:00:04.000\nCow 1 Drinking"), "{vtt}");
}
