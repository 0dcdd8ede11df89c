use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::Args;
use herdpipe::dataset::coco::CocoDocument;
use herdpipe::eval::classification::{confusion, ClassificationReport, ConfusionMatrix};
use herdpipe::eval::detection::{average_precision, ApParams};
use herdpipe::eval::records::{ground_truth_from_coco, read_action_scores, read_clip_labels, read_detections};
use herdpipe::LabelSet;

use crate::config::Config;
use crate::util::{invalid, read_text, to_json, write_text, CmdResult, Failure, OrFail};

#[derive(Debug, Args)]
pub struct DetArgs {
    /// Ground truth, COCO JSON
    #[arg(long)]
    pub gt: PathBuf,
    /// Predictions, JSON Lines `{"frame","bbox":[x,y,w,h],"category","score"}`
    #[arg(long)]
    pub pred: PathBuf,
    /// Highest-scoring predictions kept per frame and category
    #[arg(long, default_value_t = 100)]
    pub max_dets: usize,
    /// Print the report as JSON
    #[arg(long)]
    pub json: bool,
    /// Write the report here instead of stdout
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn det(a: DetArgs, config: &Config) -> CmdResult {
    let doc = CocoDocument::from_json(&read_text(&a.gt)?).or_invalid(a.gt.display())?;
    let gt = ground_truth_from_coco(&doc).or_invalid(a.gt.display())?;
    let pred = read_detections(&read_text(&a.pred)?).or_invalid(a.pred.display())?;
    let params = ApParams { iou_thresholds: config.iou_thresholds.clone(), max_dets: a.max_dets, ..Default::default() };
    let report = average_precision(&gt, &pred, &params).or_invalid("evaluation")?;
    let text = if a.json { to_json(&report) } else { report.render_table() };
    write_text(a.out.as_deref(), &text)
}

#[derive(Debug, Args)]
pub struct ActionArgs {
    /// Ground-truth labels, CSV `clip_id,label`
    #[arg(long, requires = "pred", conflicts_with = "counts")]
    pub gt: Option<PathBuf>,
    /// Predictions: CSV `clip_id,label` or JSON Lines scores (argmax is taken)
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    /// Confusion counts instead of labels: CSV, header `truth,<label>...`, one row per true label
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Print the report as JSON
    #[arg(long)]
    pub json: bool,
    /// Write the report here instead of stdout
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn read_predictions(path: &Path, labels: &LabelSet) -> Result<BTreeMap<String, String>, Failure> {
    let text = read_text(path)?;
    let is_jsonl = path.extension().is_some_and(|e| e == "jsonl") || text.trim_start().starts_with('{');
    if is_jsonl {
        let scores = read_action_scores(&text).or_invalid(path.display())?;
        scores
            .into_iter()
            .map(|s| {
                s.validate(labels, false).or_invalid(path.display())?;
                let (label, _) = s.best(labels);
                Ok((s.clip_id, label.to_string()))
            })
            .collect()
    } else {
        Ok(read_clip_labels(&text).or_invalid(path.display())?.into_iter().collect())
    }
}

fn read_counts(path: &Path, labels: &LabelSet) -> Result<ConfusionMatrix, Failure> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().or_invalid(path.display())?.clone();
    let col_label: Vec<usize> = header
        .iter()
        .skip(1)
        .map(|h| labels.index_of(h).ok_or_else(|| invalid(format!("{}: unknown label column {h:?}", path.display()))))
        .collect::<Result<_, _>>()?;
    if col_label.iter().collect::<BTreeSet<_>>().len() != labels.len() || col_label.len() != labels.len() {
        return Err(invalid(format!("{}: columns must name each label once", path.display())));
    }
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    let mut seen = BTreeSet::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.or_invalid(format!("{} line {}", path.display(), line + 2))?;
        let row = labels
            .index_of(&rec[0])
            .ok_or_else(|| invalid(format!("{} line {}: unknown label {:?}", path.display(), line + 2, &rec[0])))?;
        if !seen.insert(row) {
            return Err(invalid(format!("{}: row {:?} given twice", path.display(), &rec[0])));
        }
        if rec.len() != k + 1 {
            return Err(invalid(format!("{} line {}: expected {} counts", path.display(), line + 2, k)));
        }
        for (j, &col) in col_label.iter().enumerate() {
            counts[row][col] = rec[j + 1].parse().or_invalid(format!("{} line {}", path.display(), line + 2))?;
        }
    }
    ConfusionMatrix::from_counts(labels, counts).or_invalid(path.display())
}

pub fn action(a: ActionArgs, config: &Config) -> CmdResult {
    let labels = config.label_set().or_invalid("config")?;
    let cm = match (&a.counts, &a.gt, &a.pred) {
        (Some(path), _, _) => read_counts(path, &labels)?,
        (None, Some(gt_path), Some(pred_path)) => {
            let gt = read_clip_labels(&read_text(gt_path)?).or_invalid(gt_path.display())?;
            let pred = read_predictions(pred_path, &labels)?;
            let missing: Vec<&str> = gt.iter().filter(|(id, _)| !pred.contains_key(id)).map(|(id, _)| id.as_str()).collect();
            if !missing.is_empty() {
                return Err(invalid(format!("{} clips have no prediction, e.g. {:?}", missing.len(), missing[0])));
            }
            let known: BTreeSet<&str> = gt.iter().map(|(id, _)| id.as_str()).collect();
            let extra = pred.keys().filter(|id| !known.contains(id.as_str())).count();
            if extra > 0 {
                log::warn!("{extra} predictions have no ground truth and are ignored");
            }
            let truths: Vec<&str> = gt.iter().map(|(_, l)| l.as_str()).collect();
            let preds: Vec<&str> = gt.iter().map(|(id, _)| pred[id].as_str()).collect();
            confusion(&truths, &preds, &labels).or_invalid("confusion matrix")?
        }
        _ => return Err(invalid("pass --gt and --pred, or --counts")),
    };
    let report = ClassificationReport::new(&cm);
    let text = if a.json { to_json(&report) } else { report.render_table() };
    write_text(a.out.as_deref(), &text)
}
