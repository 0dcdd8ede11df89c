//! The action scorer contract: one request per crop window, one
//! [`ActionScore`] back.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clipgeom::WindowGeometry;
use crate::eval::records::{read_action_scores, ActionScore, RecordError};
use crate::extract::{CommandError, CommandTemplate};
use crate::label::CowId;

/// One crop window of one cow, as handed to a scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub clip_id: String,
    pub video_ref: String,
    pub cow_id: CowId,
    pub out_size: u32,
    pub frame_w: u32,
    pub frame_h: u32,
    /// Extracted clip, when the pipeline ran an extractor first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_path: Option<PathBuf>,
    #[serde(flatten)]
    pub window: WindowGeometry,
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error("no score for clip {0:?}")]
    Missing(String),
    #[error("scorer response for {expected:?} names clip {found:?}")]
    WrongClip { expected: String, found: String },
    #[error("unreadable scorer response: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Invalid(#[from] RecordError),
    #[error("{0}")]
    Other(String),
}

pub trait ActionScorer: Sync {
    fn score(&self, request: &ScoreRequest) -> Result<ActionScore, ScoreError>;
}

impl<F> ActionScorer for F
where
    F: Fn(&ScoreRequest) -> Result<ActionScore, ScoreError> + Sync,
{
    fn score(&self, request: &ScoreRequest) -> Result<ActionScore, ScoreError> {
        self(request)
    }
}

/// Placeholders available to scorer templates.
pub const SCORER_PLACEHOLDERS: &[&str] = &["request", "clip_id", "clip_path"];

/// Runs an external command per window.
///
/// The request JSON is written to a temporary file (`{request}`) and also
/// piped to stdin. The last non-empty stdout line must be the JSON score
/// record for the same clip id.
#[derive(Debug, Clone)]
pub struct CommandScorer {
    pub template: CommandTemplate,
    pub timeout: Option<Duration>,
}

impl CommandScorer {
    pub fn new(template: CommandTemplate, timeout: Option<Duration>) -> Result<Self, CommandError> {
        template.check_placeholders(SCORER_PLACEHOLDERS)?;
        Ok(CommandScorer { template, timeout })
    }
}

impl ActionScorer for CommandScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ActionScore, ScoreError> {
        let program = self.template.program().to_string();
        let io = |source| CommandError::Io { program: program.clone(), source };
        let json = serde_json::to_vec(request).expect("request serializes");
        let mut file = tempfile::Builder::new().prefix("score-request-").suffix(".json").tempfile().map_err(io)?;
        file.write_all(&json).map_err(io)?;
        file.flush().map_err(io)?;

        let mut values = BTreeMap::new();
        values.insert("request", file.path().display().to_string());
        values.insert("clip_id", request.clip_id.clone());
        values.insert(
            "clip_path",
            request.clip_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        let stdout = self.template.run(&values, Some(&json), self.timeout)?;
        let text = String::from_utf8_lossy(&stdout);
        let line = text.lines().rev().find(|l| !l.trim().is_empty()).ok_or_else(|| ScoreError::BadResponse("empty output".into()))?;
        let score: ActionScore = serde_json::from_str(line).map_err(|e| ScoreError::BadResponse(e.to_string()))?;
        if score.clip_id != request.clip_id {
            return Err(ScoreError::WrongClip { expected: request.clip_id.clone(), found: score.clip_id });
        }
        Ok(score)
    }
}

/// Looks scores up in a precomputed JSON Lines file.
#[derive(Debug, Clone, Default)]
pub struct ScoreFileScorer {
    scores: HashMap<String, ActionScore>,
}

impl ScoreFileScorer {
    pub fn new(scores: Vec<ActionScore>) -> Self {
        ScoreFileScorer { scores: scores.into_iter().map(|s| (s.clip_id.clone(), s)).collect() }
    }

    pub fn parse(text: &str) -> Result<Self, RecordError> {
        Ok(Self::new(read_action_scores(text)?))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl ActionScorer for ScoreFileScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ActionScore, ScoreError> {
        self.scores.get(&request.clip_id).cloned().ok_or_else(|| ScoreError::Missing(request.clip_id.clone()))
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::vtt::Timecode;

    fn request() -> ScoreRequest {
        ScoreRequest {
            clip_id: "cam_cow3_000001000".into(),
            video_ref: "cam.mp4".into(),
            cow_id: CowId(3),
            out_size: 256,
            frame_w: 1920,
            frame_h: 1080,
            clip_path: None,
            window: WindowGeometry {
                start: Timecode(1000),
                end: Timecode(2000),
                first_frame: 30,
                last_frame: 59,
                crops: vec![],
            },
        }
    }

    #[test]
    fn command_scorer_reads_last_line() {
        let t = CommandTemplate::parse(
            r#"sh -c 'cat >/dev/null; test -s "$1" && echo noise && echo "{\"clip_id\":\"$2\",\"scores\":{\"Drinking\":1}}"' sh {request} {clip_id}"#,
        )
        .unwrap();
        let s = CommandScorer::new(t, Some(Duration::from_secs(10))).unwrap().score(&request()).unwrap();
        assert_eq!(s.clip_id, "cam_cow3_000001000");
        assert_eq!(s.scores["Drinking"], 1.0);
    }

    #[test]
    fn command_scorer_errors() {
        let wrong = CommandTemplate::parse(r#"sh -c 'echo "{\"clip_id\":\"x\",\"scores\":{}}"'"#).unwrap();
        let err = CommandScorer::new(wrong, None).unwrap().score(&request()).unwrap_err();
        assert!(matches!(err, ScoreError::WrongClip { .. }));

        let silent = CommandTemplate::parse("true").unwrap();
        assert!(matches!(CommandScorer::new(silent, None).unwrap().score(&request()), Err(ScoreError::BadResponse(_))));

        let slow = CommandTemplate::parse("sleep 5").unwrap();
        let err = CommandScorer::new(slow, Some(Duration::from_millis(100))).unwrap().score(&request()).unwrap_err();
        assert!(matches!(err, ScoreError::Command(CommandError::Timeout { .. })));

        assert!(CommandScorer::new(CommandTemplate::parse("x {crop}").unwrap(), None).is_err());
    }

    #[test]
    fn score_file_lookup() {
        let s = ScoreFileScorer::parse("{\"clip_id\":\"cam_cow3_000001000\",\"scores\":{\"Other\":1}}\n").unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.score(&request()).is_ok());
        let mut r = request();
        r.clip_id = "nope".into();
        assert!(matches!(s.score(&r), Err(ScoreError::Missing(_))));
    }
}
