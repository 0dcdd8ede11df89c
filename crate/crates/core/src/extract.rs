//! External command templates.
//!
//! A template is a shell-style command line with `{name}` placeholders, e.g.
//! `ffmpeg -y -ss {start_s} -i {input} -frames:v {frames} -vf {crop} {output}`.
//! It is split into arguments first and substituted per argument, so values
//! containing spaces never need quoting. Nothing is run through a shell.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::clipgeom::ClipSpec;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("command template is empty")]
    EmptyTemplate,
    #[error("command template {0:?} has unbalanced quotes")]
    BadQuoting(String),
    #[error("command template uses unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("failed to start {program:?}: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("{program:?} exited with {status}: {stderr}")]
    Failed { program: String, status: String, stderr: String },
    #[error("{program:?} timed out after {timeout:?}")]
    Timeout { program: String, timeout: Duration },
    #[error("{program:?} succeeded but did not create {path}")]
    MissingOutput { program: String, path: String },
    #[error("io error talking to {program:?}: {source}")]
    Io { program: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CommandTemplate {
    source: String,
    argv: Vec<String>,
}

impl CommandTemplate {
    pub fn parse(source: &str) -> Result<Self, CommandError> {
        let argv = shlex::split(source).ok_or_else(|| CommandError::BadQuoting(source.to_string()))?;
        if argv.is_empty() {
            return Err(CommandError::EmptyTemplate);
        }
        Ok(CommandTemplate { source: source.to_string(), argv })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn program(&self) -> &str {
        &self.argv[0]
    }

    /// Placeholder names used by the template: `{name}` with `name` made of
    /// ASCII letters, digits and `_`. Other braces are literal text.
    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for arg in &self.argv {
            let mut rest = arg.as_str();
            while let Some(open) = rest.find('{') {
                rest = &rest[open + 1..];
                let len = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
                if len > 0 && rest[len..].starts_with('}') {
                    names.push(rest[..len].to_string());
                    rest = &rest[len + 1..];
                }
            }
        }
        names.sort();
        names.dedup();
        names
    }

    /// Fail early if the template names anything outside `allowed`.
    pub fn check_placeholders(&self, allowed: &[&str]) -> Result<(), CommandError> {
        match self.placeholders().into_iter().find(|p| !allowed.contains(&p.as_str())) {
            Some(p) => Err(CommandError::UnknownPlaceholder(p)),
            None => Ok(()),
        }
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<Vec<String>, CommandError> {
        if let Some(p) = self.placeholders().into_iter().find(|p| !values.contains_key(p.as_str())) {
            return Err(CommandError::UnknownPlaceholder(p));
        }
        Ok(self
            .argv
            .iter()
            .map(|arg| values.iter().fold(arg.clone(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v)))
            .collect())
    }

    /// Run with substituted placeholders, optionally feeding `stdin`.
    /// Returns captured stdout on a zero exit status.
    pub fn run(
        &self,
        values: &BTreeMap<&str, String>,
        stdin: Option<&[u8]>,
        timeout: Option<Duration>,
    ) -> Result<Vec<u8>, CommandError> {
        let argv = self.render(values)?;
        let program = argv[0].clone();
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| CommandError::Spawn { program: program.clone(), source })?;

        if let (Some(data), Some(mut pipe)) = (stdin, child.stdin.take()) {
            // a scorer may exit without reading; a broken pipe is not our failure
            let _ = pipe.write_all(data);
        }
        // drain pipes on threads so a chatty child cannot block on a full pipe
        let mut out_pipe = child.stdout.take().expect("stdout piped");
        let mut err_pipe = child.stderr.take().expect("stderr piped");
        let out_thread = std::thread::spawn(move || {
            let mut buf = Vec::new();
            out_pipe.read_to_end(&mut buf).map(|_| buf)
        });
        let err_thread = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = err_pipe.read_to_end(&mut buf);
            buf
        });

        let status = match timeout {
            Some(limit) => match child
                .wait_timeout(limit)
                .map_err(|source| CommandError::Io { program: program.clone(), source })?
            {
                Some(status) => status,
                None => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(CommandError::Timeout { program, timeout: limit });
                }
            },
            None => child.wait().map_err(|source| CommandError::Io { program: program.clone(), source })?,
        };
        let stdout = out_thread
            .join()
            .expect("stdout reader panicked")
            .map_err(|source| CommandError::Io { program: program.clone(), source })?;
        let stderr = err_thread.join().expect("stderr reader panicked");
        if !status.success() {
            return Err(CommandError::Failed {
                program,
                status: status.to_string(),
                stderr: String::from_utf8_lossy(&stderr).trim().to_string(),
            });
        }
        Ok(stdout)
    }
}

impl TryFrom<String> for CommandTemplate {
    type Error = CommandError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        CommandTemplate::parse(&value)
    }
}

impl From<CommandTemplate> for String {
    fn from(t: CommandTemplate) -> Self {
        t.source
    }
}

/// Pulls the pixels of one planned clip out of its source video.
pub trait ClipExtractor: Sync {
    fn extract(&self, clip: &ClipSpec, input: &Path, output: &Path) -> Result<(), CommandError>;
}

/// Placeholders available to clip extraction templates.
pub const CLIP_PLACEHOLDERS: &[&str] = &[
    "input",
    "output",
    "clip_id",
    "start_frame",
    "end_frame",
    "frames",
    "start_s",
    "end_s",
    "duration_s",
    "crop",
    "out_size",
    "crop_plan",
];

/// Runs an external command per clip and checks that it produced `output`.
///
/// `{crop}` is the ffmpeg filter for the window's first frame; tools that
/// follow the per-frame boxes read `{crop_plan}`, a JSON file with the clip
/// spec written next to the output.
#[derive(Debug, Clone)]
pub struct CommandExtractor {
    pub template: CommandTemplate,
    pub timeout: Option<Duration>,
}

impl CommandExtractor {
    pub fn new(template: CommandTemplate, timeout: Option<Duration>) -> Result<Self, CommandError> {
        template.check_placeholders(CLIP_PLACEHOLDERS)?;
        Ok(CommandExtractor { template, timeout })
    }
}

impl ClipExtractor for CommandExtractor {
    fn extract(&self, clip: &ClipSpec, input: &Path, output: &Path) -> Result<(), CommandError> {
        let program = self.template.program().to_string();
        let io = |source| CommandError::Io { program: program.clone(), source };
        let mut values = BTreeMap::new();
        values.insert("input", input.display().to_string());
        values.insert("output", output.display().to_string());
        values.insert("clip_id", clip.clip_id.clone());
        values.insert("start_frame", clip.window.first_frame.to_string());
        values.insert("end_frame", clip.window.last_frame.to_string());
        values.insert("frames", clip.frame_count().to_string());
        values.insert("start_s", format!("{:.3}", clip.window.start.as_secs_f64()));
        values.insert("end_s", format!("{:.3}", clip.window.end.as_secs_f64()));
        values.insert("duration_s", format!("{:.3}", (clip.window.end.0 - clip.window.start.0) as f64 / 1000.0));
        values.insert("out_size", clip.out_size.to_string());
        let crop = clip.transforms().next().map(|t| t.ffmpeg_filter()).unwrap_or_default();
        values.insert("crop", crop);
        if self.template.placeholders().iter().any(|p| p == "crop_plan") {
            let plan_path = output.with_extension("crop.json");
            let json = serde_json::to_vec_pretty(clip).expect("clip spec serializes");
            std::fs::write(&plan_path, json).map_err(io)?;
            values.insert("crop_plan", plan_path.display().to_string());
        }
        self.template.run(&values, None, self.timeout)?;
        if !output.exists() {
            return Err(CommandError::MissingOutput { program, path: output.display().to_string() });
        }
        Ok(())
    }
}
