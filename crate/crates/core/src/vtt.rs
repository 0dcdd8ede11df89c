//! Behaviour annotations stored as WebVTT cues.
//!
//! Each cue carries one line of payload, `Cow <id> <Label>`, for example
//!
//! ```text
//! 0:05:11.000 --> 0:05:23.000
//! Cow 2 Drinking
//! ```
//!
//! Only the subset needed for that is supported: an optional `WEBVTT` header,
//! optional cue identifiers and `NOTE` blocks, and `H:MM:SS.mmm` timecodes.
//! Blank lines between cues are optional.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{ActionLabel, CowId, LabelSet};

/// Milliseconds since the start of a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timecode(pub u64);

impl Timecode {
    pub fn from_secs(s: u64) -> Self {
        Timecode(s * 1000)
    }

    pub fn ms(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for Timecode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = self.0 % 1000;
        let total_s = self.0 / 1000;
        write!(f, "{}:{:02}:{:02}.{:03}", total_s / 3600, (total_s / 60) % 60, total_s % 60, ms)
    }
}

impl FromStr for Timecode {
    type Err = String;

    /// Accepts `H:MM:SS.mmm` (any number of hour digits) and `MM:SS.mmm`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed timecode {s:?}");
        let (clock, frac) = s.split_once('.').ok_or_else(bad)?;
        if frac.len() != 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let parts: Vec<&str> = clock.split(':').collect();
        let (h, m, sec) = match parts.as_slice() {
            [h, m, sec] => (*h, *m, *sec),
            [m, sec] => ("0", *m, *sec),
            _ => return Err(bad()),
        };
        let digits = |v: &str, exact: Option<usize>| {
            let ok = !v.is_empty() && v.bytes().all(|b| b.is_ascii_digit()) && exact.is_none_or(|n| v.len() == n);
            if ok { v.parse::<u64>().map_err(|_| bad()) } else { Err(bad()) }
        };
        let (h, m, sec) = (digits(h, None)?, digits(m, Some(2))?, digits(sec, Some(2))?);
        if m >= 60 || sec >= 60 {
            return Err(bad());
        }
        let ms = frac.parse::<u64>().map_err(|_| bad())?;
        Ok(Timecode(((h * 60 + m) * 60 + sec) * 1000 + ms))
    }
}

/// One behaviour annotation: a cow doing one action over `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviourCue {
    pub cow_id: CowId,
    pub action: ActionLabel,
    pub start: Timecode,
    pub end: Timecode,
}

impl BehaviourCue {
    pub fn contains(&self, t: Timecode) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, other: &BehaviourCue) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn duration_ms(&self) -> u64 {
        self.end.0 - self.start.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Unknown labels are errors.
    #[default]
    Strict,
    /// Unknown labels become the label set's fallback, with a warning.
    Lenient,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VttError {
    #[error("line {line}: malformed cue timing {text:?}: {reason}")]
    BadTiming { line: usize, text: String, reason: String },
    #[error("line {line}: cue payload {text:?} does not match `Cow <id> <label>`")]
    BadPayload { line: usize, text: String },
    #[error("line {line}: cue is missing its payload line")]
    MissingPayload { line: usize },
    #[error("line {line}: cue start {start} is not before end {end}")]
    EmptyInterval { line: usize, start: Timecode, end: Timecode },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: unknown label {label:?} and the label set has no fallback")]
    NoFallback { line: usize, label: String },
    #[error("line {line}: unexpected text {text:?} outside a cue")]
    Stray { line: usize, text: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedVtt {
    pub cues: Vec<BehaviourCue>,
    pub warnings: Vec<ParseWarning>,
}

const ARROW: &str = "-->";

/// Parse a behaviour-annotation WebVTT document.
pub fn parse_vtt(text: &str, labels: &LabelSet, mode: ParseMode) -> Result<ParsedVtt, VttError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let lines: Vec<&str> = text.lines().collect();
    let mut cues = Vec::new();
    let mut warnings = Vec::new();
    let mut i = 0;

    // header block: `WEBVTT` plus any header lines up to the first blank line
    if lines.first().is_some_and(|l| l.trim_end().starts_with("WEBVTT")) {
        i = 1;
        while i < lines.len() && !lines[i].trim().is_empty() && !lines[i].contains(ARROW) {
            i += 1;
        }
    }

    while i < lines.len() {
        let line = lines[i].trim();
        let lineno = i + 1;
        if line.is_empty() {
            i += 1;
            continue;
        }
        if line == "NOTE" || line.starts_with("NOTE ") || line.starts_with("NOTE\t") {
            while i < lines.len() && !lines[i].trim().is_empty() {
                i += 1;
            }
            continue;
        }
        if !line.contains(ARROW) {
            // cue identifier, only valid directly before a timing line
            if lines.get(i + 1).is_some_and(|next| next.contains(ARROW)) {
                i += 1;
                continue;
            }
            return Err(VttError::Stray { line: lineno, text: line.to_string() });
        }

        let (start, end) = parse_timing(line, lineno)?;
        if start >= end {
            return Err(VttError::EmptyInterval { line: lineno, start, end });
        }
        let payload = lines
            .get(i + 1)
            .map(|l| l.trim())
            .filter(|l| !l.is_empty() && !l.contains(ARROW))
            .ok_or(VttError::MissingPayload { line: lineno })?;
        let (cow_id, name) = parse_payload(payload, lineno + 1)?;
        let action = match labels.get(name) {
            Some(l) => l.clone(),
            None if mode == ParseMode::Lenient => {
                let fallback = labels
                    .fallback()
                    .ok_or_else(|| VttError::NoFallback { line: lineno + 1, label: name.to_string() })?;
                warnings.push(ParseWarning {
                    line: lineno + 1,
                    message: format!("unknown label {name:?} replaced by {fallback}"),
                });
                fallback.clone()
            }
            None => return Err(VttError::UnknownLabel { line: lineno + 1, label: name.to_string() }),
        };
        cues.push(BehaviourCue { cow_id, action, start, end });
        i += 2;
    }
    Ok(ParsedVtt { cues, warnings })
}

fn parse_timing(line: &str, lineno: usize) -> Result<(Timecode, Timecode), VttError> {
    let err = |reason: String| VttError::BadTiming { line: lineno, text: line.to_string(), reason };
    let (lhs, rhs) = line.split_once(ARROW).ok_or_else(|| err("missing arrow".into()))?;
    let start = lhs.trim().parse::<Timecode>().map_err(err)?;
    // cue settings may follow the end timecode
    let end_text = rhs.split_whitespace().next().ok_or_else(|| err("missing end timecode".into()))?;
    let end = end_text.parse::<Timecode>().map_err(err)?;
    Ok((start, end))
}

fn parse_payload(payload: &str, lineno: usize) -> Result<(CowId, &str), VttError> {
    let bad = || VttError::BadPayload { line: lineno, text: payload.to_string() };
    let mut parts = payload.split_whitespace();
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some("Cow"), Some(id), Some(label), None) => Ok((id.parse::<CowId>().map_err(|_| bad())?, label)),
        _ => Err(bad()),
    }
}

/// Render cues as a WebVTT document. Inverse of [`parse_vtt`].
pub fn serialize_vtt(cues: &[BehaviourCue]) -> String {
    let mut out = String::from("WEBVTT\n");
    for cue in cues {
        out.push_str(&format!("\n{} --> {}\nCow {} {}\n", cue.start, cue.end, cue.cow_id, cue.action));
    }
    out
}

/// Cues active at `t`, i.e. with `start <= t < end`, in document order.
pub fn active_cues(cues: &[BehaviourCue], t: Timecode) -> Vec<&BehaviourCue> {
    cues.iter().filter(|c| c.contains(t)).collect()
}

/// Two cues of one cow that overlap in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CuePair {
    pub cow_id: CowId,
    /// Indices into the validated cue list, `first < second`.
    pub first: usize,
    pub second: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// Same cow, overlapping, different actions.
    pub conflicts: Vec<CuePair>,
    /// Same cow, overlapping, same action: could be merged into one cue.
    pub merge_candidates: Vec<CuePair>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.conflicts.is_empty()
    }
}

/// Check that no cow is annotated with two different actions at once.
pub fn validate_cues(cues: &[BehaviourCue]) -> ValidationReport {
    let mut per_cow: BTreeMap<CowId, Vec<usize>> = BTreeMap::new();
    for (i, c) in cues.iter().enumerate() {
        per_cow.entry(c.cow_id).or_default().push(i);
    }
    let mut report = ValidationReport::default();
    for (cow_id, mut idx) in per_cow {
        idx.sort_by_key(|&i| (cues[i].start, i));
        // sweep: after sorting by start, a cue can only overlap later cues
        // whose start precedes its end
        for (k, &a) in idx.iter().enumerate() {
            for &b in &idx[k + 1..] {
                if cues[b].start >= cues[a].end {
                    break;
                }
                let pair = CuePair { cow_id, first: a.min(b), second: a.max(b) };
                if cues[a].action == cues[b].action {
                    report.merge_candidates.push(pair);
                } else {
                    report.conflicts.push(pair);
                }
            }
        }
    }
    report.conflicts.sort_by_key(|p| (p.first, p.second));
    report.merge_candidates.sort_by_key(|p| (p.first, p.second));
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING: &str = "0:05:11.000 --> 0:05:23.000\n\
                           Cow 2 Drinking\n\
                           0:05:17.000 --> 0:05:42.000\n\
                           Cow 4 Other\n\
                           0:05:22.000 --> 0:05:40.000\n\
                           Cow 8 Grazing\n";

    fn cue(cow: u32, action: &str, start_s: u64, end_s: u64) -> BehaviourCue {
        BehaviourCue {
            cow_id: CowId(cow),
            action: ActionLabel::new(action),
            start: Timecode::from_secs(start_s),
            end: Timecode::from_secs(end_s),
        }
    }

    fn parse(text: &str) -> Result<ParsedVtt, VttError> {
        parse_vtt(text, &LabelSet::default(), ParseMode::Strict)
    }

    #[test]
    fn timecode_format_and_parse() {
        assert_eq!(Timecode(311_000).to_string(), "0:05:11.000");
        assert_eq!(Timecode(3_723_004).to_string(), "1:02:03.004");
        assert_eq!("0:05:11.000".parse::<Timecode>().unwrap(), Timecode(311_000));
        assert_eq!("01:00:00.001".parse::<Timecode>().unwrap(), Timecode(3_600_001));
        assert_eq!("05:11.250".parse::<Timecode>().unwrap(), Timecode(311_250));
        for bad in ["0:5:11.000", "0:05:11", "0:05:61.000", "0:05:11.00", "a:05:11.000", "0:05:11.0000"] {
            assert!(bad.parse::<Timecode>().is_err(), "{bad}");
        }
    }

    #[test]
    fn parses_listing_without_header() {
        let parsed = parse(LISTING).unwrap();
        assert_eq!(parsed.cues, vec![
            cue(2, "Drinking", 311, 323),
            cue(4, "Other", 317, 342),
            cue(8, "Grazing", 322, 340)
        ]);
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn parses_full_document() {
        let text = "WEBVTT - behaviours\nKind: captions\n\nNOTE annotated in VLC\nsecond note line\n\n\
                    intro\n0:00:01.500 --> 0:00:02.000 align:start\nCow 1 Grazing\r\n";
        let parsed = parse(text).unwrap();
        assert_eq!(parsed.cues.len(), 1);
        assert_eq!(parsed.cues[0].start, Timecode(1500));
        assert_eq!(parsed.cues[0].end, Timecode(2000));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse("0:00:05.000 --> 0:00:05.000\nCow 1 Other"), Err(VttError::EmptyInterval { .. })));
        assert!(matches!(parse("0:00:05.000 -> 0:00:06.000\nCow 1 Other"), Err(VttError::Stray { .. })));
        assert!(matches!(parse("0:00:05.000 --> 0:0:06.000\nCow 1 Other"), Err(VttError::BadTiming { .. })));
        assert!(matches!(parse("0:00:05.000 --> 0:00:06.000\nBull 1 Other"), Err(VttError::BadPayload { .. })));
        assert!(matches!(parse("0:00:05.000 --> 0:00:06.000\nCow 0 Other"), Err(VttError::BadPayload { .. })));
        assert!(matches!(parse("0:00:05.000 --> 0:00:06.000\n"), Err(VttError::MissingPayload { .. })));
        assert!(matches!(
            parse("0:00:05.000 --> 0:00:06.000\nCow 1 Sleeping"),
            Err(VttError::UnknownLabel { line: 2, .. })
        ));
    }

    #[test]
    fn lenient_mode_maps_unknown_to_fallback() {
        let parsed = parse_vtt(
            "0:00:05.000 --> 0:00:06.000\nCow 1 Drinkng\n",
            &LabelSet::default(),
            ParseMode::Lenient,
        )
        .unwrap();
        assert_eq!(parsed.cues[0].action.as_str(), "Other");
        assert_eq!(parsed.warnings.len(), 1);
        let no_fallback = LabelSet::new(["Drinking"], None).unwrap();
        assert!(matches!(
            parse_vtt("0:00:05.000 --> 0:00:06.000\nCow 1 X\n", &no_fallback, ParseMode::Lenient),
            Err(VttError::NoFallback { .. })
        ));
    }

    #[test]
    fn serialize_examples() {
        assert_eq!(serialize_vtt(&[]), "WEBVTT\n");
        let text = serialize_vtt(&[cue(2, "Drinking", 311, 323)]);
        assert!(text.contains("0:05:11.000 --> 0:05:23.000\nCow 2 Drinking"));
        assert_eq!(parse(&text).unwrap().cues, vec![cue(2, "Drinking", 311, 323)]);
        assert!(parse(&serialize_vtt(&[])).unwrap().cues.is_empty());
    }

    #[test]
    fn active_cue_queries() {
        let cues = parse(LISTING).unwrap().cues;
        let at = |s: u64| active_cues(&cues, Timecode::from_secs(s)).into_iter().cloned().collect::<Vec<_>>();
        assert_eq!(at(325), vec![cue(4, "Other", 317, 342), cue(8, "Grazing", 322, 340)]);
        assert!(at(10).is_empty());
        // half-open: the Cow 2 cue ends at 0:05:23
        assert!(!at(323).contains(&cue(2, "Drinking", 311, 323)));
        assert!(at(322).contains(&cue(2, "Drinking", 311, 323)));
    }

    #[test]
    fn validation() {
        let cues = parse(LISTING).unwrap().cues;
        assert!(validate_cues(&cues).is_clean());

        let report = validate_cues(&[cue(2, "Drinking", 0, 10), cue(2, "Grazing", 5, 15)]);
        assert_eq!(report.conflicts, vec![CuePair { cow_id: CowId(2), first: 0, second: 1 }]);

        let report = validate_cues(&[cue(2, "Drinking", 0, 10), cue(2, "Drinking", 5, 15)]);
        assert!(report.conflicts.is_empty());
        assert_eq!(report.merge_candidates.len(), 1);

        // abutting cues do not overlap
        assert_eq!(validate_cues(&[cue(3, "Drinking", 0, 10), cue(3, "Grazing", 10, 15)]), ValidationReport::default());
    }
}
