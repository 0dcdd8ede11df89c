//! Per-camera clock models built from embedded GPS time.
//!
//! Each camera records `cts` (stream milliseconds since the recording began)
//! next to a GPS UTC timestamp. An affine fit `wall = offset + rate * stream`
//! over every sample gives a [`ClockMap`], which converts frame indices to
//! wall-clock time and aligns frames between cameras to the nearest frame.

use std::fmt;
use std::str::FromStr;

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Zero-based frame number within one recording.
pub type FrameIndex = u64;

#[derive(Debug, Error, PartialEq)]
pub enum TimeSyncError {
    #[error("GPS CSV is empty")]
    Empty,
    #[error("GPS CSV header is missing column {0:?}")]
    MissingColumn(String),
    #[error("GPS CSV has no valid rows ({malformed} malformed)")]
    NoValidRows { malformed: usize },
    #[error("line {line}: stream time {stream_time} ms does not increase (previous {previous} ms)")]
    NonMonotonic {
        line: u64,
        stream_time: u64,
        previous: u64,
    },
    #[error("line {line}: unparseable timestamp {value:?}")]
    UnparseableTimestamp { line: u64, value: String },
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("clock fit needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("clock fit is degenerate: all samples share one stream time")]
    Degenerate,
    #[error("clock rate {rate} outside sanity bound 1 ± {tolerance}")]
    RateOutOfBounds { rate: f64, tolerance: f64 },
    #[error("invalid clock map: {0}")]
    InvalidClock(String),
    #[error("invalid frame rate {0:?}")]
    InvalidFrameRate(String),
    #[error("frame {frame} maps before the start of the destination recording")]
    BeforeRecordingStart { frame: FrameIndex },
}

/// Frames per second as an exact ratio, e.g. `30/1` or `30000/1001`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

impl FrameRate {
    pub const FPS_30: FrameRate = FrameRate { num: 30, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self, TimeSyncError> {
        if num == 0 || den == 0 {
            return Err(TimeSyncError::InvalidFrameRate(format!("{num}/{den}")));
        }
        Ok(FrameRate { num, den })
    }

    pub fn fps(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Milliseconds per frame.
    pub fn period_ms(self) -> f64 {
        1000.0 * self.den as f64 / self.num as f64
    }

    /// Start of `frame` in stream milliseconds.
    pub fn frame_to_ms(self, frame: FrameIndex) -> f64 {
        frame as f64 * 1000.0 * self.den as f64 / self.num as f64
    }

    /// Fractional frame position of a stream time.
    pub fn ms_to_frame(self, ms: f64) -> f64 {
        ms * self.num as f64 / (1000.0 * self.den as f64)
    }

    /// Number of frames covering `ms` milliseconds, rounded to nearest.
    pub fn frames_in(self, ms: u64) -> u64 {
        // exact integer rounding: (ms * num + 500 * den) / (1000 * den)
        let num = ms as u128 * self.num as u128 + 500 * self.den as u128;
        (num / (1000 * self.den as u128)) as u64
    }
}

impl Default for FrameRate {
    fn default() -> Self {
        FrameRate::FPS_30
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for FrameRate {
    type Err = TimeSyncError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TimeSyncError::InvalidFrameRate(s.to_string());
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        FrameRate::new(num, den)
    }
}

/// One GPS fix aligned to the camera's stream clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsSample {
    /// Milliseconds since the recording started.
    pub stream_time: u64,
    /// UTC epoch milliseconds.
    pub wall_clock: i64,
    pub latitude: f64,
    pub longitude: f64,
}

/// Column names of the GPS CSV. Defaults follow the gpmd2csv layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpsColumns {
    pub stream_time: String,
    pub date: String,
    pub latitude: String,
    pub longitude: String,
}

impl Default for GpsColumns {
    fn default() -> Self {
        GpsColumns {
            stream_time: "cts".into(),
            date: "date".into(),
            latitude: "lat".into(),
            longitude: "lon".into(),
        }
    }
}

/// A row that failed the row grammar and was skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsTrack {
    pub samples: Vec<GpsSample>,
    pub malformed: Vec<MalformedRow>,
}

/// Parse a GPS CSV document.
///
/// Rows that fail the grammar (wrong field count, bad number, bad date) are
/// skipped and listed in [`GpsTrack::malformed`]. With `strict` set, the first
/// such row is an error instead. Stream times must strictly increase.
pub fn parse_gps_csv(text: &str, columns: &GpsColumns, strict: bool) -> Result<GpsTrack, TimeSyncError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(TimeSyncError::Empty);
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| TimeSyncError::MalformedRow { line: 1, reason: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TimeSyncError::MissingColumn(name.to_string()))
    };
    let (i_cts, i_date, i_lat, i_lon) = (
        col(&columns.stream_time)?,
        col(&columns.date)?,
        col(&columns.latitude)?,
        col(&columns.longitude)?,
    );

    let mut samples: Vec<GpsSample> = Vec::new();
    let mut malformed = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let fallback_line = row as u64 + 2;
        let parsed = match record {
            Err(e) => Err(TimeSyncError::MalformedRow {
                line: e.position().map_or(fallback_line, |p| p.line()),
                reason: e.to_string(),
            }),
            Ok(rec) => {
                let line = rec.position().map_or(fallback_line, |p| p.line());
                parse_row(&rec, line, headers.len(), [i_cts, i_date, i_lat, i_lon]).map(|s| (line, s))
            }
        };
        match parsed {
            Ok((line, sample)) => {
                if let Some(prev) = samples.last() {
                    if sample.stream_time <= prev.stream_time {
                        return Err(TimeSyncError::NonMonotonic {
                            line,
                            stream_time: sample.stream_time,
                            previous: prev.stream_time,
                        });
                    }
                }
                samples.push(sample);
            }
            Err(e) if strict => return Err(e),
            Err(e) => {
                let line = match &e {
                    TimeSyncError::MalformedRow { line, .. } | TimeSyncError::UnparseableTimestamp { line, .. } => *line,
                    _ => fallback_line,
                };
                log::warn!("skipping GPS row: {e}");
                malformed.push(MalformedRow { line, reason: e.to_string() });
            }
        }
    }
    if samples.is_empty() {
        return Err(TimeSyncError::NoValidRows { malformed: malformed.len() });
    }
    Ok(GpsTrack { samples, malformed })
}

fn parse_row(rec: &csv::StringRecord, line: u64, width: usize, idx: [usize; 4]) -> Result<GpsSample, TimeSyncError> {
    let malformed = |reason: String| TimeSyncError::MalformedRow { line, reason };
    if rec.len() != width {
        return Err(malformed(format!("expected {width} fields, found {}", rec.len())));
    }
    let stream_time = rec[idx[0]]
        .parse::<u64>()
        .map_err(|_| malformed(format!("bad stream time {:?}", &rec[idx[0]])))?;
    let date = &rec[idx[1]];
    let wall_clock = DateTime::parse_from_rfc3339(date)
        .map_err(|_| TimeSyncError::UnparseableTimestamp { line, value: date.to_string() })?
        .timestamp_millis();
    let coord = |i: usize| {
        rec[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| malformed(format!("bad coordinate {:?}", &rec[i])))
    };
    Ok(GpsSample {
        stream_time,
        wall_clock,
        latitude: coord(idx[2])?,
        longitude: coord(idx[3])?,
    })
}

/// Default bound on `|rate - 1|`.
pub const DEFAULT_RATE_TOLERANCE: f64 = 0.01;

/// Affine map from a camera's stream time to UTC wall clock.
///
/// `wall_ms = offset_ms + rate * stream_ms`; frame `f` starts at stream time
/// `f * 1000 / fps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockMap {
    pub offset_ms: f64,
    pub rate: f64,
    pub frame_rate: FrameRate,
}

impl ClockMap {
    pub fn new(offset_ms: f64, rate: f64, frame_rate: FrameRate) -> Result<Self, TimeSyncError> {
        Self::with_tolerance(offset_ms, rate, frame_rate, DEFAULT_RATE_TOLERANCE)
    }

    pub fn with_tolerance(
        offset_ms: f64,
        rate: f64,
        frame_rate: FrameRate,
        tolerance: f64,
    ) -> Result<Self, TimeSyncError> {
        if !offset_ms.is_finite() || !rate.is_finite() || rate <= 0.0 {
            return Err(TimeSyncError::InvalidClock(format!("offset {offset_ms}, rate {rate}")));
        }
        FrameRate::new(frame_rate.num, frame_rate.den)?;
        if (rate - 1.0).abs() > tolerance {
            return Err(TimeSyncError::RateOutOfBounds { rate, tolerance });
        }
        Ok(ClockMap { offset_ms, rate, frame_rate })
    }

    /// Re-check the invariants, e.g. after deserializing.
    pub fn validate(&self, tolerance: f64) -> Result<(), TimeSyncError> {
        Self::with_tolerance(self.offset_ms, self.rate, self.frame_rate, tolerance).map(|_| ())
    }

    /// Stream-time identity clock: wall clock equals stream time.
    pub fn identity(frame_rate: FrameRate) -> Self {
        ClockMap { offset_ms: 0.0, rate: 1.0, frame_rate }
    }

    pub fn stream_to_wall(&self, stream_ms: f64) -> f64 {
        self.offset_ms + self.rate * stream_ms
    }

    pub fn wall_to_stream(&self, wall_ms: f64) -> f64 {
        (wall_ms - self.offset_ms) / self.rate
    }

    /// Unrounded wall clock of the start of `frame`.
    pub fn frame_to_wall_exact(&self, frame: FrameIndex) -> f64 {
        self.stream_to_wall(self.frame_rate.frame_to_ms(frame))
    }

    /// Wall clock of the start of `frame`, rounded to the nearest millisecond.
    pub fn frame_to_wall(&self, frame: FrameIndex) -> i64 {
        self.frame_to_wall_exact(frame).round() as i64
    }

    /// One frame period measured on the wall clock.
    pub fn wall_frame_period_ms(&self) -> f64 {
        self.rate * self.frame_rate.period_ms()
    }
}

/// Result of [`fit_clock`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockFit {
    pub map: ClockMap,
    pub residual_rms_ms: f64,
    pub samples: usize,
}

/// Least-squares affine fit of wall clock against stream time.
pub fn fit_clock(samples: &[GpsSample], frame_rate: FrameRate) -> Result<ClockFit, TimeSyncError> {
    fit_clock_with_tolerance(samples, frame_rate, DEFAULT_RATE_TOLERANCE)
}

pub fn fit_clock_with_tolerance(
    samples: &[GpsSample],
    frame_rate: FrameRate,
    tolerance: f64,
) -> Result<ClockFit, TimeSyncError> {
    if samples.len() < 2 {
        return Err(TimeSyncError::TooFewSamples(samples.len()));
    }
    // Centre on the first sample so epoch-sized wall clocks stay exact in i64
    // before the f64 accumulation.
    let t0 = samples[0].stream_time as i64;
    let w0 = samples[0].wall_clock;
    let n = samples.len() as f64;
    let (st, sw) = samples.iter().fold((0.0, 0.0), |(st, sw), s| {
        (st + (s.stream_time as i64 - t0) as f64, sw + (s.wall_clock - w0) as f64)
    });
    let (mt, mw) = (st / n, sw / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for s in samples {
        let dt = (s.stream_time as i64 - t0) as f64 - mt;
        let dw = (s.wall_clock - w0) as f64 - mw;
        sxx += dt * dt;
        sxy += dt * dw;
    }
    if sxx == 0.0 {
        return Err(TimeSyncError::Degenerate);
    }
    let rate = sxy / sxx;
    // wall - w0 = a + rate * (stream - t0)
    let a = mw - rate * mt;
    let offset_ms = w0 as f64 + a - rate * t0 as f64;
    let map = ClockMap::with_tolerance(offset_ms, rate, frame_rate, tolerance)?;

    let sse: f64 = samples
        .iter()
        .map(|s| {
            let predicted = a + rate * (s.stream_time as i64 - t0) as f64;
            let r = (s.wall_clock - w0) as f64 - predicted;
            r * r
        })
        .sum();
    Ok(ClockFit {
        map,
        residual_rms_ms: (sse / n).sqrt(),
        samples: samples.len(),
    })
}

/// Wall clock of `frame` in `src`, rounded to the nearest frame of `dst`.
///
/// Ties round toward the earlier frame.
pub fn align_frame(src: &ClockMap, dst: &ClockMap, frame: FrameIndex) -> Result<FrameIndex, TimeSyncError> {
    let wall = src.frame_to_wall_exact(frame);
    let position = dst.frame_rate.ms_to_frame(dst.wall_to_stream(wall));
    let nearest = (position - 0.5).ceil();
    if nearest < 0.0 {
        return Err(TimeSyncError::BeforeRecordingStart { frame });
    }
    Ok(nearest as FrameIndex)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(stream: u64, wall: i64) -> GpsSample {
        GpsSample { stream_time: stream, wall_clock: wall, latitude: 0.0, longitude: 0.0 }
    }

    #[test]
    fn parses_single_row() {
        let text = "cts,date,lat,lon\n0,2020-03-18T01:00:00.000Z,-30.5,151.6\n";
        let track = parse_gps_csv(text, &GpsColumns::default(), false).unwrap();
        let expected = DateTime::parse_from_rfc3339("2020-03-18T01:00:00Z").unwrap().timestamp_millis();
        assert_eq!(track.samples, vec![GpsSample {
            stream_time: 0,
            wall_clock: expected,
            latitude: -30.5,
            longitude: 151.6
        }]);
        assert!(track.malformed.is_empty());
    }

    #[test]
    fn wall_delta_matches_stream_delta() {
        let text = "cts,date,lat,lon\r\n0,2020-03-18T01:00:00.000Z,-30.5,151.6\r\n1000,2020-03-18T01:00:01.000Z,-30.5,151.6\r\n";
        let track = parse_gps_csv(text, &GpsColumns::default(), false).unwrap();
        assert_eq!(track.samples.len(), 2);
        assert_eq!(track.samples[1].wall_clock - track.samples[0].wall_clock, 1000);
    }

    #[test]
    fn corrupt_middle_row_is_reported() {
        let text = "cts,date,lat,lon\n\
                    0,2020-03-18T01:00:00.000Z,-30.5,151.6\n\
                    garbage\n\
                    2000,2020-03-18T01:00:02.000Z,-30.5,151.6\n";
        let track = parse_gps_csv(text, &GpsColumns::default(), false).unwrap();
        assert_eq!(track.samples.len(), 2);
        assert_eq!(track.malformed.len(), 1);
        assert_eq!(track.malformed[0].line, 3);
        assert!(parse_gps_csv(text, &GpsColumns::default(), true).is_err());
    }

    #[test]
    fn bad_date_in_strict_mode() {
        let text = "cts,date,lat,lon\n0,yesterday,-30.5,151.6\n";
        assert!(matches!(
            parse_gps_csv(text, &GpsColumns::default(), true),
            Err(TimeSyncError::UnparseableTimestamp { line: 2, .. })
        ));
        assert!(matches!(
            parse_gps_csv(text, &GpsColumns::default(), false),
            Err(TimeSyncError::NoValidRows { malformed: 1 })
        ));
    }

    #[test]
    fn csv_errors() {
        assert_eq!(parse_gps_csv("", &GpsColumns::default(), false), Err(TimeSyncError::Empty));
        assert!(matches!(
            parse_gps_csv("a,b\n1,2\n", &GpsColumns::default(), false),
            Err(TimeSyncError::MissingColumn(_))
        ));
        let text = "cts,date,lat,lon\n1000,2020-03-18T01:00:00Z,0,0\n1000,2020-03-18T01:00:01Z,0,0\n";
        assert!(matches!(
            parse_gps_csv(text, &GpsColumns::default(), false),
            Err(TimeSyncError::NonMonotonic { line: 3, .. })
        ));
    }

    #[test]
    fn custom_columns() {
        let cols = GpsColumns {
            stream_time: "ms".into(),
            date: "utc".into(),
            latitude: "la".into(),
            longitude: "lo".into(),
        };
        let text = "utc,ms,lo,la\n2020-03-18T01:00:00Z,5,151.6,-30.5\n";
        let track = parse_gps_csv(text, &cols, true).unwrap();
        assert_eq!(track.samples[0].stream_time, 5);
        assert_eq!(track.samples[0].latitude, -30.5);
    }

    #[test]
    fn two_point_fit() {
        let fit = fit_clock(&[sample(0, 1000), sample(10_000, 11_000)], FrameRate::FPS_30).unwrap();
        assert_eq!(fit.map.offset_ms, 1000.0);
        assert_eq!(fit.map.rate, 1.0);
        assert_eq!(fit.residual_rms_ms, 0.0);
    }

    #[test]
    fn drifting_fit() {
        // rate = (11010 - 1000) / 10000 = 1.001, offset = 1000
        let fit = fit_clock(&[sample(0, 1000), sample(10_000, 11_010)], FrameRate::FPS_30).unwrap();
        assert!((fit.map.rate - 1.001).abs() < 1e-12);
        assert!((fit.map.offset_ms - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_clock(&[sample(0, 0)], FrameRate::FPS_30), Err(TimeSyncError::TooFewSamples(1)));
        assert_eq!(
            fit_clock(&[sample(5, 0), sample(5, 10)], FrameRate::FPS_30),
            Err(TimeSyncError::Degenerate)
        );
        assert!(matches!(
            fit_clock(&[sample(0, 0), sample(1000, 1100)], FrameRate::FPS_30),
            Err(TimeSyncError::RateOutOfBounds { .. })
        ));
    }

    #[test]
    fn frame_to_wall_examples() {
        let m = ClockMap::new(1000.0, 1.0, FrameRate::FPS_30).unwrap();
        assert_eq!(m.frame_to_wall(0), 1000);
        assert_eq!(m.frame_to_wall(300), 11_000);
        let drift = ClockMap::new(1000.0, 1.001, FrameRate::FPS_30).unwrap();
        assert_eq!(drift.frame_to_wall(300), 11_010);
    }

    #[test]
    fn align_examples() {
        let src = ClockMap::new(5000.0, 1.0, FrameRate::FPS_30).unwrap();
        assert_eq!(align_frame(&src, &src, 42).unwrap(), 42);
        let dst = ClockMap::new(3000.0, 1.0, FrameRate::FPS_30).unwrap();
        assert_eq!(align_frame(&src, &dst, 300).unwrap(), 360);
        // destination starts 2 s later: source frame 0 predates it
        let late = ClockMap::new(7000.0, 1.0, FrameRate::FPS_30).unwrap();
        assert!(matches!(align_frame(&src, &late, 0), Err(TimeSyncError::BeforeRecordingStart { .. })));
    }

    #[test]
    fn align_ties_round_down() {
        // destination shifted by exactly half a frame at 10 fps (50 ms)
        let fr = FrameRate::new(10, 1).unwrap();
        let src = ClockMap::new(0.0, 1.0, fr).unwrap();
        let dst = ClockMap::new(-50.0, 1.0, fr).unwrap();
        // src frame 1 at wall 100 -> dst stream 150 -> position 1.5 -> 1
        assert_eq!(align_frame(&src, &dst, 1).unwrap(), 1);
    }

    #[test]
    fn frame_rate_parsing() {
        assert_eq!("30".parse::<FrameRate>().unwrap(), FrameRate::FPS_30);
        assert_eq!("30000/1001".parse::<FrameRate>().unwrap(), FrameRate { num: 30000, den: 1001 });
        assert!("0".parse::<FrameRate>().is_err());
        assert!("abc".parse::<FrameRate>().is_err());
        assert_eq!(FrameRate::FPS_30.frames_in(1000), 30);
        assert_eq!(FrameRate { num: 30000, den: 1001 }.frames_in(1000), 30);
    }
}
