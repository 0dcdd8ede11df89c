use std::path::{Path, PathBuf};

use clap::Args;
use herdpipe::timesync::{align_frame, fit_clock_with_tolerance, parse_gps_csv, ClockMap, GpsColumns, DEFAULT_RATE_TOLERANCE};
use serde::Serialize;

use crate::config::Config;
use crate::util::{read_text, to_json, write_text, CmdResult, OrFail};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// GPS telemetry CSV (e.g. from gpmd2csv)
    pub gps: PathBuf,
    /// Column holding stream time in ms
    #[arg(long, default_value = "cts")]
    pub stream_col: String,
    /// Column holding the UTC timestamp
    #[arg(long, default_value = "date")]
    pub date_col: String,
    #[arg(long, default_value = "lat")]
    pub lat_col: String,
    #[arg(long, default_value = "lon")]
    pub lon_col: String,
    /// Fail on malformed rows instead of skipping them
    #[arg(long)]
    pub strict: bool,
    /// Largest accepted |rate - 1|
    #[arg(long, default_value_t = DEFAULT_RATE_TOLERANCE)]
    pub rate_tolerance: f64,
    /// Where to write the clock map JSON (stdout if omitted)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct FitReport {
    map: ClockMap,
    residual_rms_ms: f64,
    samples: usize,
    malformed_rows: Vec<u64>,
}

pub fn fit(a: FitArgs, config: &Config) -> CmdResult {
    let text = read_text(&a.gps)?;
    let columns = GpsColumns { stream_time: a.stream_col, date: a.date_col, latitude: a.lat_col, longitude: a.lon_col };
    let track = parse_gps_csv(&text, &columns, a.strict).or_invalid(a.gps.display())?;
    for m in &track.malformed {
        log::warn!("{}: skipped line {}: {}", a.gps.display(), m.line, m.reason);
    }
    let frame_rate = config.frame_rate().or_invalid("config")?;
    let fit = fit_clock_with_tolerance(&track.samples, frame_rate, a.rate_tolerance).or_invalid("clock fit")?;
    eprintln!(
        "fitted {} samples: rate {:.9}, residual rms {:.3} ms, {} malformed rows skipped",
        fit.samples,
        fit.map.rate,
        fit.residual_rms_ms,
        track.malformed.len()
    );
    let report = FitReport {
        map: fit.map,
        residual_rms_ms: fit.residual_rms_ms,
        samples: fit.samples,
        malformed_rows: track.malformed.iter().map(|m| m.line).collect(),
    };
    write_text(a.out.as_deref(), &to_json(&report))
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Clock map of the source camera (output of sync-fit)
    #[arg(long)]
    pub src: PathBuf,
    /// Clock map of the destination camera
    #[arg(long)]
    pub dst: PathBuf,
    /// Source frame indices
    #[arg(required = true)]
    pub frames: Vec<u64>,
}

#[derive(serde::Deserialize)]
struct ClockFile {
    map: ClockMap,
}

pub fn read_clock(path: &Path) -> Result<ClockMap, crate::util::Failure> {
    let text = read_text(path)?;
    // either a bare map or a sync-fit report
    let map = serde_json::from_str::<ClockFile>(&text)
        .map(|f| f.map)
        .or_else(|_| serde_json::from_str::<ClockMap>(&text))
        .or_invalid(path.display())?;
    map.validate(DEFAULT_RATE_TOLERANCE).or_invalid(path.display())?;
    Ok(map)
}

pub fn align(a: AlignArgs, _config: &Config) -> CmdResult {
    let src = read_clock(&a.src)?;
    let dst = read_clock(&a.dst)?;
    let mut out = String::from("src_frame\tdst_frame\n");
    for f in a.frames {
        let g = align_frame(&src, &dst, f).or_invalid(format!("frame {f}"))?;
        out.push_str(&format!("{f}\t{g}\n"));
    }
    write_text(None, &out)
}
