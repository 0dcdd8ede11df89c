//! Shared settings, read from a TOML file and overridden by global flags.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use herdpipe::dataset::split::SplitRatios;
use herdpipe::eval::detection::coco_iou_thresholds;
use herdpipe::extract::{CommandExtractor, CommandTemplate};
use herdpipe::pipeline::CommandScorer;
use herdpipe::vtt::ParseMode;
use herdpipe::{FrameRate, LabelSet};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub frame_rate: String,
    pub labels: Vec<String>,
    pub fallback_label: Option<String>,
    pub parse_mode: ParseMode,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    pub iou_thresholds: Vec<f64>,
    pub window_ms: u64,
    /// Window step of the pipeline.
    pub stride_ms: u64,
    /// Window step of dataset clip plans; the window length when unset.
    pub clip_stride_ms: Option<u64>,
    pub out_size: u32,
    pub gap_tolerance_ms: u64,
    pub min_event_ms: u64,
    pub extractor: Option<String>,
    pub extractor_timeout_s: Option<f64>,
    pub scorer: Option<String>,
    pub scorer_timeout_s: Option<f64>,
    pub scorer_retries: u32,
    pub overlay: String,
    pub workers: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            frame_rate: "30".into(),
            labels: LabelSet::default().labels().iter().map(|l| l.to_string()).collect(),
            fallback_label: Some(herdpipe::label::OTHER.into()),
            parse_mode: ParseMode::Strict,
            split_ratios: SplitRatios::default().0,
            split_seed: 0,
            iou_thresholds: coco_iou_thresholds(),
            window_ms: 1000,
            stride_ms: 500,
            clip_stride_ms: None,
            out_size: 256,
            gap_tolerance_ms: 500,
            min_event_ms: 0,
            extractor: None,
            extractor_timeout_s: None,
            scorer: None,
            scorer_timeout_s: Some(60.0),
            scorer_retries: 0,
            overlay: "ffmpeg -nostdin -loglevel error -y -ss {time_s} -i {input} -frames:v 1 -vf {filter} {output}".into(),
            workers: 0,
        }
    }
}

/// Flags that override configuration keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Configuration file (TOML)
    #[arg(long, global = true, env = "HERDPIPE_CONFIG", value_name = "PATH")]
    pub config: Option<std::path::PathBuf>,
    /// Video frame rate, `N` or `N/D` (e.g. 30000/1001)
    #[arg(long, global = true, value_name = "RATE")]
    pub frame_rate: Option<String>,
    /// Behaviour labels, comma separated
    #[arg(long, global = true, value_delimiter = ',', value_name = "LABELS")]
    pub labels: Option<Vec<String>>,
    /// Label used for unknown behaviours in lenient mode
    #[arg(long, global = true, value_name = "LABEL")]
    pub fallback_label: Option<String>,
    /// Annotation parse mode
    #[arg(long, global = true, value_enum, value_name = "MODE")]
    pub parse_mode: Option<ModeArg>,
    /// Train, validation and test ratios, comma separated
    #[arg(long, global = true, value_delimiter = ',', value_name = "R")]
    pub split_ratios: Option<Vec<f64>>,
    /// Seed of the split shuffle
    #[arg(long, global = true, value_name = "SEED")]
    pub split_seed: Option<u64>,
    /// IoU thresholds for detection AP, comma separated
    #[arg(long, global = true, value_delimiter = ',', value_name = "T")]
    pub iou_thresholds: Option<Vec<f64>>,
    /// Clip window length in ms
    #[arg(long, global = true, value_name = "MS")]
    pub window_ms: Option<u64>,
    /// Step between window starts in ms
    #[arg(long, global = true, value_name = "MS")]
    pub stride_ms: Option<u64>,
    /// Step between dataset clip windows in ms (default: the window length)
    #[arg(long, global = true, value_name = "MS")]
    pub clip_stride_ms: Option<u64>,
    /// Side of the square output clips in px
    #[arg(long, global = true, value_name = "PX")]
    pub out_size: Option<u32>,
    /// Longest detection gap bridged inside one tracklet, ms
    #[arg(long, global = true, value_name = "MS")]
    pub gap_tolerance_ms: Option<u64>,
    /// Pipeline events shorter than this are dropped, ms
    #[arg(long, global = true, value_name = "MS")]
    pub min_event_ms: Option<u64>,
    /// Clip extraction command template
    #[arg(long, global = true, value_name = "TEMPLATE")]
    pub extractor: Option<String>,
    /// Per-clip extraction timeout, seconds
    #[arg(long, global = true, value_name = "S")]
    pub extractor_timeout_s: Option<f64>,
    /// Action scorer command template
    #[arg(long, global = true, value_name = "TEMPLATE")]
    pub scorer: Option<String>,
    /// Per-window scorer timeout, seconds
    #[arg(long, global = true, value_name = "S")]
    pub scorer_timeout_s: Option<f64>,
    /// Extra scorer attempts after a failure
    #[arg(long, global = true, value_name = "N")]
    pub scorer_retries: Option<u32>,
    /// Overlay rendering command template
    #[arg(long, global = true, value_name = "TEMPLATE")]
    pub overlay: Option<String>,
    /// Worker threads, 0 for one per core
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Strict,
    Lenient,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Defaults, then the config file, then flags; validated.
    pub fn load(o: &Overrides) -> Result<Self> {
        let mut c = match &o.config {
            Some(path) => Self::from_file(path)?,
            None => Config::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = &o.$field { c.$field = v.clone(); } )* };
        }
        set!(frame_rate, labels, split_seed, iou_thresholds, window_ms, stride_ms, out_size, gap_tolerance_ms);
        set!(min_event_ms, scorer_retries, overlay, workers);
        if let Some(v) = &o.fallback_label {
            c.fallback_label = Some(v.clone());
        }
        if let Some(m) = o.parse_mode {
            c.parse_mode = match m {
                ModeArg::Strict => ParseMode::Strict,
                ModeArg::Lenient => ParseMode::Lenient,
            };
        }
        if let Some(r) = &o.split_ratios {
            c.split_ratios = r.as_slice().try_into().map_err(|_| anyhow::anyhow!("--split-ratios takes three values"))?;
        }
        if o.clip_stride_ms.is_some() {
            c.clip_stride_ms = o.clip_stride_ms;
        }
        if o.extractor.is_some() {
            c.extractor = o.extractor.clone();
        }
        if o.extractor_timeout_s.is_some() {
            c.extractor_timeout_s = o.extractor_timeout_s;
        }
        if o.scorer.is_some() {
            c.scorer = o.scorer.clone();
        }
        if o.scorer_timeout_s.is_some() {
            c.scorer_timeout_s = o.scorer_timeout_s;
        }
        c.validate()?;
        Ok(c)
    }

    fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.frame_rate()?;
        self.label_set()?;
        self.ratios()?;
        if self.iou_thresholds.is_empty() || self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            bail!("iou_thresholds must be non-empty and within (0, 1]");
        }
        if self.window_ms == 0 || self.stride_ms == 0 || self.clip_stride_ms == Some(0) || self.out_size == 0 {
            bail!("window_ms, stride_ms, clip_stride_ms and out_size must be positive");
        }
        for t in [self.extractor_timeout_s, self.scorer_timeout_s].into_iter().flatten() {
            if !(t > 0.0 && t.is_finite()) {
                bail!("timeouts must be positive");
            }
        }
        self.extractor()?;
        self.scorer()?;
        CommandTemplate::parse(&self.overlay)
            .and_then(|t| t.check_placeholders(crate::commands::run::OVERLAY_PLACEHOLDERS).map(|_| t))
            .context("overlay")?;
        Ok(())
    }

    pub fn clip_stride_ms(&self) -> u64 {
        self.clip_stride_ms.unwrap_or(self.window_ms)
    }

    pub fn frame_rate(&self) -> Result<FrameRate> {
        self.frame_rate.parse().map_err(|e| anyhow::anyhow!("frame_rate {:?}: {e}", self.frame_rate))
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::new(&self.labels, self.fallback_label.as_deref()).map_err(|e| anyhow::anyhow!("labels: {e}"))
    }

    pub fn ratios(&self) -> Result<SplitRatios> {
        let [a, b, c] = self.split_ratios;
        SplitRatios::new(a, b, c).context("split_ratios")
    }

    pub fn extractor(&self) -> Result<Option<CommandExtractor>> {
        self.extractor
            .as_deref()
            .map(|s| {
                let t = CommandTemplate::parse(s)?;
                CommandExtractor::new(t, self.extractor_timeout_s.map(Duration::from_secs_f64))
            })
            .transpose()
            .context("extractor")
    }

    pub fn scorer(&self) -> Result<Option<CommandScorer>> {
        self.scorer
            .as_deref()
            .map(|s| {
                let t = CommandTemplate::parse(s)?;
                CommandScorer::new(t, self.scorer_timeout_s.map(Duration::from_secs_f64))
            })
            .transpose()
            .context("scorer")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::parse("frame_rate = \"25\"\nwindow_ms = 2000\n").is_ok());
        assert!(Config::parse("frame_rat = \"25\"\n").is_err());
    }

    #[test]
    fn bad_values_rejected() {
        for text in [
            "frame_rate = \"0\"",
            "split_ratios = [0.5, 0.5, 0.5]",
            "iou_thresholds = [1.5]",
            "labels = [\"A\", \"A\"]",
            "fallback_label = \"Sleeping\"",
            "extractor = \"ffmpeg {bogus}\"",
            "window_ms = 0",
        ] {
            assert!(Config::parse(text).unwrap().validate().is_err(), "{text}");
        }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "frame_rate = \"25\"\nsplit_seed = 3\n").unwrap();
        let o = Overrides { config: Some(path), split_seed: Some(9), ..Default::default() };
        let c = Config::load(&o).unwrap();
        assert_eq!(c.frame_rate, "25");
        assert_eq!(c.split_seed, 9);
    }
}
