//! Annotation, clip planning, dataset export and evaluation for multi-camera
//! cattle identification and behaviour recognition.
//!
//! The modules follow the data flow: GPS telemetry aligns camera clocks
//! ([`timesync`]), WebVTT cues carry behaviour labels ([`vtt`]), keyframe
//! boxes are interpolated into tracks ([`tracks`]), cues and tracks become
//! square crop windows ([`clipgeom`], [`extract`]), and the results are
//! exported ([`dataset`]) and scored ([`eval`]). [`pipeline`] runs detection
//! output through an external action scorer, and [`synth`] generates scenes
//! with known ground truth.

pub mod clipgeom;
pub mod dataset;
pub mod eval;
pub mod extract;
pub mod label;
pub mod pipeline;
pub mod synth;
pub mod timesync;
pub mod tracks;
pub mod vtt;

pub use label::{ActionLabel, CowId, LabelSet};
pub use timesync::{FrameIndex, FrameRate};
pub use tracks::{BBox, Track};
pub use vtt::{BehaviourCue, Timecode};
