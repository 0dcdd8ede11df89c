//! Detection (AP/AR) and action classification (confusion matrix) metrics,
//! plus the line-delimited prediction record formats they consume.

pub mod classification;
pub mod detection;
pub mod records;

pub use classification::{confusion, ClassificationReport, ConfusionMatrix};
pub use detection::{average_precision, match_detections, ApParams, Detection, DetectionReport, GroundTruth};
