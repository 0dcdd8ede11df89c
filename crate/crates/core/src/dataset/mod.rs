//! Dataset export: deterministic splits, COCO identification ground truth,
//! and Kinetics-style action clips.

pub mod coco;
pub mod kinetics;
pub mod split;

pub use coco::{export_coco, tracks_from_coco, CocoDocument, FrameMeta};
pub use kinetics::{export_kinetics, KineticsOptions, ManifestRow};
pub use split::{split, split_grouped, split_sizes, Split, SplitAssignment, SplitOrder, SplitRatios};
