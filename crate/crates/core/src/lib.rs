//! Task-oriented pre-training data pipeline for drivable-area segmentation.
//!
//! The crate turns segmenter proposals and classifier scores into coarse
//! drivable-area pseudo-labels, rewrites proposal labels against ground truth
//! to build classifier fine-tuning pairs, evaluates label quality, and keeps
//! the dataset manifests that tie the stages together.
//!
//! - [`mask`]: binary rasters, run-length codec, IoU and confusion counts
//! - [`metrics`]: accuracy, precision, recall, F1 and IoU, with aggregation
//! - [`select`]: top-K area filtering and drivable-mask selection
//! - [`scef`]: fine-tuning pair generation against ground truth
//! - [`manifest`]: dataset splits, pre-training pool and artifact paths
//! - [`protocol`]: JSON documents exchanged with external model backends
//! - [`synth`]: synthetic scenes and a simulated backend
//! - [`pipeline`]: batch commands built on the above
//! - [`imaging`]: mask files and evaluation overlays

pub mod imaging;
pub mod io;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod protocol;
pub mod scef;
pub mod select;
pub mod synth;

pub use manifest::{ArtifactKind, DatasetManifest, ManifestEntry, Split, SplitSizes};
pub use mask::{area, confusion, iou, rle_decode, rle_encode, MaskError, MaskRaster, RleMask};
pub use metrics::{
    aggregate_global, aggregate_per_image_mean, compute_metrics, ConfusionCounts, MetricReport,
};
pub use protocol::{ClassificationDocument, ProposalsDocument};
pub use scef::{generate_finetune_pairs, LabeledPair, Provenance, ScefRecord};
pub use select::{rank_by_area, select_drivable, Proposal, SelectionReason, SelectionResult};
pub use synth::{NoiseSpec, SceneSpec};
