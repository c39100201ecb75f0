//! Fine-tuning pair generation for the proposal classifier.
//!
//! Each proposal is scored by IoU against the ground-truth mask. The
//! best-scoring proposal is replaced by the ground-truth mask and relabeled
//! with the drivable class; every other proposal keeps its mask and zero-shot
//! label. The replacement happens even when no proposal overlaps the ground
//! truth; such records are counted separately in the batch summary.
//!
//! IoU ties go to the larger proposal, then to the smaller id.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{load_mask, ImagingError};
use crate::io::write_json_atomic;
use crate::manifest::{DatasetManifest, Split};
use crate::mask::{iou, MaskError, MaskRaster, RleMask};
use crate::protocol::{
    self, attach_classifications, BackendLayout, MissingClassification, ProtocolError,
};
use crate::select::{rank_by_area, Proposal};

#[derive(Debug, Error)]
pub enum ScefError {
    #[error("no proposals")]
    NoProposals,
    #[error("proposal {proposal_id}: {source}")]
    DimensionMismatch {
        proposal_id: String,
        #[source]
        source: MaskError,
    },
    #[error("missing {kind} for {image}: {}", path.display())]
    MissingArtifact {
        image: String,
        kind: &'static str,
        path: PathBuf,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScefError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::NoProposals => "no-proposals",
            Self::DimensionMismatch { .. } => "dimension-mismatch",
            Self::MissingArtifact { .. } => "missing-artifact",
            Self::Protocol(e) => e.kind(),
            Self::Imaging(_) => "imaging",
            Self::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClipZeroShot,
    GtReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub mask: RleMask,
    pub category: String,
    pub provenance: Provenance,
    /// IoU of the proposal that occupied this slot, before any replacement.
    pub iou_vs_gt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScefRecord {
    pub image: String,
    pub argmax_index: usize,
    pub scores: Vec<f64>,
    pub pairs: Vec<LabeledPair>,
}

impl ScefRecord {
    pub fn max_score(&self) -> f64 {
        self.scores[self.argmax_index]
    }
}

/// Builds the fine-tuning pairs for one image. Pairs keep the input order.
pub fn generate_finetune_pairs(
    props: &[Proposal],
    gt: &MaskRaster,
    drivable_class: &str,
) -> Result<ScefRecord, ScefError> {
    if props.is_empty() {
        return Err(ScefError::NoProposals);
    }
    let mut scored = Vec::with_capacity(props.len());
    for p in props {
        let raster = p.mask.decode();
        let s = iou(&raster, gt).map_err(|source| ScefError::DimensionMismatch {
            proposal_id: p.id.clone(),
            source,
        })?;
        scored.push((s, p.area()));
    }

    let mut best = 0;
    for i in 1..props.len() {
        let (s, a) = scored[i];
        let (bs, ba) = scored[best];
        let better = s
            .total_cmp(&bs)
            .then(a.cmp(&ba))
            .then_with(|| props[best].id.cmp(&props[i].id))
            .is_gt();
        if better {
            best = i;
        }
    }

    let gt_rle = gt.to_rle();
    let pairs = props
        .iter()
        .zip(&scored)
        .enumerate()
        .map(|(i, (p, &(s, _)))| {
            if i == best {
                LabeledPair {
                    mask: gt_rle.clone(),
                    category: drivable_class.to_string(),
                    provenance: Provenance::GtReplacement,
                    iou_vs_gt: s,
                }
            } else {
                LabeledPair {
                    mask: p.mask.clone(),
                    category: p.class_label.clone(),
                    provenance: Provenance::ClipZeroShot,
                    iou_vs_gt: s,
                }
            }
        })
        .collect();

    Ok(ScefRecord {
        image: props[0].source_image.clone(),
        argmax_index: best,
        scores: scored.into_iter().map(|(s, _)| s).collect(),
        pairs,
    })
}

/// Where [`batch_generate`] reads its inputs and writes its records.
#[derive(Debug, Clone)]
pub struct ScefBatchConfig {
    pub layout: BackendLayout,
    pub gt_root: PathBuf,
    pub out_root: PathBuf,
    pub top_k: std::num::NonZeroUsize,
    pub drivable_class: String,
    pub splits: Vec<Split>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScefSummary {
    pub images: usize,
    pub pairs: usize,
    /// Images whose best proposal does not overlap the ground truth at all.
    pub zero_max_iou_images: Vec<String>,
    pub failed_images: usize,
    pub missing_classifications: Vec<MissingClassification>,
}

#[derive(Debug)]
pub struct ImageFailure<E> {
    pub image: String,
    pub error: E,
}

#[derive(Debug)]
pub struct ScefBatchOutcome {
    pub records: Vec<ScefRecord>,
    pub failures: Vec<ImageFailure<ScefError>>,
    pub summary: ScefSummary,
}

pub fn record_path(out_root: &Path, image: &str) -> PathBuf {
    out_root.join("scef").join(format!("{image}.json"))
}

/// Resolves a path recorded in the manifest, or falls back to
/// `<root>/<id>.<ext>` for the first extension that exists.
pub(crate) fn resolve_artifact(
    recorded: Option<&Path>,
    manifest_dir: &Path,
    root: &Path,
    id: &str,
    exts: &[&str],
) -> PathBuf {
    if let Some(p) = recorded {
        return crate::manifest::resolve_relative(p, manifest_dir);
    }
    exts.iter()
        .map(|ext| root.join(format!("{id}.{ext}")))
        .find(|p| p.exists())
        .unwrap_or_else(|| root.join(format!("{id}.{}", exts[0])))
}

fn process_one(
    id: &str,
    entry: &crate::manifest::ManifestEntry,
    manifest_dir: &Path,
    cfg: &ScefBatchConfig,
) -> Result<(ScefRecord, Vec<MissingClassification>), ScefError> {
    let missing = |kind, path: PathBuf| ScefError::MissingArtifact {
        image: id.to_string(),
        kind,
        path,
    };
    let proposals_path = entry
        .proposals_path
        .as_deref()
        .map(|p| crate::manifest::resolve_relative(p, manifest_dir))
        .unwrap_or_else(|| cfg.layout.proposals_path(id));
    let classifications_path = cfg.layout.classifications_path(id);
    let gt_path = resolve_artifact(
        entry.gt_path.as_deref(),
        manifest_dir,
        &cfg.gt_root,
        id,
        &["png", "json", "rle"],
    );
    for (kind, p) in [
        ("proposals", &proposals_path),
        ("classifications", &classifications_path),
        ("gt mask", &gt_path),
    ] {
        if !p.exists() {
            return Err(missing(kind, p.clone()));
        }
    }

    let doc = protocol::load_proposals(&proposals_path)?;
    let classes = protocol::load_classifications(&classifications_path)?;
    let gt = load_mask(&gt_path)?;
    let ranked = rank_by_area(&doc.to_proposals(), cfg.top_k);
    let joined = attach_classifications(&doc, ranked, &classes)?;
    let record = generate_finetune_pairs(&joined.proposals, &gt, &cfg.drivable_class)?;
    let out = record_path(&cfg.out_root, id);
    write_json_atomic(&out, &record).map_err(|source| ScefError::Io { path: out, source })?;
    Ok((record, joined.missing))
}

/// Runs pair generation for every manifest entry in `cfg.splits`. Failures
/// are collected per image; results follow manifest order.
pub fn batch_generate(
    manifest: &DatasetManifest,
    manifest_dir: &Path,
    cfg: &ScefBatchConfig,
) -> ScefBatchOutcome {
    let entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| cfg.splits.contains(&e.split))
        .collect();
    let results: Vec<_> = entries
        .par_iter()
        .map(|e| process_one(&e.id, e, manifest_dir, cfg))
        .collect();

    let mut outcome = ScefBatchOutcome {
        records: Vec::new(),
        failures: Vec::new(),
        summary: ScefSummary::default(),
    };
    for (entry, result) in entries.iter().zip(results) {
        match result {
            Ok((record, missing)) => {
                outcome.summary.images += 1;
                outcome.summary.pairs += record.pairs.len();
                if record.max_score() == 0.0 {
                    outcome
                        .summary
                        .zero_max_iou_images
                        .push(record.image.clone());
                }
                outcome.summary.missing_classifications.extend(missing);
                outcome.records.push(record);
            }
            Err(error) => {
                outcome.summary.failed_images += 1;
                outcome.failures.push(ImageFailure {
                    image: entry.id.clone(),
                    error,
                });
            }
        }
    }
    outcome
}
